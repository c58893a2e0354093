"""Seeded random distributions with prescribed shell densities, for property checks."""
from __future__ import annotations

import numpy as np

from .errors import ParameterError
from .grid import AdmissibleParams, DistributionFunction, PhaseGrid, max_two_m_over_r


def radial_shape(grid: PhaseGrid, rng: np.random.Generator, support: float) -> np.ndarray:
    """Random positive profile on the inner `support` fraction of the radial range."""
    r = grid.r_mid / grid.r_edges[-1]
    shape = np.zeros_like(r)
    for _ in range(rng.integers(1, 4)):
        c = rng.uniform(0.0, support)
        w = rng.uniform(0.05, 0.5) * support
        shape += rng.uniform(0.2, 1.0) * np.exp(-0.5 * ((r - c) / w) ** 2)
    shape += 0.05 * rng.uniform(size=r.size)
    shape[r > support] = 0.0
    return shape


def fill_to_mass(shape: np.ndarray, volumes: np.ndarray, M: float, cap: float) -> np.ndarray:
    """rho = min(c * shape, cap) with c chosen so that sum(rho * volumes) = M."""
    if cap * float(volumes[shape > 0].sum()) <= M:
        raise ParameterError("support too small to carry the mass below the cap")
    lo, hi = 0.0, 1.0
    while float(np.minimum(hi * shape, cap) @ volumes) < M:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if float(np.minimum(mid * shape, cap) @ volumes) < M:
            lo = mid
        else:
            hi = mid
    rho = np.minimum(hi * shape, cap)
    return rho * (M / float(rho @ volumes))


def velocity_profile(grid: PhaseGrid, rng: np.random.Generator, n_r: int, s_scale: float) -> np.ndarray:
    """Random positive weights in (s, mu), smooth in s, per radial cell."""
    s = grid.s_mid
    temp = s_scale * rng.uniform(0.3, 1.5, size=(n_r, 1, 1))
    base = np.exp(-(s[None, :, None] / temp) ** 2)
    noise = rng.uniform(0.5, 1.5, size=(n_r, s.size, grid.shape[2]))
    return base * noise


def with_densities(grid: PhaseGrid, k: float, rho: np.ndarray, weights: np.ndarray) -> DistributionFunction:
    """Rescale non-negative weights shell by shell so that the densities equal rho."""
    ew = grid.v_energy
    norm = np.einsum("ijl,jl->i", weights, ew)
    scale = np.divide(rho, norm, out=np.zeros_like(rho), where=norm > 0)
    return DistributionFunction(grid, weights * scale[:, None, None], k)


def random_admissible(grid: PhaseGrid, params: AdmissibleParams, rng: np.random.Generator,
                      support: float | None = None, s_scale: float = 0.3) -> DistributionFunction:
    """f >= 0 with mass M and density below sigma0."""
    support = rng.uniform(0.5, 1.0) if support is None else support
    for _ in range(50):
        shape = radial_shape(grid, rng, support)
        try:
            rho = fill_to_mass(shape, grid.shell_volume, params.M, params.sigma0 * (1 - 1e-12))
        except ParameterError:
            support = min(1.0, support * 1.25)
            continue
        return with_densities(grid, params.k, rho, velocity_profile(grid, rng, grid.n_r, s_scale))
    raise ParameterError("could not build an admissible sample on this grid")


def random_relaxed(grid: PhaseGrid, params: AdmissibleParams, rng: np.random.Generator,
                   spike: bool = True, tail: str | None = None, support: float | None = None,
                   s_scale: float = 0.3) -> DistributionFunction:
    """f with mass M, rho <= 1 and m/r <= beta, optionally with cells above 1 near v = 0
    and an energy tail beyond |v| = P0.

    tail "1" puts energy above the trigger at P0, tail "3" puts slightly less energy
    than the trigger far beyond P0 so that the trigger is first met further out.
    """
    P0 = params.P0
    s_edges = grid.s_edges
    if tail is not None and s_edges[-1] < 4.0 * P0 + 2.0:
        raise ParameterError("velocity grid too short for tail samples")
    for _ in range(100):
        sup = rng.uniform(0.4, 1.0) if support is None else support
        shape = radial_shape(grid, rng, sup)
        try:
            rho = fill_to_mass(shape, grid.shell_volume, params.M, 1.0 - 1e-9)
        except ParameterError:
            continue
        if max_two_m_over_r(rho, grid.r_edges) > 2.0 * params.beta:
            continue
        weights = velocity_profile(grid, rng, grid.n_r, s_scale)
        ew = grid.v_energy
        base = np.einsum("ijl,jl->i", weights, ew)
        parts = [weights / base[:, None, None]]
        fracs = [1.0]
        if spike:
            w = np.zeros_like(weights)
            w[:, 0, :] = rng.uniform(0.5, 1.5, size=(grid.n_r, grid.shape[2]))
            w /= np.einsum("ijl,jl->i", w, ew)[:, None, None]
            parts.append(w)
            fracs.append(rng.uniform(0.1, 0.6))
        if tail is not None:
            if tail == "1":
                lo, hi, target = P0, 1.5 * P0, rng.uniform(1.1, 2.0) * P0**-0.25
            elif tail == "3":
                lo, hi = 2.2 * P0, 3.9 * P0
                target = rng.uniform(0.85, 0.97) * P0**-0.25
            else:
                raise ParameterError(f"unknown tail kind {tail!r}")
            sel = (s_edges[:-1] >= lo) & (s_edges[:-1] < hi)
            if not np.any(sel):
                raise ParameterError("no velocity cells in the tail window")
            w = np.zeros_like(weights)
            w[:, sel, :] = rng.uniform(0.5, 1.5, size=(grid.n_r, int(sel.sum()), grid.shape[2]))
            w /= np.einsum("ijl,jl->i", w, ew)[:, None, None]
            parts.append(w)
            fracs.append(target / params.M)
        fracs = np.array(fracs)
        fracs[0] = max(0.0, 1.0 - fracs[1:].sum())
        mix = sum(fr * p for fr, p in zip(fracs, parts))
        return with_densities(grid, params.k, rho, mix)
    raise ParameterError("could not build a relaxed sample on this grid")


def uniform_ball(grid: PhaseGrid, k: float, sigma: float, radius: float, s_top: float | None = None
                 ) -> DistributionFunction:
    """Uniform density sigma on r < radius (a grid edge), carried by the lowest velocity cells."""
    rho = np.where(grid.r_edges[1:] <= radius * (1 + 1e-12), sigma, 0.0)
    weights = np.zeros(grid.shape)
    j_top = grid.s_edges.size - 1 if s_top is None else int(np.searchsorted(grid.s_edges, s_top))
    weights[:, :j_top, :] = 1.0
    return with_densities(grid, k, rho, weights)
