"""Phase-space grid, distribution storage, densities, mass function and metric.

Spherically symmetric distributions are stored on a tensor grid of cells in
(r, s, mu) where s = |v| and mu is the cosine of the angle between x and v.
Then w = s*mu, l^2 = r^2 s^2 (1 - mu^2) and dv = 2 pi s^2 ds dmu, so that
momentum shells, annuli and strips are unions of whole cells.  The value in a
cell is constant; all moments below are exact integrals of that piecewise
constant function, except for the r-integrals containing e^lambda, which use
Gauss-Legendre quadrature on the exact piecewise cubic mass function.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DomainError, GridMismatchError, HorizonError, ParameterError

FOUR_PI = 4.0 * np.pi

# inner and outer radius of the momentum annulus used by the cap machine
ANNULUS_INNER = (1.0 / FOUR_PI) ** (1.0 / 3.0)
ANNULUS_OUTER = (25.0 / FOUR_PI) ** (1.0 / 3.0)

N_GAUSS_R = 8
_GL_R = np.polynomial.legendre.leggauss(N_GAUSS_R)
_GL_S = np.polynomial.legendre.leggauss(24)


def cube_diff(a, b):
    """b^3 - a^3 without cancellation."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return (b - a) * (b * b + a * b + a * a)


def theta_closed(b):
    """4 pi int_0^b u^2 sqrt(1+u^2) du in closed form."""
    b = np.asarray(b, dtype=float)
    return 0.5 * np.pi * (b * np.sqrt(1.0 + b * b) * (1.0 + 2.0 * b * b) - np.arcsinh(b))


def _energy_gauss(s0, s1):
    x, w = _GL_S
    half = 0.5 * (s1 - s0)
    u = 0.5 * (s1 + s0)[..., None] + half[..., None] * x
    return FOUR_PI * half * np.sum(w * u * u * np.sqrt(1.0 + u * u), axis=-1)


def shell_energy(s0, s1):
    """int_{s0 <= |v| <= s1} sqrt(1+|v|^2) dv, accurate for thin and wide shells."""
    s0, s1 = np.broadcast_arrays(np.asarray(s0, dtype=float), np.asarray(s1, dtype=float))
    gauss = (s1 <= 1.0) | (s1 - s0 <= 0.25 * s1)
    out = np.empty(s0.shape)
    out[gauss] = _energy_gauss(s0[gauss], s1[gauss])
    closed = ~gauss
    out[closed] = theta_closed(s1[closed]) - theta_closed(s0[closed])
    return out


def theta(b):
    """theta(b) = 4 pi int_0^b u^2 sqrt(1+u^2) du."""
    b = np.asarray(b, dtype=float)
    return shell_energy(np.zeros_like(b), b)


def solve_unit_energy(s_start: float, s_stop: float, tol: float = 1e-15) -> float:
    """Radius xi in (s_start, s_stop) with int_{s_start<=|v|<=xi} sqrt(1+|v|^2) dv = 1."""
    lo, hi = float(s_start), float(s_stop)
    if shell_energy(lo, hi) < 1.0:
        raise DomainError("shell too thin to carry unit energy")
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if shell_energy(s_start, mid) < 1.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _as_edges(a, name):
    a = np.array(a, dtype=float)
    if a.ndim != 1 or a.size < 2:
        raise DomainError(f"{name} must be a 1d array of at least two edges")
    if not np.all(np.diff(a) > 0):
        raise DomainError(f"{name} must be strictly increasing")
    a.setflags(write=False)
    return a


def _merge_edges(edges, new, rtol=1e-13):
    new = np.atleast_1d(np.asarray(new, dtype=float))
    new = new[(new > edges[0]) & (new < edges[-1])]
    keep = []
    for x in np.unique(new):
        j = np.searchsorted(edges, x)
        near = min(abs(edges[j] - x), abs(edges[j - 1] - x))
        if near > rtol * max(1.0, abs(x)):
            keep.append(x)
    merged = np.union1d(edges, keep)
    parent = np.searchsorted(edges, merged[:-1], side="right") - 1
    return merged, parent


@dataclass(frozen=True, eq=False)
class PhaseGrid:
    """Cell edges in r (from 0), s = |v| (from 0) and mu in [-1, 1]."""

    r_edges: np.ndarray
    s_edges: np.ndarray
    mu_edges: np.ndarray = field(default_factory=lambda: np.array([-1.0, 1.0]))

    def __post_init__(self):
        object.__setattr__(self, "r_edges", _as_edges(self.r_edges, "r_edges"))
        object.__setattr__(self, "s_edges", _as_edges(self.s_edges, "s_edges"))
        object.__setattr__(self, "mu_edges", _as_edges(self.mu_edges, "mu_edges"))
        if self.r_edges[0] != 0.0 or self.s_edges[0] != 0.0:
            raise DomainError("r and s edges must start at 0")
        if self.mu_edges[0] != -1.0 or self.mu_edges[-1] != 1.0:
            raise DomainError("mu edges must span [-1, 1]")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.r_edges.size - 1, self.s_edges.size - 1, self.mu_edges.size - 1)

    @property
    def n_r(self) -> int:
        return self.r_edges.size - 1

    @property
    def r_mid(self) -> np.ndarray:
        return 0.5 * (self.r_edges[1:] + self.r_edges[:-1])

    @property
    def s_mid(self) -> np.ndarray:
        return 0.5 * (self.s_edges[1:] + self.s_edges[:-1])

    @cached_property
    def shell_volume(self) -> np.ndarray:
        """x-volume of each radial cell."""
        return FOUR_PI / 3.0 * cube_diff(self.r_edges[:-1], self.r_edges[1:])

    @cached_property
    def v_volume(self) -> np.ndarray:
        """v-volume of each (s, mu) cell, shape (n_s, n_mu)."""
        ds3 = cube_diff(self.s_edges[:-1], self.s_edges[1:])
        return (2.0 * np.pi / 3.0) * np.outer(ds3, np.diff(self.mu_edges))

    @cached_property
    def v_energy(self) -> np.ndarray:
        """int sqrt(1+|v|^2) dv over each (s, mu) cell."""
        e = shell_energy(self.s_edges[:-1], self.s_edges[1:])
        return 0.5 * np.outer(e, np.diff(self.mu_edges))

    @cached_property
    def r_quad(self) -> tuple[np.ndarray, np.ndarray]:
        """Gauss-Legendre nodes and weights per radial cell, shape (n_r, N_GAUSS_R)."""
        x, w = _GL_R
        a, b = self.r_edges[:-1, None], self.r_edges[1:, None]
        return 0.5 * (a + b) + 0.5 * (b - a) * x, 0.5 * (b - a) * w

    def same_as(self, other: "PhaseGrid") -> bool:
        return (
            self.shape == other.shape
            and np.array_equal(self.r_edges, other.r_edges)
            and np.array_equal(self.s_edges, other.s_edges)
            and np.array_equal(self.mu_edges, other.mu_edges)
        )

    def require_same(self, other: "PhaseGrid") -> None:
        if not self.same_as(other):
            raise GridMismatchError("distributions live on different grids")

    def with_s_nodes(self, nodes) -> tuple["PhaseGrid", np.ndarray]:
        """Insert |v| edges; returns the new grid and the parent cell of each new cell."""
        edges, parent = _merge_edges(self.s_edges, nodes)
        return PhaseGrid(self.r_edges, edges, self.mu_edges), parent

    def with_r_nodes(self, nodes) -> tuple["PhaseGrid", np.ndarray]:
        edges, parent = _merge_edges(self.r_edges, nodes)
        return PhaseGrid(edges, self.s_edges, self.mu_edges), parent

    def locate_s(self, s: float) -> int:
        """Index of the s-edge closest to s."""
        return int(np.argmin(np.abs(self.s_edges - s)))

    def to_dict(self) -> dict:
        return {"r": self.r_edges.tolist(), "v": self.s_edges.tolist(), "mu": self.mu_edges.tolist()}


def velocity_edges(s_max: float, n_s: int, s_core: float = 2.0, core_frac: float = 0.5,
                   breaks=(ANNULUS_INNER, ANNULUS_OUTER)) -> np.ndarray:
    """Uniform |v| cells up to s_core, geometric cells beyond, plus break points."""
    if s_max <= s_core:
        edges = np.linspace(0.0, s_max, n_s + 1)
    else:
        n_core = max(2, int(round(core_frac * n_s)))
        n_out = max(1, n_s - n_core)
        core = np.linspace(0.0, s_core, n_core + 1)
        outer = np.geomspace(s_core, s_max, n_out + 1)[1:]
        edges = np.concatenate([core, outer])
    edges, _ = _merge_edges(edges, [b for b in breaks if 0.0 < b < edges[-1]])
    return edges


def make_grid(r_max: float, n_r: int, s_max: float, n_s: int, n_mu: int = 1,
              s_core: float = 2.0, r_breaks=(), s_breaks=None) -> PhaseGrid:
    r_edges = np.linspace(0.0, r_max, n_r + 1)
    if len(r_breaks):
        r_edges, _ = _merge_edges(r_edges, r_breaks)
    breaks = (ANNULUS_INNER, ANNULUS_OUTER) if s_breaks is None else s_breaks
    s_edges = velocity_edges(s_max, n_s, s_core=s_core, breaks=breaks)
    return PhaseGrid(r_edges, s_edges, np.linspace(-1.0, 1.0, n_mu + 1))


@dataclass(frozen=True, eq=False)
class DistributionFunction:
    """Cellwise constant f >= 0 on a PhaseGrid together with the exponent k."""

    grid: PhaseGrid
    values: np.ndarray
    k: float = 1.0

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise DomainError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)) or np.any(v < 0.0):
            raise DomainError("distribution values must be finite and non-negative")
        if not 0.0 < self.k <= 2.0:
            raise DomainError("k must lie in (0, 2]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "k", float(self.k))

    def with_values(self, values) -> "DistributionFunction":
        return DistributionFunction(self.grid, values, self.k)

    def on_grid(self, grid: PhaseGrid) -> "DistributionFunction":
        """Exact transfer to a refinement of this grid (every new edge set contains the old)."""
        for old, new in ((self.grid.r_edges, grid.r_edges), (self.grid.s_edges, grid.s_edges),
                         (self.grid.mu_edges, grid.mu_edges)):
            if not np.all(np.isin(old, new)):
                raise GridMismatchError("target grid is not a refinement")
        ir = np.searchsorted(self.grid.r_edges, grid.r_edges[:-1], side="right") - 1
        js = np.searchsorted(self.grid.s_edges, grid.s_edges[:-1], side="right") - 1
        lm = np.searchsorted(self.grid.mu_edges, grid.mu_edges[:-1], side="right") - 1
        return DistributionFunction(grid, self.values[np.ix_(ir, js, lm)], self.k)

    @staticmethod
    def zeros(grid: PhaseGrid, k: float = 1.0) -> "DistributionFunction":
        return DistributionFunction(grid, np.zeros(grid.shape), k)


@dataclass(frozen=True)
class RadialProfile:
    r: np.ndarray
    rho: np.ndarray
    m: np.ndarray
    lam: np.ndarray
    mu: np.ndarray | None = None
    p: np.ndarray | None = None

    def columns(self) -> dict[str, np.ndarray | None]:
        return {"r": self.r, "rho": self.rho, "m": self.m, "lambda": self.lam, "mu": self.mu, "p": self.p}


def density(f: DistributionFunction) -> np.ndarray:
    """rho per radial cell: int sqrt(1+|v|^2) f dv."""
    return np.einsum("ijl,jl->i", f.values, f.grid.v_energy)


def mass_function(rho, r_edges) -> np.ndarray:
    """m(r) = 4 pi int_0^r s^2 rho ds at the radial edges, for cellwise constant rho."""
    r_edges = np.asarray(r_edges, dtype=float)
    rho = np.asarray(rho, dtype=float)
    vol = FOUR_PI / 3.0 * cube_diff(r_edges[:-1], r_edges[1:])
    return np.concatenate([[0.0], np.cumsum(rho * vol)])


def mass_at(rho, r_edges, r) -> np.ndarray:
    """Exact m(r) at arbitrary radii for cellwise constant rho."""
    r_edges = np.asarray(r_edges, dtype=float)
    rho = np.asarray(rho, dtype=float)
    r = np.asarray(r, dtype=float)
    m_edges = mass_function(rho, r_edges)
    idx = np.clip(np.searchsorted(r_edges, r, side="right") - 1, 0, rho.size - 1)
    rr = np.minimum(r, r_edges[-1])
    return m_edges[idx] + FOUR_PI / 3.0 * rho[idx] * cube_diff(r_edges[idx], rr)


def two_m_over_r(m, r) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(r > 0, 2.0 * m / np.where(r > 0, r, 1.0), 0.0)
    return q


def lambda_of_m(m, r) -> np.ndarray:
    """lambda = -1/2 ln(1 - 2m/r); the limit 2m/r -> 0 is used at r = 0."""
    q = two_m_over_r(m, r)
    if np.any(q >= 1.0):
        raise HorizonError(f"2m/r reaches {float(np.max(q)):.6g} >= 1")
    return -0.5 * np.log1p(-q)


def max_two_m_over_r(rho, r_edges) -> float:
    """Exact max of 2m/r for cellwise constant rho; 2m/r is convex in r inside a cell
    when the cell's inner mass exceeds its uniform-density share and increasing otherwise,
    so the maximum sits on an edge."""
    r_edges = np.asarray(r_edges, dtype=float)
    m = mass_function(rho, r_edges)
    return float(np.max(two_m_over_r(m[1:], r_edges[1:])))


def exp_lambda_nodes(rho, grid: PhaseGrid) -> np.ndarray:
    """e^lambda at the radial quadrature nodes."""
    rq, _ = grid.r_quad
    m = mass_at(rho, grid.r_edges, rq)
    q = 2.0 * m / rq
    if np.any(q >= 1.0):
        raise HorizonError(f"2m/r reaches {float(np.max(q)):.6g} >= 1")
    return 1.0 / np.sqrt(1.0 - q)


def x_weights(rho, grid: PhaseGrid) -> np.ndarray:
    """int over each radial cell of 4 pi r^2 e^lambda dr."""
    rq, wq = grid.r_quad
    return np.sum(wq * FOUR_PI * rq * rq * exp_lambda_nodes(rho, grid), axis=1)


def radial_profile(f: DistributionFunction) -> RadialProfile:
    """Profile sampled at the radial cell midpoints."""
    g = f.grid
    rho = density(f)
    r = g.r_mid
    m = mass_at(rho, g.r_edges, r)
    return RadialProfile(r=r, rho=rho, m=m, lam=lambda_of_m(m, r))


@dataclass(frozen=True)
class AdmissibleParams:
    """Mass M, compactness bound beta, density cap sigma0 and exponent k."""

    M: float
    beta: float
    k: float = 1.0
    sigma0: float | None = None

    def __post_init__(self):
        if not self.M > 0:
            raise ParameterError("M must be positive")
        if not 0.0 < self.beta < 0.5:
            raise ParameterError("beta must lie in (0, 1/2)")
        if not 0.0 < self.k <= 2.0:
            raise ParameterError("k must lie in (0, 2]")
        cap = self.sigma0_max
        if self.sigma0 is None:
            object.__setattr__(self, "sigma0", cap)
        elif not 0.0 < self.sigma0 <= cap * (1.0 + 1e-12):
            raise ParameterError(f"sigma0 must lie in (0, {cap:.8g}]")

    @property
    def sigma0_max(self) -> float:
        return min(1.0, 3.0 * self.beta**3 / (FOUR_PI * self.M**2))

    @property
    def c_beta(self) -> float:
        return 1.0 / np.sqrt(1.0 - 2.0 * self.beta)

    @property
    def sigma_M(self) -> float:
        return 3.0 / (32.0 * np.pi * self.M**2)

    @property
    def P0_terms(self) -> tuple[float, float, float, float]:
        k, M, b = self.k, self.M, self.beta
        return (
            10.0,
            ((1.0 + M) / FOUR_PI) ** (4.0 / 3.0),
            64.0 * (k + 1.0) ** 2 / (1.0 - 2.0 * b),
            256.0 * (k + 1.0) ** 2 * M**4 / (1.0 - 2.0 * b) ** 2,
        )

    @property
    def P0(self) -> float:
        return max(self.P0_terms)

    def to_dict(self) -> dict:
        return {"M": self.M, "beta": self.beta, "k": self.k, "sigma0": self.sigma0}


@dataclass(frozen=True)
class AdmissibilityReport:
    mass: float
    max_rho: float
    max_two_m_over_r: float
    nonnegative: bool
    mass_ok: bool
    cap_ok: bool
    compact_ok: bool
    rho_le_one: bool

    @property
    def admissible(self) -> bool:
        """Membership in the set with mass M and density cap sigma0."""
        return self.nonnegative and self.mass_ok and self.cap_ok

    @property
    def admissible_relaxed(self) -> bool:
        """Membership in the set with mass M, m/r <= beta and rho <= 1."""
        return self.nonnegative and self.mass_ok and self.compact_ok and self.rho_le_one

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["admissible"] = self.admissible
        d["admissible_relaxed"] = self.admissible_relaxed
        return d


MASS_RTOL = 1e-6
CAP_ATOL = 1e-9


def check_admissible(f: DistributionFunction, p: AdmissibleParams) -> AdmissibilityReport:
    rho = density(f)
    mass = float(np.sum(rho * f.grid.shell_volume))
    tmr = max_two_m_over_r(rho, f.grid.r_edges)
    max_rho = float(np.max(rho))
    return AdmissibilityReport(
        mass=mass,
        max_rho=max_rho,
        max_two_m_over_r=tmr,
        nonnegative=bool(np.all(f.values >= 0.0)),
        mass_ok=abs(mass - p.M) <= MASS_RTOL * p.M,
        cap_ok=max_rho <= p.sigma0 + CAP_ATOL,
        compact_ok=tmr <= 2.0 * p.beta * (1.0 + 1e-9),
        rho_le_one=max_rho <= 1.0 + CAP_ATOL,
    )


def two_m_over_r_bound(sigma: float, M: float) -> float:
    """Uniform bound (sigma/sigma_M)^(1/3) on 2m/r for densities below sigma."""
    sigma_M = 3.0 / (32.0 * np.pi * M**2)
    if not 0.0 < sigma <= sigma_M * (1.0 + 1e-14):
        raise DomainError("sigma must lie in (0, sigma_M]")
    return min(1.0, (sigma / sigma_M) ** (1.0 / 3.0))
