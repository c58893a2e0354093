"""Operators that lower D: excess capping, tail compactification, gap removal,
restriction with rescaling.

All of them act on whole grid cells.  Thresholds in |v| are inserted as new
cell edges when `adaptive` is set (exact refinement of the input), otherwise
they are snapped to the nearest existing edge and the snapping distance is
recorded in the trace.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, PreconditionError
from .functional import D_value, phi, scale, shell_casimir_content
from .grid import (
    ANNULUS_INNER,
    ANNULUS_OUTER,
    AdmissibleParams,
    DistributionFunction,
    PhaseGrid,
    cube_diff,
    density,
    shell_energy,
    solve_unit_energy,
    x_weights,
)

CAP_TOL = 1e-12


@dataclass
class MachineTrace:
    op: str
    D_before: float
    D_after: float
    rho_max_dev: float
    P_used: float | None = None
    case: str | None = None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"op": self.op, "D_before": self.D_before, "D_after": self.D_after,
               "rho_max_dev": self.rho_max_dev, "P_used": self.P_used, "case": self.case}
        out.update({k: v for k, v in self.details.items()})
        return out


def _rho_dev(f: DistributionFunction, g: DistributionFunction) -> float:
    return float(np.max(np.abs(density(f) - density(g)))) if f.grid.n_r == g.grid.n_r else float("nan")


def band_energy_weights(grid: PhaseGrid, lo: float, hi: float) -> np.ndarray:
    """int_{lo<=|v|<=hi} sqrt(1+|v|^2) dv restricted to each (s, mu) cell."""
    s0, s1 = grid.s_edges[:-1], grid.s_edges[1:]
    a = np.clip(lo, s0, s1)
    b = np.clip(hi, s0, s1)
    e = np.where(b > a, shell_energy(a, b), 0.0)
    return 0.5 * np.outer(e, np.diff(grid.mu_edges))


def band_energy(f: DistributionFunction, lo: float, hi: float = np.inf) -> np.ndarray:
    """Per radial cell: int_{lo<=|v|<=hi} sqrt(1+|v|^2) f dv."""
    return np.einsum("ijl,jl->i", f.values, band_energy_weights(f.grid, lo, hi))


def tail_total(f: DistributionFunction, P: float) -> float:
    """int int_{|v|>=P} sqrt(1+|v|^2) f dx dv, exact for the cellwise constant f."""
    return float(band_energy(f, P) @ f.grid.shell_volume)


def _has_edge(edges, x, rtol=1e-12):
    return bool(np.min(np.abs(edges - x)) <= rtol * max(1.0, x))


def cap_excess(f: DistributionFunction) -> tuple[DistributionFunction, MachineTrace]:
    """Cut f down to 1 and move the excess energy onto the low part of a fixed annulus."""
    g = f.grid
    rho = density(f)
    if np.max(rho) > 1.0 + CAP_TOL:
        raise PreconditionError(f"density {float(np.max(rho)):.6g} exceeds 1")
    if not (_has_edge(g.s_edges, ANNULUS_INNER) and _has_edge(g.s_edges, ANNULUS_OUTER)):
        raise PreconditionError("velocity grid does not resolve the annulus edges")
    s0, s1 = g.s_edges[:-1], g.s_edges[1:]
    tol = 1e-12
    in_H = (s0 >= ANNULUS_INNER - tol) & (s1 <= ANNULUS_OUTER + tol)
    ew = g.v_energy
    vals = f.values.copy()
    excess = vals > 1.0
    rho_D = np.einsum("ijl,jl->i", np.where(excess, vals - 1.0, 0.0), ew)
    low = in_H[None, :, None] & (f.values < 0.5)
    low_energy = np.einsum("ijl,jl->i", low.astype(float), ew)
    if np.any((rho_D > 0) & (low_energy <= 0)):
        raise PreconditionError("no low cells in the annulus to absorb the excess")
    uplift = np.divide(rho_D, low_energy, out=np.zeros_like(rho_D), where=rho_D > 0)
    vals[excess] = 1.0
    vals += np.where(low, uplift[:, None, None], 0.0)
    out = f.with_values(vals)
    if not np.any(excess):
        d = D_value(f)
        return f, MachineTrace("cap_excess", d, d, 0.0, details={"cells_capped": 0})
    trace = MachineTrace("cap_excess", D_value(f), D_value(out), _rho_dev(f, out),
                         details={"cells_capped": int(np.count_nonzero(excess)),
                                  "max_uplift": float(np.max(uplift)),
                                  "annulus_volume": float(np.sum(g.v_volume[in_H]))})
    return out, trace


def annulus_volume(grid: PhaseGrid) -> float:
    s0, s1 = grid.s_edges[:-1], grid.s_edges[1:]
    tol = 1e-12
    in_H = (s0 >= ANNULUS_INNER - tol) & (s1 <= ANNULUS_OUTER + tol)
    return float(np.sum(grid.v_volume[in_H]))


def strip_casimir(f: DistributionFunction, edges: np.ndarray) -> np.ndarray:
    """int int_{edges[j]<=|v|<=edges[j+1]} e^lambda phi(f) dx dv for consecutive strips."""
    g = f.grid
    w = x_weights(density(f), g)
    content = np.einsum("i,ijl,jl->j", w, phi(f.values, f.k), g.v_volume)
    cum = np.concatenate([[0.0], np.cumsum(content)])
    s0, s1 = g.s_edges[:-1], g.s_edges[1:]
    j = np.clip(np.searchsorted(g.s_edges, edges, side="right") - 1, 0, s0.size - 1)
    frac = np.clip(cube_diff(s0[j], np.minimum(edges, s1[j])) / cube_diff(s0[j], s1[j]), 0.0, 1.0)
    at = np.where(edges >= g.s_edges[-1], cum[-1], cum[j] + content[j] * frac)
    return np.diff(at)


def _snap(grid: PhaseGrid, x: float) -> float:
    return float(grid.s_edges[grid.locate_s(x)])


def tail_rearrange(f: DistributionFunction, P: float, params: AdmissibleParams, adaptive: bool = True,
                   profile: str = "auto") -> tuple[DistributionFunction, MachineTrace]:
    """Move the energy beyond |v| = P into a strip near sqrt(P) and refill [P, P+1]
    with the energy taken out of that strip.

    profile "indicator" places both refills on the unit-energy shells [P, xi1] and
    [start, xi2]; "spread" spreads them uniformly over [P, P+1] and the whole strip.
    Both keep the density per shell, the cap f <= 1 and the bound on D.  "auto"
    uses indicators whenever xi1 and xi2 are resolvable in floating point.
    """
    if np.max(f.values) > 1.0 + CAP_TOL:
        raise PreconditionError("tail machine needs f <= 1")
    if P < params.P0 * (1.0 - 1e-12):
        raise PreconditionError(f"P = {P} is below P0 = {params.P0}")
    M = params.M
    M_gt = tail_total(f, P)
    if M_gt <= 0 or P**0.25 * M_gt < 1.0 - 1e-12:
        raise PreconditionError("tail trigger P^(1/4) M_> >= 1 fails")
    N = int(np.floor((1.0 + M) * P / M_gt))
    delta = 1.0 / N
    q = np.sqrt(P)
    t = q / 2.0 + np.arange(N + 1) * delta * q
    strips = strip_casimir(f, t)
    i = int(np.argmax(strips))
    lo_i, hi_i = float(t[i]), float(t[i + 1])
    xi1 = solve_unit_energy(P, P + 1.0)
    xi2 = solve_unit_energy(lo_i, hi_i)
    resolvable = (xi1 - P > 1e-9 * P) and (xi2 - lo_i > 1e-9 * lo_i)
    if profile == "auto":
        profile = "indicator" if (adaptive and resolvable) else "spread"
    if profile not in ("indicator", "spread"):
        raise DomainError(f"unknown profile {profile!r}")
    if profile == "indicator" and not (adaptive and resolvable):
        raise PreconditionError("indicator profile needs adaptive nodes and resolvable xi1, xi2")
    band_top = xi1 if profile == "indicator" else P + 1.0
    strip_top = xi2 if profile == "indicator" else hi_i
    if adaptive:
        grid, _ = f.grid.with_s_nodes([P, P + 1.0, lo_i, hi_i, band_top, strip_top])
        work = f.on_grid(grid)
        cut, top, s_lo, s_hi, b_top, st_top = P, P + 1.0, lo_i, hi_i, band_top, strip_top
    else:
        grid = f.grid
        work = f
        cut, top, s_lo, s_hi = (_snap(grid, x) for x in (P, P + 1.0, lo_i, hi_i))
        j = grid.locate_s(cut)
        if top <= cut:
            top = float(grid.s_edges[min(j + 1, grid.s_edges.size - 1)])
        if s_hi <= s_lo:
            s_hi = float(grid.s_edges[min(grid.locate_s(s_lo) + 1, grid.s_edges.size - 1)])
        b_top, st_top = top, s_hi
    snap_dev = max(abs(cut - P), abs(top - P - 1.0), abs(s_lo - lo_i), abs(s_hi - hi_i))
    s0, s1 = grid.s_edges[:-1], grid.s_edges[1:]
    tol = 1e-12
    beyond_cut = s0 >= cut * (1 - tol)
    in_band = beyond_cut & (s1 <= b_top * (1 + tol))
    in_strip = (s0 >= s_lo * (1 - tol)) & (s1 <= s_hi * (1 + tol))
    in_fill = in_strip & (s1 <= st_top * (1 + tol))
    ew = grid.v_energy
    rho_gt = np.einsum("ijl,jl->i", work.values[:, beyond_cut], ew[beyond_cut])
    rho_i = np.einsum("ijl,jl->i", work.values[:, in_strip], ew[in_strip])
    e_band = float(np.sum(ew[in_band]))
    e_fill = float(np.sum(ew[in_fill]))
    vals = work.values.copy()
    vals[:, beyond_cut] = 0.0
    vals[:, in_strip] = 0.0
    vals[:, in_band] = (rho_i / e_band)[:, None, None]
    vals[:, in_fill] = (rho_gt / e_fill)[:, None, None]
    out = DistributionFunction(grid, vals, f.k)
    algu = P**0.25 * float(band_energy(out, cut, top) @ grid.shell_volume)
    trace = MachineTrace(
        "tail_rearrange", D_value(f), D_value(out), _rho_dev(f, out), P_used=float(P),
        details={"N": N, "strip": i, "strip_edges": [lo_i, hi_i], "xi1": xi1, "xi2": xi2,
                 "profile": profile, "M_gt": M_gt, "snap_deviation": snap_dev, "algu": algu},
    )
    return out, trace


class _TailCurve:
    """P -> P^(1/4) int int_{|v|>=P} E f, with the x-integral folded in once."""

    def __init__(self, f: DistributionFunction):
        g = f.grid
        self.s0, self.s1 = g.s_edges[:-1], g.s_edges[1:]
        self.c = 0.5 * np.einsum("i,ijl,l->j", g.shell_volume, f.values, np.diff(g.mu_edges))

    def __call__(self, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        a = np.clip(s[:, None], self.s0, self.s1)
        e = np.where(self.s1 > a, shell_energy(a, np.broadcast_to(self.s1, a.shape)), 0.0)
        return s**0.25 * (e @ self.c)


def first_crossing(f: DistributionFunction, P0: float, tol: float = 1e-12) -> float | None:
    """First P > P0 with P^(1/4) int int_{|v|>=P} E f = 1, or None when the function stays <= 1.

    Inside a cell, log of P^(1/4) T(P) is concave (T is a positive concave function of P
    there), so each cell is scanned by locating its maximum with a golden-section search
    and, when that maximum exceeds 1, bisecting on the increasing branch.
    """
    edges = f.grid.s_edges
    _tail_phi = _TailCurve(f)
    start = np.searchsorted(edges, P0, side="right") - 1
    gr = (np.sqrt(5.0) - 1.0) / 2.0
    for j in range(max(start, 0), edges.size - 1):
        lo, hi = max(edges[j], P0), edges[j + 1]
        if hi <= lo:
            continue
        a, b = lo, hi
        c, d = b - gr * (b - a), a + gr * (b - a)
        fc, fd = _tail_phi(c)[0], _tail_phi(d)[0]
        for _ in range(120):
            if b - a <= tol * b:
                break
            if fc < fd:
                a, c, fc = c, d, fd
                d = a + gr * (b - a)
                fd = _tail_phi(d)[0]
            else:
                b, d, fd = d, c, fc
                c = b - gr * (b - a)
                fc = _tail_phi(c)[0]
        cands = np.array([lo, 0.5 * (a + b), hi])
        vals = _tail_phi(cands)
        k = int(np.argmax(vals))
        if vals[k] <= 1.0:
            continue
        top = cands[k]
        left = lo
        if _tail_phi(left)[0] > 1.0:
            return float(left)
        while top - left > tol * top:
            mid = 0.5 * (left + top)
            if _tail_phi(mid)[0] > 1.0:
                top = mid
            else:
                left = mid
        return float(top)
    return None


def improve_tail(f: DistributionFunction, params: AdmissibleParams, adaptive: bool = True,
                 profile: str = "auto") -> tuple[DistributionFunction, MachineTrace]:
    """Cap at 1, then compactify the |v| tail according to where P^(1/4) T(P) first hits 1."""
    D0 = D_value(f)
    capped, cap_trace = cap_excess(f)
    P0 = params.P0
    phi0 = P0**0.25 * tail_total(capped, P0)
    details = {"cap": cap_trace.to_dict(), "phi_P0": phi0}
    if phi0 >= 1.0:
        out, tr = tail_rearrange(capped, P0, params, adaptive, profile)
        case, P = "1", P0
    else:
        P_hat = first_crossing(capped, P0)
        if P_hat is None:
            return capped, MachineTrace("improve_tail", D0, cap_trace.D_after, _rho_dev(f, capped),
                                        P_used=None, case="2", details=details)
        out, tr = tail_rearrange(capped, P_hat, params, adaptive, profile)
        case, P = "3", P_hat
    details["tail"] = tr.to_dict()
    return out, MachineTrace("improve_tail", D0, tr.D_after, _rho_dev(f, out), P_used=float(P),
                             case=case, details=details)


def _edge_index(edges, x):
    j = int(np.argmin(np.abs(edges - x)))
    if abs(edges[j] - x) > 1e-12 * max(1.0, x):
        raise PreconditionError(f"radius {x} is not a grid edge")
    return j


def remove_gap(f: DistributionFunction, a: float, b: float) -> tuple[DistributionFunction, MachineTrace]:
    """Close an empty shell a < r < b by pulling the outer matter inward.

    The outer part is moved along r' = (r^3 - (b^3 - a^3))^(1/3), which keeps every
    cell's x-volume, so density per shell, total mass and m as a function of the
    enclosed volume are all unchanged while 2m/r grows on the moved part.
    """
    g = f.grid
    ia, ib = _edge_index(g.r_edges, a), _edge_index(g.r_edges, b)
    if not 0 < ia < ib:
        raise PreconditionError("need 0 < a < b")
    if np.any(f.values[ia:ib] > 0):
        raise PreconditionError("f does not vanish on the gap")
    D0 = D_value(f)
    outer = f.values[ib:]
    if not np.any(outer > 0):
        return f, MachineTrace("remove_gap", D0, D0, 0.0, details={"moved_mass": 0.0})
    if np.any(shell_casimir_content(f)[ib:] > 0):
        raise PreconditionError("outer shells carry positive Casimir content")
    a3 = a**3
    moved = np.cbrt(a3 + cube_diff(b, g.r_edges[ib:]))
    r_edges = np.concatenate([g.r_edges[: ia + 1], moved[1:]])
    grid = PhaseGrid(r_edges, g.s_edges, g.mu_edges)
    vals = np.concatenate([f.values[:ia], outer], axis=0)
    out = DistributionFunction(grid, vals, f.k)
    rho_before = density(f)
    rho_after = density(out)
    dev = float(np.max(np.abs(np.concatenate([rho_before[:ia], rho_before[ib:]]) - rho_after)))
    moved_mass = float(rho_before[ib:] @ g.shell_volume[ib:])
    return out, MachineTrace("remove_gap", D0, D_value(out), dev,
                             details={"moved_mass": moved_mass, "shift_at_b": b - a})


def restrict_rescale(f: DistributionFunction, R: float) -> tuple[DistributionFunction, MachineTrace]:
    """Drop the matter beyond R and rescale x so that the mass returns to its old value."""
    g = f.grid
    if not _has_edge(g.r_edges, R):
        grid, _ = g.with_r_nodes([R])
        f = f.on_grid(grid)
        g = grid
    iR = _edge_index(g.r_edges, R)
    rho = density(f)
    M = float(rho @ g.shell_volume)
    dM = float(rho[iR:] @ g.shell_volume[iR:])
    if not 0.0 < dM < M:
        raise PreconditionError("mass beyond R must lie strictly between 0 and M")
    vals = f.values.copy()
    vals[iR:] = 0.0
    f1 = f.with_values(vals)
    gamma = (M - dM) / M
    out = scale(f1, gamma)
    D1 = D_value(f1)
    return out, MachineTrace("restrict_rescale", D_value(f), D_value(out), float("nan"),
                             details={"gamma": gamma, "delta_M": dM, "D_restricted": D1,
                                      "D_bound": D1 * M / (M - dM)})
