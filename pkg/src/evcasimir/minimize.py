"""Minimization of D over the admissible set through the radial density profile.

At fixed shell density the optimal velocity profile is (1 - eps sqrt(1+|v|^2))_+^k
with eps fixed by the density, so D becomes a function of the cellwise constant
radial profile rho alone:

    D(rho) = sum_i h(rho_i) W_i(rho),   h(a) = int phi(psi_a) dv,   h'(a) = -eps(a),

with W_i the integral of 4 pi r^2 e^lambda over cell i. The descent works on rho,
keeping the mass constraint and the cap 0 <= rho <= sigma0 exact at every step.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_jacobi

from .ansatz import (
    casimir_of_eps,
    eps_of_rho,
    pressure_of_eps,
    rho_of_eps,
    support_radius,
    AnsatzTables,
    build_ansatz,
    invert_Gprime,
)
from .errors import DomainError, GridMismatchError, InitError, ParameterError, RangeError, SupportError
from .grid import (
    FOUR_PI,
    AdmissibleParams,
    DistributionFunction,
    PhaseGrid,
    cube_diff,
    mass_at,
    max_two_m_over_r,
    velocity_edges,
)

_GL16 = np.polynomial.legendre.leggauss(16)
SAT_TOL = 1e-8


# ---------------------------------------------------------------- per-shell problem

@dataclass(frozen=True)
class ShellProblem:
    """Minimize H(psi) = int (chi(psi) - psi) dl^2 dw at fixed shell density a."""

    r: float
    a: float
    k: float = 1.0

    def __post_init__(self):
        if not self.r > 0:
            raise DomainError("shell radius must be positive")
        if self.a < 0:
            raise RangeError("shell density must be non-negative")


@dataclass(frozen=True)
class ShellProfile:
    """psi(w, l^2) = (1 - eps sqrt(1 + w^2 + l^2/r^2))_+^k."""

    r: float
    a: float
    k: float
    eps: float

    @property
    def cutoff(self) -> float:
        """|v| beyond which psi vanishes."""
        return float(support_radius(self.eps))

    def __call__(self, w, lsq) -> np.ndarray:
        E = np.sqrt(1.0 + np.asarray(w, dtype=float) ** 2 + np.asarray(lsq, dtype=float) / self.r**2)
        return np.maximum(1.0 - self.eps * E, 0.0) ** self.k

    def integrate(self, g) -> float:
        """int dl^2 int dw (1 - eps E)_+^k g(E), computed in (w, l^2).

        The inner l^2 integral ends where psi vanishes like (L_max - l^2)^k and the outer
        w integral carries (s_c^2 - w^2)^(k+1), so both use Gauss-Jacobi rules.
        """
        if self.eps >= 1.0:
            return 0.0
        k, r, eps = self.k, self.r, self.eps
        sc = self.cutoff
        Ec = 1.0 / eps
        xo, wo = roots_jacobi(48, k + 1.0, k + 1.0)
        xi, wi = roots_jacobi(48, k, 0.0)
        w = sc * xo[:, None]
        Lmax = r * r * (sc * sc - w * w)
        L = 0.5 * Lmax * (1.0 + xi[None, :])
        E = np.sqrt(1.0 + w * w + L / (r * r))
        # (1 - eps E)^k = (L_max - L)^k * (eps / (r^2 (E_c + E)))^k
        smooth = (eps / (r * r * (Ec + E))) ** k * g(E)
        # the inner integral is (s_c^2 - w^2)^(k+1) times a remainder smooth in w
        remainder = (0.5 * r * r) ** (k + 1.0) * np.sum(wi * smooth, axis=1)
        return float(sc ** (2.0 * k + 3.0) * np.sum(wo * remainder))

    def H_hat(self) -> float:
        k, eps = self.k, self.eps
        return self.integrate(lambda E: k / (k + 1.0) * (1.0 - eps * E) - 1.0)

    def F_hat(self) -> float:
        return self.integrate(lambda E: E) - self.r**2 / np.pi * self.a

    def cell_averages(self, s_edges: np.ndarray) -> np.ndarray:
        """Mean of psi over each |v| shell cell, weighted by the volume element s^2 ds."""
        s0, s1 = s_edges[:-1], s_edges[1:]
        top = np.minimum(s1, self.cutoff)
        live = top > s0
        out = np.zeros(s0.size)
        if not np.any(live):
            return out
        x, wg = _GL16
        a, b = s0[live, None], top[live, None]
        s = 0.5 * (a + b) + 0.5 * (b - a) * x
        integral = np.sum(0.5 * (b - a) * wg * s * s * shell_psi(self.eps, s, self.k), axis=1)
        out[live] = 3.0 * integral / cube_diff(s0[live], s1[live])
        return out


def shell_psi(eps, s, k):
    return np.maximum(1.0 - eps * np.sqrt(1.0 + s * s), 0.0) ** k


def project_shell(p: ShellProblem, tables: AnsatzTables) -> ShellProfile:
    """The unique minimizer of H at fixed shell density."""
    if p.a == 0.0:
        return ShellProfile(p.r, 0.0, p.k, 1.0)
    eps = invert_Gprime(-FOUR_PI * tables.kappa * p.a, tables)
    return ShellProfile(p.r, p.a, p.k, float(eps))


def H_hat_cells(values: np.ndarray, grid_s: np.ndarray, grid_mu: np.ndarray, r: float, k: float) -> float:
    """H of a cellwise constant shell field on a (|v|, mu) grid, exact."""
    from .functional import phi

    vol = (2.0 * np.pi / 3.0) * np.outer(cube_diff(grid_s[:-1], grid_s[1:]), np.diff(grid_mu))
    return float(r * r / np.pi * np.sum(phi(values, k) * vol))


# ---------------------------------------------------------------- reduced functional

class _Radial:
    """Quadrature data for a radial grid."""

    def __init__(self, r_edges):
        self.edges = np.asarray(r_edges, dtype=float)
        if self.edges[0] != 0.0 or np.any(np.diff(self.edges) <= 0):
            raise DomainError("radial edges must start at 0 and increase")
        g = PhaseGrid(self.edges, np.array([0.0, 1.0]))
        self.rq, self.wq = g.r_quad
        self.V = g.shell_volume
        self.n = self.V.size
        # d m(r_q) / d rho_i for r_q inside cell i
        self.partial = FOUR_PI / 3.0 * (self.rq**3 - self.edges[:-1, None] ** 3)

    def exp_lambda(self, rho):
        m = mass_at(rho, self.edges, self.rq)
        q = 2.0 * m / self.rq
        if np.any(q >= 1.0):
            raise DomainError(f"2m/r reaches {float(q.max()):.6g} >= 1")
        return 1.0 / np.sqrt(1.0 - q), m

    def weights(self, el):
        return np.sum(self.wq * FOUR_PI * self.rq**2 * el, axis=1)


def _casimir_of_rho(rho, k):
    eps = eps_of_rho(rho, k)
    return casimir_of_eps(eps, k), eps


def reduced_value(rho, r_edges, k: float) -> float:
    """D(rho) = sum_i h(rho_i) W_i(rho)."""
    rad = _Radial(r_edges)
    rho = np.asarray(rho, dtype=float)
    el, _ = rad.exp_lambda(rho)
    h, _ = _casimir_of_rho(rho, k)
    return float(h @ rad.weights(el))


def reduced_gradient(rho, r_edges, k: float) -> tuple[float, np.ndarray]:
    """D(rho) and its exact gradient with respect to the cell densities."""
    rad = _Radial(r_edges)
    rho = np.asarray(rho, dtype=float)
    el, _ = rad.exp_lambda(rho)
    h, eps = _casimir_of_rho(rho, k)
    W = rad.weights(el)
    return float(h @ W), _gradient(rad, h, eps, W, el)


def _gradient(rad: _Radial, h, eps, W, el):
    # d e^lambda / d m = e^(3 lambda) / r
    K = h[:, None] * rad.wq * FOUR_PI * rad.rq * el**3
    outer = np.concatenate([np.cumsum(K.sum(axis=1)[::-1])[::-1][1:], [0.0]])
    return -eps * W + rad.V * outer + np.sum(K * rad.partial, axis=1)


def reconstruct(rho, r_edges, k: float, n_s: int = 64, n_mu: int = 1, s_max: float | None = None
                ) -> DistributionFunction:
    """Shell-optimal f for the profile rho on a (r, |v|, mu) grid.

    Each shell holds the cell averages of its optimal profile, rescaled so that the
    grid density equals rho exactly.
    """
    rho = np.asarray(rho, dtype=float)
    eps = eps_of_rho(rho, k)
    if s_max is None:
        live = rho > 0
        s_max = float(support_radius(eps[live]).max()) if np.any(live) else 1.0
    s_edges = velocity_edges(s_max, n_s, s_core=min(2.0, s_max), breaks=())
    grid = PhaseGrid(np.asarray(r_edges, dtype=float), s_edges, np.linspace(-1.0, 1.0, n_mu + 1))
    vals = np.zeros(grid.shape)
    for i in np.flatnonzero(rho > 0):
        prof = ShellProfile(float(grid.r_mid[i]), float(rho[i]), k, float(eps[i]))
        vals[i] = prof.cell_averages(s_edges)[:, None]
    dens = np.einsum("ijl,jl->i", vals, grid.v_energy)
    scale = np.divide(rho, dens, out=np.zeros_like(rho), where=dens > 0)
    return DistributionFunction(grid, vals * scale[:, None, None], k)


def reduced_functional(rho, r_edges, k: float, n_s: int = 64, n_mu: int = 1
                       ) -> tuple[float, DistributionFunction]:
    """D as a function of the radial profile, and the shell-optimal f realizing it."""
    rho = np.asarray(rho, dtype=float)
    return reduced_value(rho, r_edges, k), reconstruct(rho, r_edges, k, n_s, n_mu)


# ---------------------------------------------------------------- descent

@dataclass(frozen=True)
class MinimizeOptions:
    max_iter: int = 200
    tol: float = 1e-10
    gap_tol: float = 1e-15
    slope_tol: float = 1e-15
    remove_gaps: bool = False
    n_s: int = 64
    n_mu: int = 1


@dataclass
class MinimizerState:
    params: AdmissibleParams
    r_edges: np.ndarray
    rho: np.ndarray
    eps: np.ndarray
    D: float
    iter: int
    history: list[float]
    converged: bool
    stop_reason: str
    f: DistributionFunction | None = None
    residuals: dict = field(default_factory=dict)

    @property
    def saturated(self) -> np.ndarray:
        return self.rho >= self.params.sigma0 - SAT_TOL

    @property
    def mass(self) -> float:
        return float(self.rho @ (FOUR_PI / 3.0 * cube_diff(self.r_edges[:-1], self.r_edges[1:])))

    def profile_columns(self) -> dict[str, np.ndarray]:
        r = 0.5 * (self.r_edges[1:] + self.r_edges[:-1])
        m = mass_at(self.rho, self.r_edges, r)
        return {
            "r": r, "rho": self.rho, "m": m, "lambda": -0.5 * np.log1p(-2.0 * m / r),
            "mu": metric_mu(self.rho, self.eps, self.r_edges, self.params.k, r),
            "p": pressure_of_eps(self.eps, self.params.k),
        }

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "r_edges": self.r_edges.tolist(),
            "rho": self.rho.tolist(),
            "eps": self.eps.tolist(),
            "D": self.D,
            "iter": self.iter,
            "history": list(self.history),
            "converged": self.converged,
            "stop_reason": self.stop_reason,
            "residuals": self.residuals,
        }


def flat_profile(params: AdmissibleParams, r_edges, radius: float | None = None) -> np.ndarray:
    """Constant density on the cells below `radius` carrying the mass M.

    Without a radius the smallest one keeping the density at half the cap is used."""
    r_edges = np.asarray(r_edges, dtype=float)
    V = FOUR_PI / 3.0 * cube_diff(r_edges[:-1], r_edges[1:])
    if radius is None:
        radius = (3.0 * params.M / (FOUR_PI * 0.5 * params.sigma0)) ** (1.0 / 3.0)
    n = int(np.searchsorted(r_edges, radius * (1 - 1e-12), side="left"))
    n = min(max(n, 1), V.size)
    rho = np.zeros(V.size)
    rho[:n] = params.M / V[:n].sum()
    if rho[0] > params.sigma0:
        raise ParameterError("radius too small to carry the mass below the cap")
    return rho


def _check_init(params: AdmissibleParams, rad: _Radial, rho):
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (rad.n,):
        raise InitError("initial profile does not match the radial grid")
    if np.any(~np.isfinite(rho)) or np.any(rho < 0):
        raise InitError("initial profile must be finite and non-negative")
    if np.any(rho > params.sigma0 + 1e-12):
        raise InitError("initial profile exceeds the density cap")
    mass = float(rho @ rad.V)
    if abs(mass - params.M) > 1e-8 * params.M:
        raise InitError(f"initial mass {mass:.10g} differs from M = {params.M:.10g}")
    if params.sigma0 * rad.V.sum() <= params.M:
        raise InitError("radial grid too short to hold the mass below the cap")
    return np.minimum(rho, params.sigma0) * (params.M / mass)


class _Model:
    """Cells solve W_i h(y_i) + c_i y_i = min under sum V_i y_i = M, 0 <= y_i <= sigma0."""

    def __init__(self, k, sigma0):
        self.k = k
        self.sigma0 = sigma0
        self.eps_cap = float(eps_of_rho(sigma0, k)[0])

    def profile(self, t):
        y = np.zeros(t.shape)
        mid = (t > self.eps_cap) & (t < 1.0)
        y[mid] = rho_of_eps(t[mid], self.k)
        y[t <= self.eps_cap] = self.sigma0
        return y

    def solve(self, c, W, V, M):
        def y_of(nu):
            return self.profile((c - nu * V) / W)

        lo = float(np.min((c - W) / V)) - 1.0
        hi = float(np.max((c - self.eps_cap * W) / V)) + 1.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if y_of(mid) @ V < M:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-16 * max(abs(lo), abs(hi)):
                break
        y = y_of(hi)
        free = (y > 0) & (y < self.sigma0)
        excess = float(y @ V) - M
        if np.any(free):
            y[free] -= excess * y[free] / float(y[free] @ V[free])
        return np.clip(y, 0.0, self.sigma0)


def _gap_shift(rho, rad: _Radial, sigma0):
    """Move the mass beyond the first interior vacuum cell inward by the gap width."""
    live = np.flatnonzero(rho > 0)
    if live.size == 0:
        return None
    empty = np.flatnonzero(rho[: live[-1]] == 0)
    if empty.size == 0:
        return None
    j0 = int(empty[0])
    j1 = j0
    while rho[j1] == 0:
        j1 += 1
    width = j1 - j0
    out = rho.copy()
    out[j0:] = 0.0
    src = np.arange(j1, rho.size)
    out[src - width] = rho[src] * rad.V[src] / rad.V[src - width]
    if out.max() > sigma0:
        return None
    return out


def linear_gap(grad, V, sigma0, M, rho) -> float:
    """min over feasible radial profiles y of grad . (y - rho), by filling the cheapest cells."""
    order = np.argsort(grad / V, kind="stable")
    y = np.zeros_like(rho)
    left = M
    for j in order:
        take = min(sigma0 * V[j], left)
        y[j] = take / V[j]
        left -= take
        if left <= 0:
            break
    return float(grad @ (y - rho))


def _line_search(full, rho, d, D, cap, t_cap: float = 64.0):
    """Halve from t = 1 until D decreases; after a full step keep doubling while D
    keeps decreasing and the box stays feasible (the frozen-coupling model
    undershoots along the slow gravitational mode)."""
    def point(t):
        return np.clip(rho + t * d, 0.0, cap)

    t = 1.0
    while t > 1e-12:
        D_new, *rest = full(point(t))
        if D_new <= D:
            break
        t *= 0.5
    else:
        return None, D, None
    if t == 1.0:
        with np.errstate(divide="ignore", invalid="ignore"):
            up = np.where(d > 0, (cap - rho) / d, np.inf)
            down = np.where(d < 0, -rho / d, np.inf)
        t_max = min(float(up.min()), float(down.min()), t_cap)
        while 2.0 * t <= t_max:
            D2, *rest2 = full(point(2.0 * t))
            if D2 >= D_new:
                break
            t, D_new, rest = 2.0 * t, D2, rest2
    return point(t), D_new, rest


def minimize(params: AdmissibleParams, r_edges, init, opts: MinimizeOptions | None = None
             ) -> MinimizerState:
    """Descent on the radial profile by successive convex models.

    The coupling through lambda is frozen at the current profile, the separable convex
    model is minimized exactly over the feasible set, and the step towards its minimizer
    is scaled by powers of two until D decreases. The direction carries no mass and the
    step never leaves the box, so mass and cap hold at every iterate.
    """
    opts = opts or MinimizeOptions()
    rad = _Radial(r_edges)
    k = params.k
    rho = _check_init(params, rad, init)
    model = _Model(k, params.sigma0)

    def full(x):
        el, _ = rad.exp_lambda(x)
        h, eps = _casimir_of_rho(x, k)
        W = rad.weights(el)
        return float(h @ W), h, eps, W, el

    D, h, eps, W, el = full(rho)
    history = [D]
    converged, reason, it = False, "max_iter", 0
    for it in range(1, opts.max_iter + 1):
        grad = _gradient(rad, h, eps, W, el)
        c = grad + eps * W
        y = model.solve(c, W, rad.V, params.M)
        d = y - rho
        slope = float(grad @ d)
        if slope >= -opts.gap_tol * (1.0 + abs(D)):
            converged, reason = True, "stationary"
            break
        trial, D_new, rest = _line_search(full, rho, d, D, params.sigma0)
        if trial is None:
            converged, reason = True, "no_descent"
            break
        if opts.remove_gaps:
            shifted = _gap_shift(trial, rad, params.sigma0)
            if shifted is not None:
                D_sh, *rest_sh = full(shifted)
                if D_sh <= D_new:
                    trial, D_new, rest = shifted, D_sh, rest_sh
        dD = D - D_new
        rho, D = trial, D_new
        h, eps, W, el = rest
        history.append(D)
        if dD <= opts.tol * (1.0 + abs(D)) and -slope <= opts.slope_tol * (1.0 + abs(D)):
            converged, reason = True, "tolerance"
            break
    grad = _gradient(rad, h, eps, W, el)
    state = MinimizerState(
        params=params, r_edges=rad.edges, rho=rho, eps=eps, D=D, iter=it, history=history,
        converged=converged, stop_reason=reason,
        f=reconstruct(rho, rad.edges, k, opts.n_s, opts.n_mu),
    )
    state.residuals = {
        "vi_residual": linear_gap(grad, rad.V, params.sigma0, params.M, rho),
        "U_cv": u_coefficient_of_variation(state),
    }
    return state


# ---------------------------------------------------------------- certificates

def metric_mu(rho, eps, r_edges, k: float, r) -> np.ndarray:
    """mu(r) from mu' = e^(2 lambda)(m/r^2 + 4 pi r p) with e^(2 mu) = 1 - 2M/R at the outer edge."""
    r_edges = np.asarray(r_edges, dtype=float)
    rho = np.asarray(rho, dtype=float)
    p = pressure_of_eps(eps, k)
    R = r_edges[-1]
    M = float(mass_at(rho, r_edges, R))
    x, wg = _GL16

    def integral(a, b):
        a, b = np.broadcast_arrays(np.asarray(a, float)[..., None], np.asarray(b, float)[..., None])
        s = 0.5 * (a + b) + 0.5 * (b - a) * x
        m = mass_at(rho, r_edges, s)
        idx = np.clip(np.searchsorted(r_edges, s, side="right") - 1, 0, rho.size - 1)
        dmu = (m / s**2 + FOUR_PI * s * p[idx]) / (1.0 - 2.0 * m / s)
        return np.sum(0.5 * (b - a) * wg * dmu, axis=-1)

    cell = integral(r_edges[:-1], r_edges[1:])
    tail = np.concatenate([np.cumsum(cell[::-1])[::-1], [0.0]])
    r = np.asarray(r, dtype=float)
    idx = np.clip(np.searchsorted(r_edges, r, side="right") - 1, 0, rho.size - 1)
    part = integral(r, r_edges[idx + 1])
    return 0.5 * np.log1p(-2.0 * M / R) - tail[idx + 1] - part


def U_profile(state: MinimizerState) -> np.ndarray:
    """U = -e^(-mu) eps at the cell midpoints, zero outside the support."""
    r = 0.5 * (state.r_edges[1:] + state.r_edges[:-1])
    mu = metric_mu(state.rho, state.eps, state.r_edges, state.params.k, r)
    return np.where(state.rho > 0, -np.exp(-mu) * state.eps, 0.0)


def u_coefficient_of_variation(state: MinimizerState) -> float:
    inner = (state.rho > 0) & ~state.saturated
    if inner.sum() < 2:
        return 0.0
    U = U_profile(state)[inner]
    return float(np.std(U) / abs(np.mean(U)))


@dataclass(frozen=True)
class VariationalResidual:
    slim: float
    unslimmed: float

    def to_dict(self) -> dict:
        return {"slim": self.slim, "unslimmed": self.unslimmed}


def _check_support(state: MinimizerState, g: DistributionFunction):
    if not np.array_equal(g.grid.r_edges, state.r_edges):
        raise GridMismatchError("g must live on the minimizer's radial grid")
    cut = np.where(state.rho > 0, support_radius(state.eps), -1.0)
    outside = g.grid.s_edges[:-1][None, :] >= cut[:, None]
    if np.any(g.values[outside] > 0):
        raise SupportError("g is not supported inside the support of the minimizer")


def _min_eps_energy(eps, s0, s1):
    """int over |v| in [s0, s1] of min(eps E, 1) s^2 ds, per cell."""
    x, wg = _GL16
    cut = support_radius(eps)
    total = np.zeros(s0.size)
    a, b = s0, np.minimum(s1, cut)
    live = b > a
    if np.any(live):
        lo, hi = a[live, None], b[live, None]
        s = 0.5 * (lo + hi) + 0.5 * (hi - lo) * x
        total[live] += np.sum(0.5 * (hi - lo) * wg * s * s * eps * np.sqrt(1.0 + s * s), axis=1)
    a2 = np.maximum(s0, cut)
    out = s1 > a2
    total[out] += (s1[out] ** 3 - a2[out] ** 3) / 3.0
    return total


def variational_residual(state: MinimizerState, g: DistributionFunction) -> VariationalResidual:
    """The first variation of D at the minimizer in the direction of g, in two forms.

    slim: int U d/dr(e^(lambda+mu)(m_g - m_0)) dr, in which e^(-mu) and e^mu cancel
    against each other and only lambda' + mu' = 4 pi r e^(2 lambda)(rho + p) remains.
    unslimmed: int int e^lambda (chi'(f0) - 1)(g - f0) + e^(3 lambda) phi(f0)(m_g - m_0)/r,
    with chi'(f0) - 1 = -min(eps E, 1) integrated exactly over the cells of g.
    """
    _check_support(state, g)
    k = state.params.k
    rad = _Radial(state.r_edges)
    rho0, eps = state.rho, state.eps
    rho_g = np.einsum("ijl,jl->i", g.values, g.grid.v_energy)
    el, _ = rad.exp_lambda(rho0)
    dm = mass_at(rho_g - rho0, rad.edges, rad.rq)
    drho = rho_g - rho0
    p0 = pressure_of_eps(eps, k)
    live = rho0 > 0
    e = np.where(live, eps, 0.0)
    slim_int = el * (FOUR_PI * rad.rq * el**2 * (rho0 + p0)[:, None] * dm
                     + FOUR_PI * rad.rq**2 * drho[:, None])
    slim = -float(np.sum(e[:, None] * rad.wq * slim_int))

    W = rad.weights(el)
    s0, s1 = g.grid.s_edges[:-1], g.grid.s_edges[1:]
    dmu = np.diff(g.grid.mu_edges)
    first = np.zeros(rad.n)
    for i in range(rad.n):
        if not np.any(g.values[i] > 0) and not live[i]:
            continue
        ring = 2.0 * np.pi * _min_eps_energy(e[i], s0, s1) if live[i] else \
            2.0 * np.pi * (s1**3 - s0**3) / 3.0
        first[i] = -float(np.sum(g.values[i] * np.outer(ring, dmu)))
    first += e * rho0
    h = casimir_of_eps(eps, k)
    coupling = float(np.sum(h[:, None] * rad.wq * FOUR_PI * rad.rq * el**3 * dm))
    return VariationalResidual(slim=slim, unslimmed=float(first @ W) + coupling)


SATURATION_K = 12.0 / 25.0


def saturation_bound(K: float = SATURATION_K) -> float:
    """Upper bound on |D|/M when the density saturates the cap on all of [0, M/beta]."""
    q = 1.0 / np.sqrt(1.0 + K * K)
    return 21.0 / 20.0 * q + 21.0 / 40.0 * (1.0 - q)


def v_support_bound(sigma0: float, k: float) -> float:
    N = max((3.0 * sigma0 / (2.0 * np.pi)) ** (1 / 3), (3.0 * sigma0 * 2.0**k / (2.0 * np.pi)) ** (1 / 3))
    return 12.0 * np.sqrt(1.0 + N * N)


@dataclass(frozen=True)
class DiagnosticsReport:
    u_cv: float
    v_support_ok: bool
    v_support_bound: float
    v_support_max: float
    saturation_bound: float
    saturation_bound_applicable: bool
    saturation_bound_violated: bool
    saturated_radius: float

    def to_dict(self) -> dict:
        return {key: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v))
                for key, v in self.__dict__.items()}


def convergence_diagnostics(state: MinimizerState) -> DiagnosticsReport:
    p = state.params
    S0 = v_support_bound(p.sigma0, p.k)
    live = state.rho > 0
    vmax = float(support_radius(state.eps[live]).max()) if np.any(live) else 0.0
    if state.f is not None:
        g = state.f.grid
        occupied = np.any(state.f.values > 1e-12, axis=(0, 2))
        if np.any(occupied):
            vmax = max(vmax, float(g.s_edges[:-1][occupied].max()))
    sat = state.saturated
    n_sat = int(np.argmin(sat)) if not np.all(sat) else sat.size
    r_star = float(state.r_edges[n_sat])
    # the bound concerns the configuration sigma0 = 1, M = sqrt(3 beta^3 / 4 pi), e^lambda < 21/20
    applicable = bool(abs(p.sigma0 - 1.0) <= 1e-12 and p.c_beta < 21.0 / 20.0
                      and abs(p.M - np.sqrt(3.0 * p.beta**3 / FOUR_PI)) <= 1e-12 * p.M)
    bound = saturation_bound()
    violated = applicable and r_star >= p.M / p.beta and abs(state.D) >= bound * p.M
    return DiagnosticsReport(
        u_cv=u_coefficient_of_variation(state),
        v_support_ok=vmax <= S0,
        v_support_bound=S0,
        v_support_max=vmax,
        saturation_bound=bound,
        saturation_bound_applicable=applicable,
        saturation_bound_violated=bool(violated),
        saturated_radius=r_star,
    )


def static_profile_on(sol, r_edges) -> np.ndarray:
    """Cell averages of a static solution's energy density on a radial grid."""
    r_edges = np.asarray(r_edges, dtype=float)
    x, wg = _GL16
    a, b = r_edges[:-1, None], np.minimum(r_edges[1:, None], sol.R0)
    b = np.maximum(a, b)
    s = 0.5 * (a + b) + 0.5 * (b - a) * x
    rho = rho_of_eps(np.minimum(sol.eps_at(s.ravel()), 1.0), sol.k).reshape(s.shape)
    mass = FOUR_PI * np.sum(0.5 * (b - a) * wg * s * s * rho, axis=1)
    return mass / (FOUR_PI / 3.0 * cube_diff(r_edges[:-1], r_edges[1:]))


def shell_tables(k: float) -> AnsatzTables:
    return build_ansatz(k, n_eps=64)
