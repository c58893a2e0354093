"""Static polytropic solutions, their functionals, and the indicator witness family."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from . import ansatz
from .ansatz import AnsatzTables, build_ansatz, invert_Gprime  # noqa: F401  (re-export)
from .errors import HorizonError, NoSupportError, ParameterError
from .functional import FunctionalReport, evaluate
from .grid import (
    DistributionFunction,
    PhaseGrid,
    RadialProfile,
    lambda_of_m,
    theta,
)

FOUR_PI = 4.0 * np.pi
_GL = np.polynomial.legendre.leggauss(16)


@dataclass(frozen=True)
class StaticSolution:
    """Solution of the form f0 = (1 - C e^mu0 E)_+^k.

    eps(r) = C e^mu0(r) is the local cutoff; C = e^(-mu0(R0)).
    """

    k: float
    central_eps: float
    profile: RadialProfile
    C: float
    R0: float
    M: float
    report: FunctionalReport
    m10_residual: float
    mu_shift: float = field(repr=False)
    _dense: object = field(repr=False, compare=False)
    _r_start: float = field(repr=False)

    @property
    def compactness(self) -> float:
        return 2.0 * self.M / self.R0

    @property
    def exp_minus_mu_R0(self) -> float:
        return self.C

    def eps_at(self, r) -> np.ndarray:
        """Cutoff eps(r); eps >= 1 outside the support."""
        r = np.asarray(r, dtype=float)
        nu = self._nu(r)
        return self.central_eps * np.exp(nu)

    def mass_at(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return self._state(r)[0]

    def _state(self, r):
        r = np.asarray(r, dtype=float)
        rc = np.clip(r, self._r_start, self.R0)
        y = self._dense(rc.ravel()).reshape((5,) + r.shape)
        inner = r < self._r_start
        if np.any(inner):
            rho_c = ansatz.rho_of_eps(self.central_eps, self.k)
            p_c = ansatz.pressure_of_eps(self.central_eps, self.k)
            y[0] = np.where(inner, FOUR_PI / 3.0 * rho_c * r**3, y[0])
            y[1] = np.where(inner, 2.0 * np.pi / 3.0 * (rho_c + 3.0 * p_c) * r**2, y[1])
        outer = r > self.R0
        if np.any(outer):
            # vacuum: m const, mu = 1/2 ln(1-2M/r) up to the shift
            y[1] = np.where(outer, 0.5 * np.log1p(-2.0 * self.M / np.where(outer, r, 1.0))
                            - self.mu_shift, y[1])
        return y

    def _nu(self, r):
        return self._state(r)[1]

    def to_metadata(self) -> dict:
        return {"k": self.k, "central_eps": self.central_eps, "C": self.C, "R0": self.R0,
                "M": self.M, "D": self.report.D}


def _rhs(k, eps_c):
    def rhs(r, y):
        m, nu = y[0], y[1]
        eps = eps_c * np.exp(nu)
        rho = ansatz.rho_of_eps(eps, k)
        p = ansatz.pressure_of_eps(eps, k)
        n = ansatz.number_of_eps(eps, k)
        e2l = 1.0 / (1.0 - 2.0 * m / r)
        el = np.sqrt(e2l)
        s = FOUR_PI * r * r
        return np.array([
            s * rho,
            e2l * (m / (r * r) + FOUR_PI * r * p),
            s * (rho + 3.0 * p) * np.exp(nu) * el,
            s * (rho + p) * np.exp(nu) * el,
            s * n * el,
        ])
    return rhs


def integrate_static(k: float, central_eps: float, n_profile: int = 400,
                     rtol: float = 1e-10, atol: float = 1e-12) -> StaticSolution:
    """Shoot outward from the centre until the cutoff eps(r) reaches 1."""
    if not 0.0 < k <= 2.0:
        raise ParameterError("k must lie in (0, 2]")
    if central_eps >= 1.0:
        raise NoSupportError("central_eps >= 1 gives the vacuum")
    if central_eps <= ansatz.EPS_MIN:
        raise ParameterError("central_eps too small")
    rho_c = float(ansatz.rho_of_eps(central_eps, k))
    p_c = float(ansatz.pressure_of_eps(central_eps, k))
    n_c = float(ansatz.number_of_eps(central_eps, k))
    length = 1.0 / np.sqrt(FOUR_PI * rho_c)
    r0 = 1e-6 * length
    nu0 = 2.0 * np.pi / 3.0 * (rho_c + 3.0 * p_c) * r0**2
    vol0 = FOUR_PI / 3.0 * r0**3
    y0 = [vol0 * rho_c, nu0, vol0 * (rho_c + 3.0 * p_c), vol0 * (rho_c + p_c), vol0 * n_c]
    nu_edge = -np.log(central_eps)

    def edge(r, y):
        return y[1] - nu_edge
    edge.terminal = True
    edge.direction = 1

    def horizon(r, y):
        return 1.0 - 1e-12 - 2.0 * y[0] / r
    horizon.terminal = True

    sol = solve_ivp(_rhs(k, central_eps), (r0, 1e4 * length), y0, method="DOP853",
                    rtol=rtol, atol=atol, events=(edge, horizon), dense_output=True)
    if sol.t_events[1].size:
        raise HorizonError("2m/r reached 1 during the static solve")
    if not sol.t_events[0].size:
        raise NoSupportError("cutoff never reached 1")
    R0 = float(sol.t_events[0][0])
    yR = sol.y_events[0][0]
    M = float(yR[0])
    mu_R0 = 0.5 * np.log1p(-2.0 * M / R0)
    mu_shift = mu_R0 - nu_edge
    C = float(np.exp(-mu_R0))
    J1, J2, J3 = yR[2], yR[3], yR[4]
    D = -central_eps * J2
    M0 = float(J3)
    m10 = abs(np.exp(mu_shift) * J1 - M) / M

    r = np.linspace(0.0, R0, n_profile)
    rc = np.clip(r, r0, R0)
    y = sol.sol(rc)
    y[0] = np.where(r < r0, FOUR_PI / 3.0 * rho_c * r**3, y[0])
    y[1] = np.where(r < r0, 2.0 * np.pi / 3.0 * (rho_c + 3.0 * p_c) * r**2, y[1])
    eps = central_eps * np.exp(y[1])
    prof = RadialProfile(
        r=r, rho=ansatz.rho_of_eps(eps, k), m=y[0], lam=lambda_of_m(y[0], r),
        mu=y[1] + mu_shift, p=ansatz.pressure_of_eps(eps, k),
    )
    tmr = float(np.max(2.0 * y[0][1:] / r[1:]))
    report = FunctionalReport(D=float(D), M=M, M0=M0, E_b=M0 - M, E_Cb=-D - M, Psi=float(D) + M0,
                              max_two_m_over_r=tmr)
    return StaticSolution(k=float(k), central_eps=float(central_eps), profile=prof, C=C, R0=R0, M=M,
                          report=report, m10_residual=float(m10), mu_shift=float(mu_shift),
                          _dense=sol.sol, _r_start=r0)


def functional_of_static(sol: StaticSolution) -> FunctionalReport:
    """D(f0) = -4 pi e^(-mu0(R0)) int r^2 (p+rho) e^(mu0+lambda0) dr, with M0 and Psi alongside."""
    return sol.report


def sample_static(sol: StaticSolution, n_r: int = 128, n_s: int = 96, r_max: float | None = None,
                  n_mu: int = 1) -> DistributionFunction:
    """Cell averages of f0 on a grid adapted to its support."""
    R0 = sol.R0
    r_max = R0 if r_max is None else r_max
    r_edges = np.linspace(0.0, R0, n_r + 1)
    if r_max > R0:
        extra = max(1, int(round(n_r * (r_max - R0) / R0)))
        r_edges = np.concatenate([r_edges, np.linspace(R0, r_max, extra + 1)[1:]])
    s_top = float(ansatz.support_radius(sol.central_eps))
    s_edges = np.linspace(0.0, s_top, n_s + 1)
    grid = PhaseGrid(r_edges, s_edges, np.linspace(-1.0, 1.0, n_mu + 1))
    x, w = _GL
    rq, wq = grid.r_quad
    eps_q = sol.eps_at(rq)  # (n_r, nq)
    s_cut = ansatz.support_radius(np.minimum(eps_q, 1.0))
    s0, s1 = s_edges[:-1], s_edges[1:]
    # s-integral of s^2 f0 over [s0, min(s1, cut)] for every radial node and velocity cell
    hi = np.minimum(s1[None, None, :], s_cut[..., None])
    lo = np.broadcast_to(s0, hi.shape)
    width = np.maximum(hi - lo, 0.0)
    s = lo[..., None] + 0.5 * width[..., None] * (1.0 + x)
    prof = ansatz.shell_profile(eps_q[..., None, None], s, sol.k)
    sint = 0.5 * width * np.sum(w * s * s * prof, axis=-1)
    # r-average with weight r^2 dr
    num = np.einsum("iq,iqj->ij", wq * rq**2, sint)
    den = (r_edges[1:] ** 3 - r_edges[:-1] ** 3)[:, None] / 3.0 * (s1**3 - s0**3)[None, :] / 3.0
    vals = np.repeat((num / den)[:, :, None], n_mu, axis=2)
    return DistributionFunction(grid, vals, sol.k)


@dataclass(frozen=True)
class CbecVerdict:
    cbec: bool
    E_Cb: float
    E_b: float
    E_b_positive: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def check_cbec(report: FunctionalReport) -> CbecVerdict:
    """True iff D < -M, i.e. the Casimir-binding energy is positive."""
    return CbecVerdict(cbec=bool(report.D < -report.M), E_Cb=report.E_Cb, E_b=report.E_b,
                       E_b_positive=bool(report.E_b > 0))


@dataclass(frozen=True)
class Witness:
    f: DistributionFunction
    D_closed: float
    A: float
    a: float
    b: float
    c: float
    M: float

    @property
    def ratio(self) -> float:
        """|D|/M from the closed form."""
        return abs(self.D_closed) / self.M

    @property
    def verdict(self) -> bool:
        return self.D_closed < -self.M


def witness_closed_form(k: float, M: float, b: float, A: float | None = None) -> tuple[float, float, float]:
    """(D, a, c) for A 1_[0,a](|x|) 1_[0,b](|v|) with a chosen so that the mass is M."""
    A = (1.0 / 8.0) ** k if A is None else A
    th = float(theta(b))
    a = (3.0 * M / (FOUR_PI * A * th)) ** (1.0 / 3.0)
    c = np.sqrt(8.0 * np.pi / 3.0 * A * th)
    x = c * a
    if x >= 1.0:
        raise HorizonError("witness radius inside its own horizon")
    D = -A * (1.0 - k / (k + 1.0) * A ** (1.0 / k)) * (8.0 * np.pi**2 / 3.0) * (b / c) ** 3 \
        * (np.arcsin(x) - x * np.sqrt(1.0 - x * x))
    return float(D), float(a), float(c)


def witness_small_b_ratio(k: float, A: float | None = None) -> float:
    """Limit of |D|/M for the witness family as b -> 0 at fixed M."""
    A = (1.0 / 8.0) ** k if A is None else A
    return 1.0 - k / (k + 1.0) * A ** (1.0 / k)


def cbec_witness(k: float, M: float, sigma0: float, b: float, n_r: int = 128, n_s: int = 8,
                 A: float | None = None) -> Witness:
    A = (1.0 / 8.0) ** k if A is None else A
    if A * float(theta(b)) > sigma0:
        raise ParameterError("A theta(b) exceeds the density cap")
    D, a, c = witness_closed_form(k, M, b, A)
    grid = PhaseGrid(np.linspace(0.0, a, n_r + 1), np.linspace(0.0, b, n_s + 1))
    f = DistributionFunction(grid, np.full(grid.shape, A), k)
    return Witness(f=f, D_closed=D, A=A, a=a, b=b, c=c, M=M)


@dataclass(frozen=True)
class SweepRow:
    central_eps: float
    M: float = float("nan")
    R0: float = float("nan")
    compactness: float = float("nan")
    D: float = float("nan")
    E_b: float = float("nan")
    E_Cb: float = float("nan")
    cbec: bool = False
    m10_residual: float = float("nan")
    exp_minus_mu_R0: float = float("nan")
    D_grid: float = float("nan")
    error: str = ""

    CSV_FIELDS = ("central_eps", "M", "R0", "compactness", "D", "E_b", "E_Cb", "cbec")

    def csv_values(self) -> list[str]:
        out = []
        for name in self.CSV_FIELDS:
            v = getattr(self, name)
            out.append(str(int(v)) if isinstance(v, bool) else repr(float(v)))
        return out


def sweep_family(k: float, eps_range: tuple[float, float], n: int, grid_check: bool = False,
                 n_r: int = 128, n_s: int = 96) -> list[SweepRow]:
    """Solve a family of static solutions; failures are recorded per row."""
    if n < 2:
        raise ParameterError("a sweep needs n >= 2")
    lo, hi = eps_range
    if not (0.0 < lo < 1.0 and 0.0 < hi < 1.0):
        raise ParameterError("eps range must lie in (0, 1)")
    rows = []
    for eps in np.linspace(lo, hi, n):
        try:
            sol = integrate_static(k, float(eps))
            rep = sol.report
            d_grid = evaluate(sample_static(sol, n_r, n_s)).D if grid_check else float("nan")
            rows.append(SweepRow(
                central_eps=float(eps), M=sol.M, R0=sol.R0, compactness=sol.compactness, D=rep.D,
                E_b=rep.E_b, E_Cb=rep.E_Cb, cbec=check_cbec(rep).cbec, m10_residual=sol.m10_residual,
                exp_minus_mu_R0=sol.C, D_grid=d_grid,
            ))
        except Exception as exc:  # recorded, sweep continues
            rows.append(SweepRow(central_eps=float(eps), error=f"{type(exc).__name__}: {exc}"))
    return rows
