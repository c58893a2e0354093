"""Moments of the polytropic shell profile (1 - eps*sqrt(1+|v|^2))_+^k.

With E = sqrt(1+xi^2) as integration variable every moment has the form
int_1^{1/eps} F(E) xi^b (1 - eps E)^a dE, and the substitution
E = 1 + L(1+x)/2, L = 1/eps - 1, turns it into a Gauss-Jacobi integral with
weight (1-x)^a (1+x)^(b/2) and a smooth remainder, so the endpoint
singularities cost nothing.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from .errors import DomainError, RangeError

FOUR_PI = 4.0 * np.pi
N_JACOBI = 64
EPS_MIN = 1e-4


@lru_cache(maxsize=None)
def _jacobi(alpha: float, beta: float, n: int = N_JACOBI):
    x, w = roots_jacobi(n, alpha, beta)
    return x, w


def _moment(eps, a: float, xi_pow: int, energy_pow: int) -> np.ndarray:
    """int_1^{1/eps} E^energy_pow xi^xi_pow (1 - eps E)^a dE, zero for eps >= 1."""
    eps = np.asarray(eps, dtype=float)
    out = np.zeros(eps.shape)
    live = eps < 1.0
    if not np.any(live):
        return out
    e = eps[live][..., None]
    x, w = _jacobi(float(a), xi_pow / 2.0)
    L = 1.0 / e - 1.0
    E = 1.0 + 0.5 * L * (1.0 + x)
    smooth = E**energy_pow * (E + 1.0) ** (xi_pow / 2.0)
    pref = (0.5 * L) ** (1.0 + xi_pow / 2.0) * (0.5 * e * L) ** a
    out[live] = pref[..., 0] * np.sum(w * smooth, axis=-1)
    return out


def _check_k(k):
    if not 0.0 < k <= 2.0:
        raise DomainError("k must lie in (0, 2]")


def G(eps, k: float):
    """int_0^xi_max xi^2 (1 - eps sqrt(1+xi^2))^(k+1) dxi."""
    return _moment(eps, k + 1.0, 1, 1)


def G_prime(eps, k: float):
    """dG/deps = -(k+1) int xi^2 E (1 - eps E)^k dxi."""
    return -(k + 1.0) * _moment(eps, k, 1, 2)


def rho_of_eps(eps, k: float):
    """Energy density int E (1 - eps E)_+^k dv."""
    return FOUR_PI * _moment(eps, k, 1, 2)


def drho_deps(eps, k: float):
    """d rho / d eps, finite for eps < 1 (integrable endpoint singularity for k < 1)."""
    return -k * FOUR_PI * _moment(eps, k - 1.0, 1, 3)


def pressure_of_eps(eps, k: float):
    """Isotropic pressure (1/3) int |v|^2/E (1 - eps E)_+^k dv."""
    return FOUR_PI / 3.0 * _moment(eps, k, 3, 0)


def number_of_eps(eps, k: float):
    """Particle density int (1 - eps E)_+^k dv."""
    return FOUR_PI * _moment(eps, k, 1, 1)


def casimir_of_eps(eps, k: float):
    """int chi(psi) - psi dv for psi = (1 - eps E)_+^k."""
    return k / (k + 1.0) * FOUR_PI * G(eps, k) - number_of_eps(eps, k)


def support_radius(eps):
    """|v| cutoff sqrt(1/eps^2 - 1) of the shell profile."""
    eps = np.asarray(eps, dtype=float)
    return np.sqrt(np.maximum(1.0 / eps**2 - 1.0, 0.0))


def shell_profile(eps, s, k: float):
    """(1 - eps sqrt(1+s^2))_+^k."""
    return np.maximum(1.0 - eps * np.sqrt(1.0 + np.asarray(s, dtype=float) ** 2), 0.0) ** k


@dataclass(frozen=True)
class AnsatzTables:
    """Tabulated G, G' and pressure on a grid in eps; values off the table are computed
    directly from the quadrature so the tables serve as a cache and a reference."""

    k: float
    eps: np.ndarray = field(repr=False)
    G: np.ndarray = field(repr=False)
    Gp: np.ndarray = field(repr=False)
    p: np.ndarray = field(repr=False)

    @property
    def kappa(self) -> float:
        return (self.k + 1.0) / (16.0 * np.pi**2)

    def G_of(self, eps):
        return G(eps, self.k)

    def Gp_of(self, eps):
        return G_prime(eps, self.k)

    def rho_of(self, eps):
        return rho_of_eps(eps, self.k)

    def p_of(self, eps):
        return pressure_of_eps(eps, self.k)

    def casimir_of(self, eps):
        return casimir_of_eps(eps, self.k)


def build_ansatz(k: float, n_eps: int = 512) -> AnsatzTables:
    _check_k(k)
    eps = np.linspace(EPS_MIN, 1.0, n_eps)
    return AnsatzTables(k=float(k), eps=eps, G=G(eps, k), Gp=G_prime(eps, k),
                        p=pressure_of_eps(eps, k))


def eps_of_rho(rho, k: float, n_iter: int = 100) -> np.ndarray:
    """Vectorised bisection for eps with rho_of_eps(eps) = rho; eps = 1 for rho = 0."""
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    if np.any(rho < 0):
        raise RangeError("negative density")
    rho_max = rho_of_eps(EPS_MIN, k)
    if np.any(rho > rho_max):
        raise RangeError(f"density {float(rho.max()):.6g} exceeds the representable maximum")
    lo = np.full(rho.shape, EPS_MIN)
    hi = np.ones(rho.shape)
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        above = rho_of_eps(mid, k) > rho
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
        if np.all(hi - lo <= 4e-16 * hi):
            break
    out = 0.5 * (lo + hi)
    out[rho == 0.0] = 1.0
    return out


def invert_Gprime(target, tables: AnsatzTables):
    """eps in (0, 1] with G'(eps) = target (target <= 0)."""
    t = np.asarray(target, dtype=float)
    if np.any(t > 0):
        raise RangeError("G' is non-positive; target must be <= 0")
    out = eps_of_rho(-FOUR_PI * t / (tables.k + 1.0), tables.k)
    return out.reshape(t.shape) if t.ndim else float(out[0])
