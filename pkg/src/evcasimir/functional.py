"""Casimir function, the functional D and its companions, and the scaling map."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DomainError
from .grid import (
    DistributionFunction,
    PhaseGrid,
    density,
    exp_lambda_nodes,
    lambda_of_m,
    mass_at,
    max_two_m_over_r,
    x_weights,
)


def casimir(s, k: float):
    """chi(s) = k/(k+1) s^(1+1/k)."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise DomainError("casimir is defined for s >= 0")
    return k / (k + 1.0) * s ** (1.0 + 1.0 / k)


def phi(s, k: float):
    """chi(s) - s; negative on (0, ((k+1)/k)^k), minimal at s = 1."""
    return casimir(s, k) - np.asarray(s, dtype=float)


def casimir_prime(s, k: float):
    return np.asarray(s, dtype=float) ** (1.0 / k)


@dataclass(frozen=True)
class FunctionalReport:
    D: float
    M: float
    M0: float
    E_b: float
    E_Cb: float
    Psi: float
    max_two_m_over_r: float

    def to_dict(self) -> dict:
        return {key: float(val) for key, val in asdict(self).items()}


def _v_moments(f: DistributionFunction):
    vol = f.grid.v_volume
    vals = f.values
    psi = np.einsum("ijl,jl->i", casimir(vals, f.k), vol)
    num = np.einsum("ijl,jl->i", vals, vol)
    return psi, num


def evaluate(f: DistributionFunction) -> FunctionalReport:
    """D, M, M0, Psi and the binding energies in one quadrature pass."""
    rho = density(f)
    w = x_weights(rho, f.grid)
    psi_shell, num_shell = _v_moments(f)
    Psi = float(w @ psi_shell)
    M0 = float(w @ num_shell)
    M = float(rho @ f.grid.shell_volume)
    D = Psi - M0
    return FunctionalReport(
        D=D, M=M, M0=M0, E_b=M0 - M, E_Cb=-D - M, Psi=Psi,
        max_two_m_over_r=max_two_m_over_r(rho, f.grid.r_edges),
    )


def D_value(f: DistributionFunction) -> float:
    return evaluate(f).D


def shell_casimir_content(f: DistributionFunction) -> np.ndarray:
    """int phi(f) dv for each radial cell."""
    return np.einsum("ijl,jl->i", phi(f.values, f.k), f.grid.v_volume)


def scale(f: DistributionFunction, gamma: float) -> DistributionFunction:
    """f_gamma(x, v) = gamma^2 f(gamma x, v).

    The radial edges are divided by gamma, so every cell of f maps onto one cell of
    f_gamma and the remapping is exactly mass conserving.
    """
    if not 0.0 < gamma <= 1.0:
        raise DomainError("gamma must lie in (0, 1]")
    if gamma == 1.0:
        return f
    g = f.grid
    grid = PhaseGrid(g.r_edges / gamma, g.s_edges, g.mu_edges)
    return DistributionFunction(grid, gamma**2 * f.values, f.k)


def lambda_at(f: DistributionFunction, r) -> np.ndarray:
    rho = density(f)
    return lambda_of_m(mass_at(rho, f.grid.r_edges, r), r)


def psi_value(f: DistributionFunction) -> float:
    rho = density(f)
    psi_shell, _ = _v_moments(f)
    return float(x_weights(rho, f.grid) @ psi_shell)


def midpoint_convexity_probe(f: DistributionFunction, g: DistributionFunction) -> tuple[float, float, float]:
    """Psi(f), Psi(g) and Psi((f+g)/2)."""
    f.grid.require_same(g.grid)
    if f.k != g.k:
        raise DomainError("distributions carry different exponents")
    mid = f.with_values(0.5 * (f.values + g.values))
    return psi_value(f), psi_value(g), psi_value(mid)


def second_variation_terms(fval, pert, m_pert, r, lam, k: float):
    """Pointwise second derivative of the Psi integrand along f + t*pert.

    Returns (direct, sum_of_squares): the expansion
    (3/r^2) e^(5 lam) m_pert^2 chi(f) + (2/r) e^(3 lam) m_pert chi'(f) pert + e^lam chi''(f) pert^2
    and its rewriting as a weighted sum of two squares (valid for k <= 2).
    fval must be positive.
    """
    fval = np.asarray(fval, dtype=float)
    el = np.exp(lam)
    chi = casimir(fval, k)
    chi1 = fval ** (1.0 / k)
    chi2 = fval ** (1.0 / k - 1.0) / k
    direct = (3.0 / r**2) * el**5 * m_pert**2 * chi + (2.0 / r) * el**3 * m_pert * chi1 * pert \
        + el * chi2 * pert**2
    weight = el * fval ** (1.0 / k - 1.0) * k / (k + 1.0)
    a = (1.0 + 1.0 / k) * pert / np.sqrt(3.0) + np.sqrt(3.0) * el**2 * m_pert * fval / r
    sos = weight * (a**2 + (2.0 - k) / (3.0 * k) * (1.0 + 1.0 / k) * pert**2)
    return direct, sos


def psi_second_derivative(f: DistributionFunction, h) -> float:
    """d^2/dt^2 Psi(f + t h) at t = 0 by summing the pointwise integrand over the grid.

    h is a signed perturbation: an array of cell values or a distribution on the same grid.
    """
    g = f.grid
    if isinstance(h, DistributionFunction):
        g.require_same(h.grid)
        h = h.values
    h = np.asarray(h, dtype=float)
    if h.shape != g.shape:
        raise DomainError(f"perturbation shape {h.shape} does not match grid {g.shape}")
    rho = density(f)
    rho_h = np.einsum("ijl,jl->i", h, g.v_energy)
    rq, wq = g.r_quad
    lam = np.log(exp_lambda_nodes(rho, g))
    m_h = mass_at(rho_h, g.r_edges, rq)
    total = 0.0
    for i in range(g.n_r):
        fv = f.values[i][None]
        hv = h[i][None]
        direct, _ = second_variation_terms(fv, hv, m_h[i][:, None, None], rq[i][:, None, None],
                                           lam[i][:, None, None], f.k)
        total += float(np.sum(wq[i][:, None, None] * 4.0 * np.pi * rq[i][:, None, None] ** 2
                              * direct * g.v_volume[None]))
    return total
