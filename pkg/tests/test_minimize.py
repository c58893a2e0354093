import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evcasimir.ansatz import build_ansatz, support_radius
from evcasimir.checks import shell_competitor
from evcasimir.errors import GridMismatchError, InitError, SupportError
from evcasimir.functional import evaluate
from evcasimir.grid import AdmissibleParams, DistributionFunction, PhaseGrid
from evcasimir.minimize import (
    H_hat_cells,
    MinimizeOptions,
    ShellProblem,
    convergence_diagnostics,
    flat_profile,
    saturation_bound,
    minimize,
    project_shell,
    reduced_functional,
    reduced_gradient,
    reduced_value,
    static_profile_on,
    v_support_bound,
    variational_residual,
)
from evcasimir.samples import fill_to_mass
from evcasimir.static import integrate_static

TABLES = build_ansatz(1.0, 64)


@pytest.fixture(scope="module")
def setup():
    sol = integrate_static(1.0, 0.95)
    beta = (0.05 * 4.0 * np.pi * sol.M**2 / 3.0) ** (1.0 / 3.0)
    p = AdmissibleParams(M=sol.M, beta=beta, k=1.0)
    r_edges = np.linspace(0.0, 1.25 * sol.R0, 49)
    state = minimize(p, r_edges, flat_profile(p, r_edges), MinimizeOptions(n_s=32))
    return sol, p, r_edges, state


# -- shells

def test_empty_shell():
    prof = project_shell(ShellProblem(1.0, 0.0), TABLES)
    assert prof.eps == 1.0 and prof.H_hat() == 0.0 and prof.cutoff == 0.0


@settings(max_examples=30, deadline=None)
@given(r=st.floats(0.1, 5.0), loga=st.floats(-4.0, -0.5))
def test_shell_constraint_met(r, loga):
    prof = project_shell(ShellProblem(r, 10.0**loga), TABLES)
    assert abs(prof.F_hat()) <= 1e-10 * r * r * 10.0**loga


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_shell_profile_beats_competitors(seed):
    rng = np.random.default_rng(seed)
    r, a = float(rng.uniform(0.1, 5.0)), float(10.0 ** rng.uniform(-4, -0.5))
    prof = project_shell(ShellProblem(r, a), TABLES)
    H = prof.H_hat()
    mu_edges = np.linspace(-1.0, 1.0, 5)
    s_edges = np.linspace(0.0, 1.5 * prof.cutoff, 49)
    for mode in ("near", "random"):
        comp = shell_competitor(prof, rng, s_edges, mu_edges, mode)
        assert H_hat_cells(comp, s_edges, mu_edges, r, 1.0) >= H - 1e-9


# -- reduced functional

def test_zero_profile():
    edges = np.linspace(0.0, 2.0, 9)
    D, f = reduced_functional(np.zeros(8), edges, 1.0, n_s=8)
    assert D == 0.0 and not np.any(f.values)


def test_static_cross_oracle():
    sol = integrate_static(1.0, 0.9)
    edges = np.linspace(0.0, sol.R0, 401)
    assert reduced_value(static_profile_on(sol, edges), edges, 1.0) == pytest.approx(sol.report.D, rel=1e-4)


def test_reconstruction_matches_reduced_value():
    sol = integrate_static(1.0, 0.9)
    edges = np.linspace(0.0, sol.R0, 65)
    rho = static_profile_on(sol, edges)
    D, f = reduced_functional(rho, edges, 1.0, n_s=128)
    assert evaluate(f).M == pytest.approx(float(rho @ f.grid.shell_volume), rel=1e-12)
    assert evaluate(f).D == pytest.approx(D, rel=1e-3)
    assert evaluate(f).D >= D - 1e-12 * abs(D)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    edges = np.linspace(0.0, 3.0, 13)
    rho = rng.uniform(0.001, 0.01, 12)
    _, grad = reduced_gradient(rho, edges, 1.0)
    for i in (0, 5, 11):
        h = 1e-4 * rho[i]
        up, dn = rho.copy(), rho.copy()
        up[i] += h
        dn[i] -= h
        fd = (reduced_value(up, edges, 1.0) - reduced_value(dn, edges, 1.0)) / (2 * h)
        assert grad[i] == pytest.approx(fd, rel=1e-8)


# -- descent

def test_descent_properties(setup):
    sol, p, r_edges, state = setup
    assert state.converged
    assert np.all(np.diff(state.history) <= 0.0)
    assert state.mass == pytest.approx(p.M, rel=1e-10)
    assert np.all(state.rho <= p.sigma0 + 1e-15)
    assert state.D == pytest.approx(sol.report.D, rel=1e-3)
    d = state.to_dict()
    assert {"D", "iter", "converged", "stop_reason"} <= set(d)


def test_fixed_point(setup):
    _, p, r_edges, state = setup
    again = minimize(p, r_edges, state.rho, MinimizeOptions(n_s=32))
    assert again.iter <= 2
    assert again.D <= state.D + 1e-15
    assert again.D == pytest.approx(state.D, rel=1e-10)


def test_init_errors(setup):
    _, p, r_edges, _ = setup
    n = r_edges.size - 1
    with pytest.raises(InitError):
        minimize(p, r_edges, np.zeros(n + 1))
    with pytest.raises(InitError):
        minimize(p, r_edges, np.full(n, -1.0))
    with pytest.raises(InitError):
        minimize(p, r_edges, 0.5 * flat_profile(p, r_edges))
    with pytest.raises(InitError):
        minimize(p, r_edges, np.full(n, 2 * p.sigma0))


# -- certificates

def test_residual_zero_at_minimizer(setup):
    state = setup[3]
    vr = variational_residual(state, state.f)
    assert abs(vr.slim) <= 1e-12
    assert abs(vr.unslimmed) <= 1e-7


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_residual_nonnegative_for_admissible_directions(setup, seed):
    _, p, _, state = setup
    rng = np.random.default_rng(seed)
    grid = state.f.grid
    live = state.rho > 0
    cut = np.where(live, support_radius(state.eps), -1.0)
    inside = grid.s_edges[:-1][None, :, None] < cut[:, None, None]
    shape = np.where(live, rng.uniform(0.1, 1.0, live.size), 0.0)
    rho_g = fill_to_mass(shape, grid.shell_volume, p.M, p.sigma0)
    w = rng.uniform(0.2, 1.0, grid.shape) * inside
    n = np.einsum("ijl,jl->i", w, grid.v_energy)
    w *= np.divide(rho_g, n, out=np.zeros_like(rho_g), where=n > 0)[:, None, None]
    vr = variational_residual(state, DistributionFunction(grid, w, 1.0))
    assert vr.slim >= -1e-8 and vr.unslimmed >= -1e-8


def test_residual_errors(setup):
    state = setup[3]
    grid = state.f.grid
    bad = np.zeros(grid.shape)
    assert state.rho[-1] == 0.0
    bad[-1, 0, 0] = 1.0
    with pytest.raises(SupportError):
        variational_residual(state, DistributionFunction(grid, bad, 1.0))
    other = PhaseGrid(np.linspace(0.0, 1.0, 5), grid.s_edges)
    with pytest.raises(GridMismatchError):
        variational_residual(state, DistributionFunction.zeros(other))


def test_diagnostics(setup):
    state = setup[3]
    d = convergence_diagnostics(state)
    assert d.v_support_ok and d.v_support_max <= d.v_support_bound
    assert d.u_cv <= 1e-2
    assert not d.saturation_bound_applicable and not d.saturation_bound_violated
    assert set(d.to_dict()) == {"u_cv", "v_support_ok", "v_support_bound", "v_support_max", "saturation_bound",
                                "saturation_bound_applicable", "saturation_bound_violated", "saturated_radius"}


def test_bounds():
    assert saturation_bound() == pytest.approx(21 / 20 - 21 / 40 * (1 - 1 / np.sqrt(1 + 0.48**2)), rel=1e-15)
    assert v_support_bound(1.0, 1.0) > 12.0
