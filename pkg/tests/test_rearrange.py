import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evcasimir.errors import PreconditionError
from evcasimir.functional import D_value
from evcasimir.grid import (
    AdmissibleParams,
    DistributionFunction,
    PhaseGrid,
    density,
    make_grid,
    mass_at,
    mass_function,
)
from evcasimir.rearrange import (
    cap_excess,
    first_crossing,
    improve_tail,
    remove_gap,
    restrict_rescale,
    tail_rearrange,
    tail_total,
)
from evcasimir.samples import random_relaxed

PARAMS = AdmissibleParams(M=1.0, beta=0.3, k=1.0)


@pytest.fixture(scope="module")
def grid():
    return make_grid(5.0, 24, 4.0 * PARAMS.P0 + 10.0, 48, n_mu=2)


def _sample(grid, seed, tail=None):
    return random_relaxed(grid, PARAMS, np.random.default_rng(seed), tail=tail)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_cap_excess_properties(seed):
    g = make_grid(5.0, 16, 30.0, 32, n_mu=2)
    f = _sample(g, seed)
    out, tr = cap_excess(f)
    assert np.max(out.values) <= 1.0 + 1e-15
    assert tr.D_after <= tr.D_before + 1e-12
    assert np.allclose(density(out), density(f), rtol=1e-12, atol=1e-15)
    again, tr2 = cap_excess(out)
    assert again is out and tr2.D_after == tr2.D_before


def test_cap_excess_preconditions():
    g = make_grid(2.0, 4, 3.0, 8)
    with pytest.raises(PreconditionError):
        cap_excess(DistributionFunction(g, np.full(g.shape, 10.0)))
    bare = PhaseGrid(np.linspace(0, 2, 5), np.linspace(0, 3, 9))
    with pytest.raises(PreconditionError):
        cap_excess(DistributionFunction(bare, np.full(bare.shape, 1e-3)))


@pytest.mark.parametrize("tail,case", [(None, "2"), ("1", "1"), ("3", "3")])
def test_improve_tail_cases(grid, tail, case):
    f = _sample(grid, 11, tail)
    out, tr = improve_tail(f, PARAMS)
    assert tr.case == case
    assert tr.D_after <= tr.D_before + 1e-12
    assert np.allclose(density(out), density(f), rtol=1e-10, atol=1e-13)
    assert np.max(out.values) <= 1.0 + 1e-12
    # decay of the tail energy after the rearrangement
    for P in (PARAMS.P0 + 1.0, 2.0 * PARAMS.P0, 4.0 * PARAMS.P0):
        assert tail_total(out, P + 1.0) <= 2.0 * P**-0.25


def test_first_crossing_hits_one(grid):
    f, _ = cap_excess(_sample(grid, 5, "3"))
    P = first_crossing(f, PARAMS.P0)
    assert P is not None and P > PARAMS.P0
    assert P**0.25 * tail_total(f, P) == pytest.approx(1.0, abs=1e-8)
    # below the crossing the trigger never exceeds one
    for Q in np.linspace(PARAMS.P0, P, 50)[:-1]:
        assert Q**0.25 * tail_total(f, Q) <= 1.0 + 1e-9


def test_tail_preconditions(grid):
    f, _ = cap_excess(_sample(grid, 5, "1"))
    with pytest.raises(PreconditionError):
        tail_rearrange(f, 0.5 * PARAMS.P0, PARAMS)
    raw = _sample(grid, 5, None)
    if np.max(raw.values) > 1.0:
        with pytest.raises(PreconditionError):
            tail_rearrange(raw, PARAMS.P0, PARAMS)


def _gapped_ball():
    r = np.linspace(0.0, 3.0, 31)
    g = make_grid(3.0, 30, 3.0, 12)
    rho = np.zeros(30)
    rho[:8] = 0.05
    rho[15:22] = 0.02
    vals = np.zeros(g.shape)
    vals[:, :4, :] = 1.0
    vals *= (rho / np.einsum("ijl,jl->i", vals, g.v_energy))[:, None, None]
    return DistributionFunction(g, vals), r


def test_remove_gap_moves_mass_by_volume():
    f, r = _gapped_ball()
    a, b = r[8], r[15]
    out, tr = remove_gap(f, a, b)
    assert tr.D_after <= tr.D_before + 1e-14
    assert tr.rho_max_dev <= 1e-13
    rho, rho2 = density(f), density(out)
    # m_new(r') = m_old(r) along r' = (r^3 - (b^3 - a^3))^(1/3)
    for x in np.linspace(b, 3.0, 9):
        x_new = np.cbrt(x**3 - (b**3 - a**3))
        assert mass_at(rho2, out.grid.r_edges, x_new) == pytest.approx(mass_at(rho, f.grid.r_edges, x), rel=1e-12)
    assert mass_function(rho2, out.grid.r_edges)[-1] == pytest.approx(mass_function(rho, f.grid.r_edges)[-1])


def test_remove_gap_preconditions():
    f, r = _gapped_ball()
    with pytest.raises(PreconditionError):
        remove_gap(f, r[2], r[10])
    with pytest.raises(PreconditionError):
        remove_gap(f, r[8] + 0.01, r[15])


def test_restrict_rescale_bound_and_mass():
    f, r = _gapped_ball()
    R = r[18]
    out, tr = restrict_rescale(f, R)
    assert tr.D_after <= tr.details["D_bound"] * (1 + 1e-12)
    rho = density(f)
    assert mass_function(density(out), out.grid.r_edges)[-1] == pytest.approx(
        mass_function(rho, f.grid.r_edges)[-1], rel=1e-12)
    # the restricted function keeps m(r) for r <= R
    vals = f.values.copy()
    vals[18:] = 0.0
    rho1 = density(f.with_values(vals))
    for x in np.linspace(0.0, R, 7):
        assert mass_at(rho1, f.grid.r_edges, x) == pytest.approx(mass_at(rho, f.grid.r_edges, x), abs=1e-15)
    with pytest.raises(PreconditionError):
        restrict_rescale(f, 3.0)


def test_D_value_matches_machine_trace(grid):
    f = _sample(grid, 3)
    _, tr = cap_excess(f)
    assert tr.D_before == D_value(f)
