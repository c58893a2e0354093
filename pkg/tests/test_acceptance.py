"""Acceptance criteria, one test each, every one printing a PASS/FAIL line.

Run directly (python tests/test_acceptance.py) or through pytest; the summary
lines are repeated at the end of the pytest session.
"""
from __future__ import annotations

import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest

from evcasimir import ansatz
from evcasimir.checks import shell_competitor
from evcasimir.functional import evaluate, midpoint_convexity_probe, scale, second_variation_terms
from evcasimir.grid import (
    AdmissibleParams,
    PhaseGrid,
    check_admissible,
    density,
    exp_lambda_nodes,
    lambda_of_m,
    make_grid,
    mass_at,
    max_two_m_over_r,
    two_m_over_r_bound,
)
from evcasimir.minimize import (
    H_hat_cells,
    ShellProblem,
    flat_profile,
    saturation_bound,
    minimize,
    project_shell,
    variational_residual,
)
from evcasimir.rearrange import (
    annulus_volume,
    cap_excess,
    improve_tail,
    remove_gap,
    restrict_rescale,
    tail_rearrange,
    tail_total,
)
from evcasimir.samples import fill_to_mass, random_admissible, random_relaxed, uniform_ball
from evcasimir.static import cbec_witness, integrate_static, sample_static, sweep_family
from evcasimir.grid import DistributionFunction
from evcasimir.ansatz import support_radius

RESULTS: dict[int, str] = {}


def report(number: int, ok: bool, detail: str) -> bool:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[number] = line
    print(line)
    return ok


# shared, computed once per session
_SWEEP: list | None = None


def sweep20():
    global _SWEEP
    if _SWEEP is None:
        _SWEEP = sweep_family(1.0, (0.5, 0.98), 20, grid_check=True, n_r=128, n_s=96)
    return _SWEEP


def criterion_1():
    grid = make_grid(5.0, 4, 10.0, 96)
    vol = annulus_volume(grid)
    rel = abs(vol - 8.0) / 8.0
    return report(1, rel <= 1e-8, f"|H| = {vol:.15f}, rel err {rel:.2e}")


def _gap_input(f, params, rng):
    """f with a band of empty radial cells and the mass restored outside it, or None."""
    rho = density(f)
    live = np.flatnonzero(rho > 0)
    if live.size < 8:
        return None
    i0 = int(rng.integers(live[2], live[-4]))
    i1 = i0 + int(rng.integers(1, 3))
    vals = f.values.copy()
    vals[i0:i1] = 0.0
    g = f.with_values(vals)
    g = g.with_values(vals * (params.M / float(density(g) @ f.grid.shell_volume)))
    if not check_admissible(g, params).admissible_relaxed:
        return None
    return g, float(f.grid.r_edges[i0]), float(f.grid.r_edges[i1])


def criterion_2():
    params = AdmissibleParams(M=1.0, beta=0.3, k=1.0)
    grid = make_grid(5.0, 32, 4.0 * params.P0 + 10.0, 64, n_mu=2)
    rng = np.random.default_rng(20240501)
    worst_dD, worst_rho = -np.inf, 0.0
    counts = dict(cap_excess=0, tail_rearrange=0, improve_tail=0, remove_gap=0, restrict_rescale=0)
    literal_rr = 0
    for i in range(200):
        f = random_relaxed(grid, params, rng, tail=(None, "1", "3")[i % 3])
        assert check_admissible(f, params).admissible_relaxed
        capped, tr = cap_excess(f)
        worst_dD = max(worst_dD, tr.D_after - tr.D_before)
        worst_rho = max(worst_rho, tr.rho_max_dev)
        counts["cap_excess"] += 1
        if params.P0**0.25 * tail_total(capped, params.P0) >= 1.0:
            _, tr = tail_rearrange(capped, params.P0, params)
            worst_dD = max(worst_dD, tr.D_after - tr.D_before)
            worst_rho = max(worst_rho, tr.rho_max_dev)
            counts["tail_rearrange"] += 1
        out, tr = improve_tail(f, params)
        worst_dD = max(worst_dD, tr.D_after - tr.D_before)
        worst_rho = max(worst_rho, tr.rho_max_dev)
        counts["improve_tail"] += 1
        gapped = _gap_input(capped, params, rng)
        if gapped is not None:
            g, a, b = gapped
            _, tr = remove_gap(g, a, b)
            worst_dD = max(worst_dD, tr.D_after - tr.D_before)
            counts["remove_gap"] += 1
        live = np.flatnonzero(density(out) > 0)
        R = float(grid.r_edges[max(1, int(rng.uniform(0.5, 1.0) * live[-1]))])
        _, tr = restrict_rescale(out, R)
        # the construction's claim: D(output) <= M/(M - dM) D(f1)
        worst_dD = max(worst_dD, tr.D_after - tr.details["D_bound"])
        literal_rr += tr.D_after > tr.D_before + 1e-10
        counts["restrict_rescale"] += 1
    ok = worst_dD <= 1e-10 and worst_rho <= 1e-9 and counts["remove_gap"] >= 100
    return report(2, ok, f"max D increase {worst_dD:.2e}, max rho dev {worst_rho:.2e}, applied {counts}; "
                         f"restrict_rescale above D(f) itself in {literal_rr}/200 (not claimed)")


def criterion_3():
    params = AdmissibleParams(M=1.0, beta=0.3, k=1.0)
    grid = make_grid(5.0, 32, 4.0 * params.P0 + 10.0, 64, n_mu=2)
    rng = np.random.default_rng(3)
    worst = -np.inf
    cases = {}
    for i in range(60):
        f = random_relaxed(grid, params, rng, tail=(None, "1", "3")[i % 3])
        out, tr = improve_tail(f, params)
        cases[tr.case] = cases.get(tr.case, 0) + 1
        for P in (params.P0 + 1.0, 2.0 * params.P0, 4.0 * params.P0):
            worst = max(worst, tail_total(out, P + 1.0) - 2.0 * P**-0.25)
    return report(3, worst <= 0.0, f"max of tail - 2P^(-1/4) = {worst:.4g}, cases {cases}")


def criterion_4():
    w = cbec_witness(1.0, 1.0, 1.0, 0.05, A=1.0 / 8.0)
    rep = evaluate(w.f)
    rel = abs(rep.D - w.D_closed) / abs(w.D_closed)
    cbec = abs(rep.D) > rep.M
    return report(4, rel <= 1e-6 and cbec,
                  f"closed form rel err {rel:.2e} ({'ok' if rel <= 1e-6 else 'bad'}); "
                  f"|D|/M = {abs(rep.D) / rep.M:.6f} so CBEC {'holds' if cbec else 'does not hold'} at M=1, b=0.05")


def criterion_5():
    rng = np.random.default_rng(5)
    worst_M, worst_lam, worst_D = 0.0, 0.0, -np.inf
    for i in range(50):
        k = (0.5, 1.0, 2.0)[i % 3]
        p = AdmissibleParams(M=float(rng.uniform(0.2, 1.0)), beta=0.3, k=k)
        grid = make_grid(float(rng.uniform(4.0, 10.0)), 32, 3.0, 32, n_mu=2)
        f = random_admissible(grid, p, rng)
        for gamma in (0.5, 0.9):
            fg = scale(f, gamma)
            rep, rep_g = evaluate(f), evaluate(fg)
            worst_M = max(worst_M, abs(rep_g.M - rep.M / gamma) / (rep.M / gamma))
            rq, _ = fg.grid.r_quad
            lam_g = np.log(exp_lambda_nodes(density(fg), fg.grid))
            lam = lambda_of_m(mass_at(density(f), grid.r_edges, gamma * rq), gamma * rq)
            worst_lam = max(worst_lam, float(np.max(np.abs(lam_g - lam))))
            worst_D = max(worst_D, rep_g.D - rep.D / gamma)
    ok = worst_M <= 1e-6 and worst_lam <= 1e-8 and worst_D <= 1e-9
    return report(5, ok, f"mass rel {worst_M:.2e}, lambda {worst_lam:.2e}, max D(f_g) - D(f)/g {worst_D:.3e}")


def criterion_6():
    rng = np.random.default_rng(6)
    worst, worst_sos, worst_id = np.inf, np.inf, 0.0
    for i in range(200):
        k = (0.5, 1.0, 2.0)[i % 3]
        p = AdmissibleParams(M=0.5, beta=0.3, k=k)
        grid = make_grid(4.0, 16, 3.0, 16, n_mu=2)
        f, g = random_admissible(grid, p, rng), random_admissible(grid, p, rng)
        a, b, mid = midpoint_convexity_probe(f, g)
        worst = min(worst, 0.5 * (a + b) - mid)
        # pointwise second variation at the grid's quadrature nodes
        rq, _ = grid.r_quad
        lam = np.log(exp_lambda_nodes(density(f), grid))
        fv = np.maximum(f.values[:, None], 1e-300)
        pert = rng.normal(size=fv.shape)
        m_pert = rng.normal(size=rq.shape)[..., None, None]
        direct, sos = second_variation_terms(fv, pert, m_pert, rq[..., None, None], lam[..., None, None], k)
        worst_sos = min(worst_sos, float(sos.min()))
        worst_id = max(worst_id, float(np.max(np.abs(direct - sos) / (np.abs(direct) + np.abs(sos) + 1e-300))))
    ok = worst >= -1e-10 and worst_sos >= 0.0 and worst_id <= 1e-9
    return report(6, ok, f"min midpoint slack {worst:.3e}, min SOS integrand {worst_sos:.3e}, "
                         f"direct vs SOS rel {worst_id:.1e}")


def criterion_7():
    worst = 0.0
    for M in (0.1, 0.5, 1.0):
        sigma_M = 3.0 / (32.0 * np.pi * M**2)
        for frac in (1.0, 0.3, 0.01):
            sigma = frac * sigma_M
            R = (3.0 * M / (4.0 * np.pi * sigma)) ** (1.0 / 3.0)
            grid = PhaseGrid(np.linspace(0.0, 3.0 * R, 97), np.linspace(0.0, 1.0, 9))
            f = uniform_ball(grid, 1.0, sigma, R)
            worst = max(worst, abs(max_two_m_over_r(density(f), grid.r_edges) - two_m_over_r_bound(sigma, M)))
        r_star = (3.0 * M / (4.0 * np.pi * sigma_M)) ** (1.0 / 3.0)
        worst = max(worst, abs(r_star - 2.0 * M))
    return report(7, worst <= 1e-8, f"max |2m/r - (sigma/sigma_M)^(1/3)| and |r* - 2M| = {worst:.2e}")


def criterion_8():
    rows = sweep20()
    errors = [r.error for r in rows if r.error]
    m10 = max(r.m10_residual for r in rows)
    sandwich = max(max(0.5 * r.exp_minus_mu_R0 * r.M - abs(r.D), abs(r.D) - r.exp_minus_mu_R0 * r.M) / r.M
                   for r in rows)
    comp = max(r.compactness for r in rows)
    grid_rel = max(abs(r.D_grid - r.D) / abs(r.D) for r in rows)
    ok = not errors and m10 <= 1e-4 and sandwich <= 0.0 and comp < 8.0 / 9.0 and grid_rel <= 1e-4
    return report(8, ok, f"20 solves, M10 {m10:.1e}, sandwich violation {sandwich:.3f}, "
                         f"max 2M/R0 {comp:.3f}, formula vs 6D {grid_rel:.2e}")


def criterion_9():
    rows = sweep20()
    third = sorted(rows, key=lambda r: r.compactness)[: -(-len(rows) // 3)]
    ok = all(r.E_Cb > 0 for r in third)
    eps = sorted(r.central_eps for r in third)
    return report(9, ok, f"least compact {len(third)} members (central_eps {eps[0]:.3f}..{eps[-1]:.3f}), "
                         f"min E_Cb {min(r.E_Cb for r in third):.3e}")


def criterion_10():
    rng = np.random.default_rng(10)
    tables = ansatz.build_ansatz(1.0, 64)
    mu_edges = np.linspace(-1.0, 1.0, 5)
    worst = np.inf
    for _ in range(20):
        r, a = float(rng.uniform(0.05, 8.0)), float(10.0 ** rng.uniform(-5, -0.3))
        prof = project_shell(ShellProblem(r, a, 1.0), tables)
        H = prof.H_hat()
        s_edges = np.linspace(0.0, 1.5 * prof.cutoff, 65)
        for j in range(50):
            comp = shell_competitor(prof, rng, s_edges, mu_edges, "near" if j % 2 == 0 else "random")
            worst = min(worst, H_hat_cells(comp, s_edges, mu_edges, r, 1.0) - H)
    return report(10, worst >= -1e-9, f"min H(competitor) - H(psi) over 1000 competitors {worst:.3e}")


def criterion_11():
    sol = integrate_static(1.0, 0.95)
    M = sol.M
    beta = (0.05 * 4.0 * np.pi * M**2 / 3.0) ** (1.0 / 3.0)
    p = AdmissibleParams(M=M, beta=beta, k=1.0)
    r_edges = np.linspace(0.0, 1.25 * sol.R0, 129)
    st = minimize(p, r_edges, flat_profile(p, r_edges))
    rel = abs(st.D - sol.report.D) / abs(sol.report.D)
    rng = np.random.default_rng(11)
    grid = st.f.grid
    live = st.rho > 0
    cut = np.where(live, support_radius(st.eps), -1.0)
    inside = grid.s_edges[:-1][None, :, None] < cut[:, None, None]
    worst = np.inf
    for _ in range(100):
        shape = np.where(live, rng.uniform(0.1, 1.0, live.size), 0.0) * np.exp(-rng.uniform(0, 3) * grid.r_mid)
        rho_g = fill_to_mass(shape, grid.shell_volume, M, p.sigma0)
        w = rng.uniform(0.2, 1.0, grid.shape) * inside
        n = np.einsum("ijl,jl->i", w, grid.v_energy)
        w *= np.divide(rho_g, n, out=np.zeros_like(rho_g), where=n > 0)[:, None, None]
        vr = variational_residual(st, DistributionFunction(grid, w, 1.0))
        worst = min(worst, vr.slim, vr.unslimmed)
    ucv = st.residuals["U_cv"]
    ok = rel <= 1e-3 and worst >= -1e-8 and ucv <= 1e-2
    return report(11, ok, f"D rel err {rel:.2e} vs shooting, min residual {worst:.2e}, U cv {ucv:.2e}, "
                          f"{st.iter} iterations")


def criterion_12():
    b = saturation_bound()
    return report(12, abs(b - 0.998302) <= 1e-5, f"bound {b:.7f}")


def criterion_13():
    outs = []
    with tempfile.TemporaryDirectory() as tmp:
        for run in ("a", "b"):
            out = Path(tmp) / run
            proc = subprocess.run([sys.executable, "-m", "evcasimir.cli", "check", "--seed", "0",
                                   "--out", str(out)], capture_output=True)
            outs.append((proc.returncode, (out / "check_report.json").read_bytes(), proc.stdout))
    same = outs[0][1] == outs[1][1] and outs[0][2] == outs[1][2]
    return report(13, same, f"exit codes {outs[0][0]}, {outs[1][0]}; reports byte-identical: {same}")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7,
            criterion_8, criterion_9, criterion_10, criterion_11, criterion_12, criterion_13]


@pytest.mark.parametrize("criterion", CRITERIA, ids=[f"criterion_{i}" for i in range(1, 14)])
def test_acceptance(criterion):
    assert criterion()


if __name__ == "__main__":
    results = [c() for c in CRITERIA]
    sys.exit(0 if all(results) else 1)
