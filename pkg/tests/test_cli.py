import json

import numpy as np
import pytest

from evcasimir import io as fio
from evcasimir.cli import main, parse_config
from evcasimir.grid import AdmissibleParams, DistributionFunction, make_grid
from evcasimir.samples import random_relaxed


def _err(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_sigma0_and_P0_defaults():
    cfg = parse_config(["minimize", "--k", "1.0", "--M", "1.0", "--beta", "0.3"])
    assert cfg.params.sigma0 == pytest.approx(3 * 0.3**3 / (4 * np.pi), rel=1e-14)
    assert cfg.params.P0 == pytest.approx(6400.0)
    assert cfg.grid["adaptive_nodes"] is False


def test_config_file_and_override(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"k": 1.0, "central-eps": 0.7, "n_r": 64}))
    cfg = parse_config(["static", "--config", str(conf), "--n-r", "32"])
    assert cfg.options["central_eps"] == 0.7 and cfg.options["n_r"] == 32


@pytest.mark.parametrize("argv", [
    ["minimize", "--M", "1.0", "--beta", "0.3"],
    ["static"],
    [],
    ["static", "--k", "1", "--n", "0"],
    ["minimize", "--k", "1", "--M", "1", "--beta", "0.9"],
])
def test_usage_errors(argv, capsys):
    assert main(argv) == 2
    assert _err(capsys)["error"] == "usage"


def test_unknown_config_field(tmp_path, capsys):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"bogus": 1}))
    assert main(["static", "--config", str(conf), "--k", "1"]) == 2


def test_no_support_is_computation_error(tmp_path, capsys):
    assert main(["static", "--k", "1", "--central-eps", "1.0", "--out", str(tmp_path)]) == 1
    err = _err(capsys)
    assert err["error"] == "computation" and err["type"] == "NoSupportError"


def test_static_outputs(tmp_path, capsys):
    assert main(["static", "--k", "1", "--central-eps", "0.8", "--out", str(tmp_path)]) == 0
    meta = json.loads((tmp_path / "static.json").read_text())["metadata"]
    assert set(meta) == {"k", "central_eps", "C", "R0", "M", "D"}
    assert (tmp_path / "static_profile.csv").read_text().startswith("r,rho,m,lambda,mu,p\n")


def test_evaluate_zero(tmp_path, capsys):
    g = make_grid(1.0, 4, 2.0, 4)
    src = fio.write_distribution(tmp_path / "z.json", DistributionFunction.zeros(g))
    assert main(["evaluate", "--input", str(src), "--out", str(tmp_path / "o")]) == 0
    doc = json.loads((tmp_path / "o" / "evaluate.json").read_text())
    assert doc["report"]["D"] == 0.0 and doc["admissible"] is False


def test_witness_outputs(tmp_path, capsys):
    assert main(["witness", "--k", "1", "--M", "1", "--b", "0.05", "--out", str(tmp_path), "--sidecar"]) == 0
    doc = json.loads((tmp_path / "witness.json").read_text())
    assert doc["rel_err"] <= 1e-6
    assert doc["cbec"] is False and doc["ratio"] == pytest.approx(0.9761, abs=1e-3)
    f, params = fio.read_distribution(tmp_path / "witness_f.json")
    assert params["sigma0"] == pytest.approx(doc["A"] * 4 * np.pi / 3 * (0.05**3) * 1.0, rel=1e-3)


def test_rearrange_chain(tmp_path, capsys):
    p = AdmissibleParams(M=1.0, beta=0.3)
    g = make_grid(5.0, 16, 4.0 * p.P0 + 10.0, 48, n_mu=2)
    f = random_relaxed(g, p, np.random.default_rng(7), tail="1")
    src = fio.write_distribution(tmp_path / "f.json", f, p.to_dict())
    out = tmp_path / "o"
    ops = "cap,improve_tail,restrict_rescale:1.25"
    assert main(["rearrange", "--input", str(src), "--k", "1", "--M", "1", "--beta", "0.3",
                 "--ops", ops, "--out", str(out)]) == 0
    traces = json.loads((out / "traces.json").read_text())["traces"]
    assert [t["stage_file"] for t in traces] == [
        "stage_01_cap.json", "stage_02_improve_tail.json", "stage_03_restrict_rescale.json"]
    for t in traces[:2]:
        assert t["D_after"] <= t["D_before"] + 1e-12
    assert traces[2]["D_after"] <= traces[2]["D_bound"] * (1 + 1e-12)


def test_bad_op(tmp_path, capsys):
    g = make_grid(1.0, 4, 2.0, 4)
    src = fio.write_distribution(tmp_path / "z.json", DistributionFunction.zeros(g))
    argv = ["rearrange", "--input", str(src), "--k", "1", "--M", "1", "--beta", "0.3", "--out", str(tmp_path)]
    assert main(argv + ["--ops", "shuffle"]) == 2
    assert main(argv + ["--ops", "remove_gap:1"]) == 2


def test_minimize_outputs(tmp_path, capsys):
    M = 0.11814724421261638
    beta = (0.05 * 4 * np.pi * M**2 / 3) ** (1 / 3)
    assert main(["minimize", "--k", "1", "--M", repr(M), "--beta", repr(beta), "--n-r", "32",
                 "--n-s", "16", "--out", str(tmp_path)]) == 0
    st = json.loads((tmp_path / "minimizer.json").read_text())
    assert st["converged"]
    diag = json.loads((tmp_path / "diagnostics.json").read_text())
    assert diag["v_support_ok"] is True
    cols = fio.read_profile(tmp_path / "minimizer_profile.csv")
    assert np.all(cols["rho"] <= 0.05 + 1e-12)


def test_threads_env(monkeypatch, capsys):
    monkeypatch.setenv("EVCASIMIR_THREADS", "zero")
    assert main(["static", "--k", "1"]) == 2
