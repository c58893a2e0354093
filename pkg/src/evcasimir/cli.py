"""Command line entry point.

    evcasimir static   --k 1 --central-eps 0.9
    evcasimir sweep    --k 1 --eps-min 0.5 --eps-max 0.98 --n 20
    evcasimir witness  --k 1 --M 1 --b 0.05
    evcasimir evaluate --input f.json [--M 1 --beta 0.3]
    evcasimir rearrange --input f.json --ops cap,improve_tail --k 1 --M 1 --beta 0.3
    evcasimir minimize --k 1 --M 0.118 --beta 0.143 --n-r 128
    evcasimir check    --seed 0

Flags override values from --config (a JSON object keyed by flag names with
dashes or underscores). Exit status 0 on success, 1 on a computation error and
2 on a usage error; errors are also written to stderr as JSON.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io as fio
from .checks import run_checks
from .errors import EvCasimirError, UsageError
from .functional import evaluate
from .grid import AdmissibleParams, check_admissible, theta
from .minimize import (
    MinimizeOptions,
    convergence_diagnostics,
    flat_profile,
    minimize,
)
from .rearrange import cap_excess, improve_tail, remove_gap, restrict_rescale, tail_rearrange
from .static import (
    check_cbec,
    cbec_witness,
    integrate_static,
    sweep_family,
    witness_small_b_ratio,
)

COMMANDS = ("static", "sweep", "witness", "evaluate", "rearrange", "minimize", "check")

# name -> (type, default); None means "no default"
OPTIONS: dict[str, tuple[type, object]] = {
    "k": (float, None),
    "M": (float, None),
    "beta": (float, None),
    "sigma0": (float, None),
    "b": (float, None),
    "central_eps": (float, 0.9),
    "eps_min": (float, 0.5),
    "eps_max": (float, 0.98),
    "n": (int, 20),
    "n_r": (int, 128),
    "n_s": (int, 64),
    "n_mu": (int, 1),
    "r_max": (float, None),
    "max_iter": (int, 500),
    "input": (str, None),
    "ops": (str, "cap,improve_tail"),
    "init": (str, "flat"),
    "out": (str, "evcasimir_out"),
    "seed": (int, 0),
    "sidecar": (bool, False),
    "adaptive_nodes": (bool, False),
    "remove_gaps": (bool, False),
}

REQUIRED = {
    "static": ("k",),
    "sweep": ("k",),
    "witness": ("k", "M", "b"),
    "evaluate": ("input",),
    "rearrange": ("input", "k", "M", "beta"),
    "minimize": ("k", "M", "beta"),
    "check": (),
}


@dataclass
class RunConfig:
    command: str
    params: AdmissibleParams | None
    options: dict
    out_dir: Path
    seed: int = 0
    threads: int = 1
    grid: dict = field(default_factory=dict)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="evcasimir", description="Particle-number-Casimir toolkit")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None, help="JSON file with default option values")
        for opt, (typ, _) in OPTIONS.items():
            flag = "--" + opt.replace("_", "-")
            if typ is bool:
                sp.add_argument(flag, dest=opt, action="store_const", const=True, default=None)
            else:
                sp.add_argument(flag, dest=opt, type=typ, default=None)
    return parser


def _load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"config: cannot read {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError("config: top level must be a JSON object")
    out = {}
    for key, val in data.items():
        name = key.replace("-", "_")
        if name not in OPTIONS:
            raise UsageError(f"config: unknown field {key!r}")
        typ = OPTIONS[name][0]
        try:
            out[name] = typ(val) if val is not None else None
        except (TypeError, ValueError) as exc:
            raise UsageError(f"config: field {key!r}: {exc}") from exc
    return out


def _threads() -> int:
    raw = os.environ.get("EVCASIMIR_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"EVCASIMIR_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("EVCASIMIR_THREADS must be a positive integer")
    return n


def parse_config(argv=None) -> RunConfig:
    args = build_parser().parse_args(argv)
    if args.command is None:
        raise UsageError(f"missing subcommand (one of {', '.join(COMMANDS)})")
    values = {name: default for name, (_, default) in OPTIONS.items()}
    if args.config:
        values.update(_load_config(args.config))
    for name in OPTIONS:
        flag = getattr(args, name)
        if flag is not None:
            values[name] = flag
    for name in REQUIRED[args.command]:
        if values[name] is None:
            raise UsageError(f"--{name.replace('_', '-')}: required for '{args.command}'")
    for name in ("n", "n_r", "n_s", "n_mu", "max_iter"):
        if values[name] < 1:
            raise UsageError(f"--{name.replace('_', '-')}: must be positive")
    params = None
    if values["k"] is not None and values["M"] is not None and values["beta"] is not None:
        try:
            params = AdmissibleParams(M=values["M"], beta=values["beta"], k=values["k"],
                                      sigma0=values["sigma0"])
        except ValueError as exc:
            raise UsageError(f"params: {exc}") from exc
    elif values["k"] is not None and not 0.0 < values["k"] <= 2.0:
        raise UsageError("--k: must lie in (0, 2]")
    return RunConfig(
        command=args.command, params=params, options=values, out_dir=Path(values["out"]),
        seed=values["seed"], threads=_threads(),
        grid={"n_r": values["n_r"], "n_s": values["n_s"], "n_mu": values["n_mu"],
              "r_max": values["r_max"], "adaptive_nodes": values["adaptive_nodes"]},
    )


# -- commands

def _static(cfg: RunConfig) -> dict:
    o = cfg.options
    sol = integrate_static(o["k"], o["central_eps"])
    prof = sol.profile
    fio.write_profile(cfg.out_dir / "static_profile.csv", prof.columns())
    doc = {"metadata": sol.to_metadata(), "report": sol.report.to_dict(),
           "cbec": check_cbec(sol.report).to_dict(), "compactness": sol.compactness,
           "m10_residual": sol.m10_residual}
    fio.write_json(cfg.out_dir / "static.json", doc)
    return doc


def _sweep_rows(k, lo, hi, n, threads):
    if threads <= 1 or n < 2:
        return sweep_family(k, (lo, hi), n)
    # members are independent; split the range into per-member sweeps of length 1
    eps = np.linspace(lo, hi, n)
    with ProcessPoolExecutor(max_workers=threads) as pool:
        parts = pool.map(sweep_family, [k] * n, [(float(e), float(e)) for e in eps], [2] * n)
        return [rows[0] for rows in parts]


def _sweep(cfg: RunConfig) -> dict:
    o = cfg.options
    rows = _sweep_rows(o["k"], o["eps_min"], o["eps_max"], o["n"], cfg.threads)
    fio.atomic_write_text(cfg.out_dir / "sweep.csv", fio.sweep_csv(rows))
    doc = {"k": o["k"], "rows": [r.__dict__ for r in rows]}
    fio.write_json(cfg.out_dir / "sweep.json", doc)
    return {"rows": len(rows), "errors": sum(bool(r.error) for r in rows)}


def _witness(cfg: RunConfig) -> dict:
    o = cfg.options
    k, M, b = o["k"], o["M"], o["b"]
    A = (1.0 / 8.0) ** k
    a = (3.0 * M / (4.0 * np.pi * A * float(theta(b)))) ** (1.0 / 3.0)
    # without explicit params take the smallest beta admitting the witness: then
    # sigma0 = 3 beta^3 / (4 pi M^2) equals A theta(b) exactly
    params = cfg.params or AdmissibleParams(M=M, beta=M / a, k=k, sigma0=o["sigma0"])
    w = cbec_witness(k, M, params.sigma0 * (1.0 + 1e-12), b)
    rep = evaluate(w.f)
    doc = {
        "params": params.to_dict(), "A": w.A, "a": w.a, "b": w.b, "c": w.c,
        "D_closed": w.D_closed, "D_quadrature": rep.D,
        "rel_err": abs(rep.D - w.D_closed) / abs(w.D_closed),
        "ratio": w.ratio, "small_b_ratio_limit": witness_small_b_ratio(k, A),
        "cbec": w.verdict, "report": rep.to_dict(),
    }
    fio.write_json(cfg.out_dir / "witness.json", doc)
    fio.write_distribution(cfg.out_dir / "witness_f.json", w.f, params.to_dict(), sidecar=o["sidecar"])
    return doc


def _evaluate(cfg: RunConfig) -> dict:
    f, file_params = fio.read_distribution(cfg.options["input"])
    params = cfg.params
    if params is None and file_params:
        params = AdmissibleParams(**file_params)
    rep = evaluate(f)
    doc = {"report": rep.to_dict(), "cbec": check_cbec(rep).to_dict()}
    if params is not None:
        adm = check_admissible(f, params)
        doc["admissibility"] = adm.to_dict()
        doc["admissible"] = adm.admissible
        doc["params"] = params.to_dict()
    else:
        doc["admissible"] = False
        doc["admissibility"] = None
    fio.write_json(cfg.out_dir / "evaluate.json", doc)
    return doc


def _parse_op(spec: str):
    name, *args = spec.strip().split(":")
    try:
        vals = [float(x) for x in args]
    except ValueError:
        raise UsageError(f"--ops: bad arguments in {spec!r}") from None
    arity = {"cap": 0, "improve_tail": 0, "tail": 1, "remove_gap": 2, "restrict_rescale": 1}
    if name not in arity:
        raise UsageError(f"--ops: unknown operator {name!r} (known: {', '.join(arity)})")
    if len(vals) != arity[name]:
        raise UsageError(f"--ops: {name} takes {arity[name]} argument(s)")
    return name, vals


def _rearrange(cfg: RunConfig) -> dict:
    ops = [_parse_op(s) for s in cfg.options["ops"].split(",") if s.strip()]
    if not ops:
        raise UsageError("--ops: empty operator chain")
    f, _ = fio.read_distribution(cfg.options["input"])
    p = cfg.params
    adaptive = bool(cfg.options["adaptive_nodes"])
    traces = []
    for i, (name, vals) in enumerate(ops, start=1):
        if name == "cap":
            f, tr = cap_excess(f)
        elif name == "improve_tail":
            f, tr = improve_tail(f, p, adaptive=adaptive)
        elif name == "tail":
            f, tr = tail_rearrange(f, vals[0], p, adaptive=adaptive)
        elif name == "remove_gap":
            f, tr = remove_gap(f, vals[0], vals[1])
        else:
            f, tr = restrict_rescale(f, vals[0])
        stage = f"stage_{i:02d}_{name}.json"
        fio.write_distribution(cfg.out_dir / stage, f, p.to_dict(), sidecar=cfg.options["sidecar"])
        traces.append({"stage_file": stage, **tr.to_dict()})
    fio.write_json(cfg.out_dir / "traces.json", {"traces": traces})
    return {"traces": traces}


def _minimize(cfg: RunConfig) -> dict:
    p = cfg.params
    o = cfg.options
    r_max = o["r_max"]
    if r_max is None:
        # a ball at half the cap holds the mass; leave room for spreading
        r_max = 3.0 * (3.0 * p.M / (4.0 * np.pi * 0.5 * p.sigma0)) ** (1.0 / 3.0)
    r_edges = np.linspace(0.0, r_max, o["n_r"] + 1)
    if o["init"] == "flat":
        init = flat_profile(p, r_edges)
    else:
        cols = fio.read_profile(o["init"])
        init = np.interp(0.5 * (r_edges[1:] + r_edges[:-1]), cols["r"], cols["rho"], right=0.0)
        init = np.minimum(init, p.sigma0)
        V = 4.0 * np.pi / 3.0 * np.diff(r_edges**3)
        init *= p.M / float(init @ V)
    st = minimize(p, r_edges, init, MinimizeOptions(max_iter=o["max_iter"], remove_gaps=o["remove_gaps"],
                                                    n_s=o["n_s"], n_mu=o["n_mu"]))
    diag = convergence_diagnostics(st)
    fio.write_json(cfg.out_dir / "minimizer.json", st.to_dict())
    fio.write_profile(cfg.out_dir / "minimizer_profile.csv", st.profile_columns())
    fio.write_json(cfg.out_dir / "diagnostics.json", diag.to_dict())
    return {"D": st.D, "iter": st.iter, "converged": st.converged, "stop_reason": st.stop_reason,
            "residuals": st.residuals, "diagnostics": diag.to_dict()}


def _check(cfg: RunConfig) -> dict:
    rep = run_checks(cfg.seed)
    fio.write_json(cfg.out_dir / "check_report.json", rep)
    return rep


HANDLERS = {"static": _static, "sweep": _sweep, "witness": _witness, "evaluate": _evaluate,
            "rearrange": _rearrange, "minimize": _minimize, "check": _check}


def run(cfg: RunConfig) -> int:
    result = HANDLERS[cfg.command](cfg)
    sys.stdout.write(fio.dumps(result))
    if cfg.command == "check" and not result["passed"]:
        return 1
    return 0


def _fail(kind: str, exc: BaseException, status: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}) + "\n")
    return status


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except UsageError as exc:
        return _fail("usage", exc, 2)
    try:
        return run(cfg)
    except UsageError as exc:
        return _fail("usage", exc, 2)
    except (EvCasimirError, ValueError, ArithmeticError, OSError) as exc:
        return _fail("computation", exc, 1)


if __name__ == "__main__":
    sys.exit(main())
