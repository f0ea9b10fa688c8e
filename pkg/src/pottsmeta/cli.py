"""Command-line entry point.

Exit codes: 0 success, 1 usage or input error, 2 failed consistency
assertion, 3 resource cap exceeded.
"""

from __future__ import annotations

import argparse
from dataclasses import asdict
import json
from pathlib import Path
import sys
from typing import Optional, Sequence

import numpy as np

from . import geometry as geo
from .dynamics import METHODS, simulate_hitting
from .harness import (
    ExperimentResult,
    SpecError,
    load_spec,
    rows_to_csv,
    run_hitting_experiment,
    _row,
    _with,
    ExperimentSpec,
)
from .landscape import barrier_comparisons, barrier_report, prefactor_from_counts
from .lattice import ConfigurationError, ModelParams, energy, loads
from .oracle import ResourceCapError, build_graph, oracle_report

EXIT_OK, EXIT_USAGE, EXIT_ASSERT, EXIT_CAP = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits with 2 by default
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _model_args(p: argparse.ArgumentParser, beta: bool = False) -> None:
    p.add_argument("--q", type=int, default=3)
    p.add_argument("--K", type=int, default=9)
    p.add_argument("--L", type=int, default=9)
    p.add_argument("--h", type=float, default=0.9)
    p.add_argument("--relaxed", action="store_true", help="allow K < 3*ell_star")
    if beta:
        p.add_argument("--beta", type=float, default=3.0)


def _params(a, beta: float = 1.0) -> ModelParams:
    return ModelParams(a.q, a.K, a.L, a.h, beta, relaxed=a.relaxed)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pottsmeta", description="Metastability toolkit for the q-state Potts model with a negative field.")
    parser.add_argument("--seed", type=int, default=None, help="master seed (default 0, or the spec value)")
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--out", default=None, help="output file (simulate, landscape, classify, oracle) or directory (experiment)")
    parser.add_argument("--format", choices=("csv", "json"), default="json")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="one hitting trajectory from all-1")
    _model_args(s, beta=True)
    s.add_argument("--replica", type=int, default=0)
    s.add_argument("--method", choices=METHODS, default="rejection-free")
    s.add_argument("--step-cap", type=int, default=None)
    s.add_argument("--target", type=int, default=0, help="0 = any stable state")

    e = sub.add_parser("experiment", help="run a spec file")
    e.add_argument("spec")

    la = sub.add_parser("landscape", help="closed-form barrier report")
    _model_args(la)
    la.add_argument("--count-gates", action="store_true", help="also enumerate gates and count Theta")

    c = sub.add_parser("classify", help="classify a configuration file")
    c.add_argument("config")

    o = sub.add_parser("oracle", help="exhaustive micro-instance report")
    _model_args(o)
    o.add_argument("--spec", default=None, help="INI file with a [model] section (and optional beta)")
    o.add_argument("--beta", type=float, default=None)
    return parser


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (bool, int, float, str)) or x is None:
        return x
    return str(x)


def _dump(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def cmd_simulate(a) -> int:
    params = _params(a, a.beta)
    seed = a.seed or 0
    rec = simulate_hitting(params, seed, a.replica, target=a.target,
                           step_cap=a.step_cap, method=a.method)
    spec = ExperimentSpec(a.q, a.K, a.L, a.h, (a.beta,), 1, seed=seed)
    row = _row(spec, params, rec)
    if a.format == "csv":
        _emit(rows_to_csv([row]), a.out)
    else:
        d = asdict(row)
        d["max_energy_seen"] = params.value(rec.max_energy_seen)
        _emit(_dump(d), a.out)
    return EXIT_OK


def cmd_experiment(a) -> int:
    spec = load_spec(a.spec)
    changes = {"seed": a.seed} if a.seed is not None else {}
    if a.threads is not None:
        changes["threads"] = a.threads
    if changes:
        spec = _with(spec, **changes)
    res: ExperimentResult = run_hitting_experiment(spec)
    raw, summary = spec.raw_path, spec.summary_path
    if a.out:
        Path(a.out).mkdir(parents=True, exist_ok=True)
        raw = str(Path(a.out) / "raw.csv")
        summary = str(Path(a.out) / "summary.json")
    if raw or summary:
        res.write(raw, summary)
    else:
        _emit(rows_to_csv(res.rows) if a.format == "csv" else res.summary.to_json() + "\n", None)
    return EXIT_OK


def cmd_landscape(a) -> int:
    params = _params(a)
    rep = barrier_report(params)
    doc = rep.as_dict(params)
    cmp = barrier_comparisons(params)
    doc["comparisons"] = cmp
    if a.count_gates:
        counts = prefactor_from_counts(params)
        doc["counted"] = {"G1": counts.g1, "G2": counts.g2, "theta": str(counts.theta)}
        if counts.theta != rep.theta:
            _emit(_dump(doc), a.out)
            return EXIT_ASSERT
    _emit(_dump(doc), a.out)
    return EXIT_OK


def cmd_classify(a) -> int:
    config, q, h = loads(Path(a.config).read_text())
    params = ModelParams(q, config.K, config.L, h, relaxed=True)
    shape = geo.classify_shape(config)
    es = geo.edge_stats(config)
    bs = geo.bridge_stats(config)
    doc = {
        "q": q, "K": config.K, "L": config.L, "h": h,
        "energy": params.value(energy(config, params)),
        "shape": {"class": type(shape).__name__, **asdict(shape)},
        "gate": geo.gate_class(config, params),
        "in_tube": geo.in_tube(config, params),
        "local_minimum": geo.classify_local_minimum(config, params),
        "disagreeing_edges": {"horizontal": es.d_h, "vertical": es.d_v},
        "bridges": {str(s): bs.B(s) for s in sorted(bs.by_spin)},
    }
    _emit(_dump(doc), a.out)
    return EXIT_OK


def cmd_oracle(a) -> int:
    import configparser

    beta = a.beta
    q, K, L, h, relaxed = a.q, a.K, a.L, a.h, True
    if a.spec:
        cp = configparser.ConfigParser()
        cp.read_string(Path(a.spec).read_text())
        m = cp["model"]
        q, K, L, h = int(m["q"]), int(m["K"]), int(m["L"]), float(m["h"])
        if beta is None and "beta" in m:
            beta = float(m["beta"])
    params = ModelParams(q, K, L, h, relaxed=relaxed)
    graph = build_graph(params)
    _emit(_dump(oracle_report(graph, beta)), a.out)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "experiment": cmd_experiment,
    "landscape": cmd_landscape,
    "classify": cmd_classify,
    "oracle": cmd_oracle,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
        return COMMANDS[a.command](a)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SpecError, ConfigurationError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AssertionError as exc:
        print(f"assertion failed: {exc}", file=sys.stderr)
        return EXIT_ASSERT
    except ResourceCapError as exc:
        print(f"resource cap: {exc}", file=sys.stderr)
        return EXIT_CAP


if __name__ == "__main__":
    sys.exit(main())
