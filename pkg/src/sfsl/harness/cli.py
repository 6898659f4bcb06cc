"""Command-line entry point: ``sfsl <command> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
from pathlib import Path

import yaml

from ..errors import ConfigError, SFSLError
from ..perturb import CPP_PRESETS, privacy_report, resolve_params
from .cost_model import METRICS, ROLES, CostModelInput, predict_cost
from .experiments import PRESETS, linear_fit, load_config, load_preset, run_experiment

log = logging.getLogger("sfsl")

SMALL_GROUP_HELP = "use the 256-bit test group for key agreement (fast, not secure)"


def configure_logging():
    level_name = os.environ.get("SFSL_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _parse_range(text: str) -> list:
    try:
        parts = [int(p) for p in text.split(":")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad range {text!r}, expected a:b:step") from None
    if len(parts) == 2:
        parts.append(1)
    if len(parts) != 3 or parts[2] <= 0 or parts[0] > parts[1]:
        raise argparse.ArgumentTypeError(f"bad range {text!r}, expected a:b:step with a <= b, step > 0")
    a, b, step = parts
    return list(range(a, b + 1, step))


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        if v.is_integer() and abs(v) < 1e15:
            return str(int(v))
        return f"{v:.4g}"
    return str(v)


def _print_table(rows: list, columns: list):
    widths = [max(len(c), *(len(_fmt(r[c])) for r in rows)) for c in columns]
    print("  ".join(c.ljust(w) for c, w in zip(columns, widths)))
    for r in rows:
        print("  ".join(_fmt(r[c]).ljust(w) for c, w in zip(columns, widths)))


def cmd_run(args) -> int:
    cfg = load_preset(args.preset) if args.preset else load_config(args.config)
    if args.insecure_small_group:
        cfg = dataclasses.replace(cfg, group="small256")
    out = Path(args.out) if args.out else Path("runs") / cfg.name
    result = run_experiment(cfg, out, dropout=args.dropout, transport=args.transport, seed=args.seed)
    s = result.summary
    print(f"wrote {result.csv_path} and {result.summary_path}")
    for scheme, vals in s["schemes"].items():
        print(f"{scheme}: mean client bytes {vals['client_bytes_mean']:.0f}, mean union size {vals['union_size_mean']:.1f}")
    if "client_bytes_reduction" in s:
        print(f"client byte reduction vs full-model baseline: {100 * s['client_bytes_reduction']:.2f}%")
    if s["aborted"]:
        print(f"{s['aborted']} of {s['rounds']} rounds aborted (too few live clients)")
    return 2 if s["aborted"] == s["rounds"] else 0


def cmd_psu_bench(args) -> int:
    cfg = load_config(args.config) if args.config else load_preset("psu-bench")
    cfg = dataclasses.replace(cfg, n_values=args.n_range, psu_only=True, schemes=["sfsl"])
    if args.insecure_small_group:
        cfg = dataclasses.replace(cfg, group="small256")
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    cfg.validate()
    result = run_experiment(cfg, args.out)
    rows = [
        {"n": r["n"], "union_size": r["union_size"], "client_bytes": r["client_union_bytes_mean"],
         "seconds": r["seconds_total"]}
        for r in result.rows if not r["aborted"]
    ]
    _print_table(rows, ["n", "union_size", "client_bytes", "seconds"])
    if len(rows) >= 2:
        slope, _, r2 = linear_fit([r["n"] for r in rows], [r["client_bytes"] for r in rows])
        print(f"linear fit: {slope:.1f} bytes per extra client, R^2 = {r2:.4f}")
    return 0


def _load_cpps(path) -> dict:
    raw = yaml.safe_load(Path(path).read_text())
    if isinstance(raw, list):
        return {str(name): resolve_params(str(name)) for name in raw}
    if isinstance(raw, dict):
        return {str(name): resolve_params(spec if spec is not None else str(name)) for name, spec in raw.items()}
    raise ConfigError(f"{path}: expected a list of preset names or a mapping name -> [p1, p2, p3, p4]")


def cmd_privacy_table(args) -> int:
    cpps = _load_cpps(args.cpp_file) if args.cpp_file else dict(CPP_PRESETS)
    rows = [privacy_report(p, args.nj1, args.nj0, name).row() for name, p in cpps.items()]
    if args.json:
        print(json.dumps(rows, indent=2, default=lambda v: "inf"))
    else:
        _print_table(rows, ["cpp", "p1", "p2", "p3", "p4", "p5", "p6", "eps_one", "eps_inf", "p7", "p8"])
    return 0


def cmd_cost_model(args) -> int:
    p5, p6 = args.p5, args.p6
    if args.cpp:
        params = resolve_params(args.cpp)
        p5, p6 = params.p5, params.p6
    roles = ROLES if args.role == "both" else (args.role,)
    rows = []
    for role in roles:
        x = CostModelInput(n=args.n, s=args.s, m=args.m, d=args.d, p5=p5, p6=p6, role=role, scheme=args.scheme)
        for metric in METRICS:
            est = predict_cost(x, metric)
            terms = " + ".join(f"{k}={_fmt(v)}" for k, v in est.terms.items())
            rows.append({"role": role, "metric": metric, "total": est.total, "terms": terms})
    _print_table(rows, ["role", "metric", "total", "terms"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sfsl", description="Federated submodel learning protocol harness")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a config file or preset")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="YAML experiment config")
    src.add_argument("--preset", choices=PRESETS)
    run.add_argument("--dropout", type=float, default=None, metavar="RHO", help="dropout ratio in [0, 1]")
    run.add_argument("--transport", choices=("inproc", "socket"), default=None)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", help="output directory (default runs/<name>)")
    run.add_argument("--insecure-small-group", action="store_true", help=SMALL_GROUP_HELP)
    run.set_defaults(func=cmd_run)

    bench = sub.add_parser("psu-bench", help="union-only rounds over a range of roster sizes")
    bench.add_argument("--n-range", type=_parse_range, required=True, metavar="A:B:STEP")
    bench.add_argument("--config", help="base config (default: psu-bench preset)")
    bench.add_argument("--seed", type=int, default=None)
    bench.add_argument("--out", default=None)
    bench.add_argument("--insecure-small-group", action="store_true", help=SMALL_GROUP_HELP)
    bench.set_defaults(func=cmd_psu_bench)

    priv = sub.add_parser("privacy-table", help="privacy levels and event probabilities per CPP")
    priv.add_argument("--cpp-file", help="YAML list of preset names, or mapping name -> [p1, p2, p3, p4]")
    priv.add_argument("--nj0", type=float, required=True, help="live clients without the index")
    priv.add_argument("--nj1", type=float, required=True, help="live clients holding the index")
    priv.add_argument("--json", action="store_true")
    priv.set_defaults(func=cmd_privacy_table)

    cost = sub.add_parser("cost-model", help="closed-form cost terms")
    cost.add_argument("--scheme", choices=("sfsl", "sfl", "psu"), required=True)
    cost.add_argument("--n", type=float, required=True)
    cost.add_argument("--s", type=float, default=0.0)
    cost.add_argument("--m", type=float, default=0.0)
    cost.add_argument("--d", type=float, default=0.0)
    cost.add_argument("--p5", type=float, default=1.0)
    cost.add_argument("--p6", type=float, default=1.0)
    cost.add_argument("--cpp", help="take p5, p6 from a preset such as CPP2")
    cost.add_argument("--role", choices=("client", "server", "both"), default="both")
    cost.set_defaults(func=cmd_cost_model)
    return p


def main(argv=None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SFSLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
