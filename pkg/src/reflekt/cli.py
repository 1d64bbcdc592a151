"""Command line: ``reflekt run|check|compare``.

Exit codes: 0 every flag passes, 1 an invariant or stability check fails,
2 the configuration (or the command line) is invalid.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional, Sequence

from .errors import ConfigError, InvariantFailure, IoFailure, ReflektError, ResolutionTooLarge, UnknownGenerator
from .experiment import ExperimentConfig, compare, emit_plot_data, emit_reports, load_report, run_experiment
from .generators import generate_example

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2

CONFIG_ERRORS = (ConfigError, UnknownGenerator, ResolutionTooLarge)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="reflekt", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("config", help="JSON configuration file")
        sp.add_argument("--seed", type=int, default=None, help="override the configured seed")
        sp.add_argument("--out", default=None, help="override the output directory")
        sp.add_argument("--max-points", type=int, default=None, help="cap on the number of points per instance")

    common(sub.add_parser("run", help="run the pipeline and write reports and plot data"))
    common(sub.add_parser("check", help="validate the configuration and instance sizes without computing"))
    c = sub.add_parser("compare", help="refinement-stability diff between two report bundles")
    c.add_argument("bundle_a")
    c.add_argument("bundle_b")
    return p


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out_dir"] = args.out
    return cfg.replace(**changes) if changes else cfg


def _max_points(args) -> Optional[int]:
    if args.max_points is not None and args.max_points <= 0:
        raise ConfigError("--max-points must be positive")
    return args.max_points


def _cmd_check(args) -> int:
    cfg = _config(args)
    cap = _max_points(args)
    sizes = []
    for params in cfg.levels:
        space, _ = generate_example(cfg.generator, params, max_points_override=cap)
        sizes.append(space.n)
    print(json.dumps({"generator": cfg.generator, "levels": len(sizes), "n_points": sizes, "valid": True}))
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = _config(args)
    cap = _max_points(args)
    try:
        bundle = run_experiment(cfg, max_points=cap)
    except InvariantFailure as exc:
        print(json.dumps({"failure": {"module": exc.module, "operation": exc.operation, "message": str(exc),
                                      "witness": repr(exc.witness)}}), file=sys.stderr)
        return EXIT_FAIL
    emit_reports(bundle, cfg.out_dir)
    emit_plot_data(bundle, cfg.out_dir)
    fails = bundle.failures()
    for name in fails:
        print(f"FAIL {name}")
    print(f"{'PASS' if not fails else 'FAIL'}: {len(bundle.flags) - len(fails)}/{len(bundle.flags)} checks pass; "
          f"reports in {os.path.abspath(cfg.out_dir)}")
    return EXIT_OK if not fails else EXIT_FAIL


def _cmd_compare(args) -> int:
    a, b = load_report(args.bundle_a), load_report(args.bundle_b)
    th = (a.get("config") or {}).get("thresholds")
    diff = compare(a, b, th)
    for name, s in diff.items():
        x, y = s["values"]
        print(f"{'PASS' if s['pass'] else 'FAIL'} {name}: {x:.6g} -> {y:.6g} (change {s['change']:.4g})")
    return EXIT_OK if all(s["pass"] for s in diff.values()) else EXIT_FAIL


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    handler = {"run": _cmd_run, "check": _cmd_check, "compare": _cmd_compare}[args.command]
    try:
        return handler(args)
    except CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IoFailure as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except ReflektError as exc:
        print(f"invariant failure: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
