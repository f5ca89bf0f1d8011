"""Command-line entry point ``gnflow``.

Exit codes: 0 success, 1 config or data error, 2 invariant-suite failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .checks import LEVELS, check
from .config import ConfigError, load_config
from .data import DataError
from .experiment import run, spectral

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 1, 2


def _print_runs(summary: dict) -> None:
    for e in summary["runs"]:
        if e["status"] != "ok":
            print(f"alpha={e['alpha_token']} rho={e['rho']}: ERROR {e['error']}")
            continue
        held = ", ".join(f"{v['bound']['kind']} {'held' if v['held'] else 'VIOLATED'} "
                         f"(max ratio {v['max_ratio']:.3g}"
                         f"{'' if v.get('premises_met', True) else ', alpha below threshold'})"
                         for v in e["verdicts"]) or "no bound"
        ext = "no exit" if e["exit_step"] is None else f"exit at t={e['exit_time']:.4g}"
        print(f"alpha={e['alpha']:.6g} rho={e['rho']:g}: final loss {e['final_loss']:.6g}, "
              f"{ext}, {e['stop_reason']}; {held}")
    for c in summary.get("comparisons", []):
        t = c["time_to_baseline_loss"]
        msg = "never" if t is None else f"t={t:.4g} ({100 * c['fraction_of_horizon']:.1f}% of horizon)"
        print(f"alpha={c['alpha']:.6g} rho={c['rho']:g} reaches baseline loss "
              f"{c['baseline_final_loss']:.6g}: {msg}")


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    summary = run(cfg, out_dir=args.out, workers=args.workers)
    if "error" in summary:
        print(f"error: {summary['error']}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{len(summary['runs'])} run(s); regime {summary['spectral']['regime']}")
    _print_runs(summary)
    return EXIT_OK


def cmd_spectral(args) -> int:
    print(json.dumps(spectral(load_config(args.config)), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_check(args) -> int:
    results = check(args.level, seed=args.seed)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_INVARIANT


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gnflow", description="Gauss-Newton training dynamics of shallow networks")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "run every (alpha, rho) pair of a config"),
                           ("sweep", "alias of run")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config")
        p.add_argument("--out", default=None, help="output directory (overrides [output] dir)")
        p.add_argument("--workers", type=int, default=None, help="parallel trajectories")
        p.set_defaults(func=cmd_run)
    p = sub.add_parser("spectral", help="print the spectral report at initialization")
    p.add_argument("config")
    p.set_defaults(func=cmd_spectral)
    p = sub.add_parser("check", help="run the invariant suites")
    p.add_argument("--level", choices=sorted(LEVELS), default="quick")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
