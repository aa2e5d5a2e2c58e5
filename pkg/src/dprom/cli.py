"""Command line interface: ``dprom build|run|compare|check``.

Exit codes: 0 success, 1 a pipeline stage failed (see ``error.json``),
2 invalid configuration or arguments.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .checks import run_checks
from .exceptions import ConfigurationError
from .scenario import (StageError, TimingReport, build_tensors, compare_runs,
                       default_out_dir, load_scenario, run_scenario)

log = logging.getLogger("dprom")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dprom", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"dprom {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", help="build basis and tensors into a snapshot")
    b.add_argument("--config", required=True, type=Path)
    b.add_argument("--out", type=Path, help="run directory (default $DPROM_OUT/<name>)")
    b.add_argument("--snapshot", type=Path, help="snapshot root (default <out>/snapshots)")
    b.add_argument("--force", action="store_true", help="ignore matching snapshots")

    r = sub.add_parser("run", help="run a scenario")
    r.add_argument("--config", required=True, type=Path)
    r.add_argument("--out", type=Path, help="run directory (default $DPROM_OUT/<name>)")
    r.add_argument("--jobs", type=int, default=1, help="worker processes")
    r.add_argument("--snapshot", type=Path, help="snapshot root (default <out>/snapshots)")
    r.add_argument("--seed", type=int, help="override the config seed")

    c = sub.add_parser("compare", help="compare frequency responses and backbones")
    c.add_argument("runs", nargs="+", type=Path, help="run directories")
    c.add_argument("--out", type=Path, help="directory for aligned.csv and comparison.csv")

    k = sub.add_parser("check", help="quick randomized self-checks")
    k.add_argument("--seed", type=int, default=0)
    return p


def _cmd_build(args) -> int:
    scn = load_scenario(args.config)
    out = default_out_dir(scn, args.out)
    snap = args.snapshot or out / "snapshots"
    timing = TimingReport()
    try:
        _, hits = build_tensors(scn, snap, timing, force=args.force)
    except (ConfigurationError, StageError):
        raise
    except Exception as exc:
        raise StageError("build", exc) from exc
    for v in scn.dprom_variants:
        state = "reused" if v in hits else f"built in {timing.total(v, 'tensors'):.2f} s"
        print(f"{v}: {snap / v} ({state})")
    return 0


def _cmd_run(args) -> int:
    scn = load_scenario(args.config)
    if args.jobs < 1:
        raise ConfigurationError("--jobs must be positive")
    t0 = time.perf_counter()
    res = run_scenario(scn, args.out, args.jobs, args.snapshot, args.seed)
    n = sum(len(f) for per in res.artifacts.values() for f in per.values())
    print(f"{n} result files in {res.out_dir / 'results'} "
          f"({time.perf_counter() - t0:.1f} s, snapshot hits: {res.snapshot_hits or 'none'})")
    return 0


def _cmd_compare(args) -> int:
    rows = compare_runs(args.runs, args.out)
    for r in rows:
        keys = [k for k in r if k.startswith("d_")]
        vals = "  ".join(f"{k}={r[k]:+.3e}" for k in keys)
        print(f"xi#{r['xi_index']} {r['analysis']}: {r['model_b']} vs {r['model_a']}  {vals}")
    return 0


def _cmd_check(args) -> int:
    results = run_checks(args.seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    return 0 if all(r.passed for r in results) else 1


_COMMANDS = {"build": _cmd_build, "run": _cmd_run, "compare": _cmd_compare,
             "check": _cmd_check}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except ConfigurationError as exc:
        log.error("configuration error: %s", exc)
        print(json.dumps({"stage": "config", "message": str(exc)}), file=sys.stderr)
        return 2
    except StageError as exc:
        log.error("stage %s failed", exc.stage)
        return 1


if __name__ == "__main__":
    sys.exit(main())
