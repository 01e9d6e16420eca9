"""Command-line entry points: scripted runs, paired comparisons, serving."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .mission import ConfigError, run_comparison, run_mission


def _default_out(parent: str | None) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    root = Path(parent) if parent else Path("runs")
    return root / f"run_{stamp}"


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="fwmission",
                                     description="fixed-wing terrain mission simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scripted mission")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--script", default=None)
    p_run.add_argument("--out", default=None, help="run directory (default runs/run_<stamp>)")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--max-duration", type=float, default=3600.0)

    p_cmp = sub.add_parser("compare", help="paired active vs coverage evaluation")
    p_cmp.add_argument("--config", required=True)
    p_cmp.add_argument("--duration", type=float, required=True)
    p_cmp.add_argument("--out", default=None)
    p_cmp.add_argument("--seed", type=int, default=None)

    p_srv = sub.add_parser("serve", help="telemetry/command service")
    p_srv.add_argument("--config", required=True)
    p_srv.add_argument("--port", type=int, required=True)
    p_srv.add_argument("--host", default="127.0.0.1")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            out = Path(args.out) if args.out else _default_out(None)
            result = run_mission(args.config, args.script, out,
                                 seed=args.seed, max_duration=args.max_duration)
            violations = result.report["band_violations"]["reference"]
            print(f"mission complete: t={result.report['duration_s']}s "
                  f"reference_violations={violations} -> {out}")
            return 0 if violations == 0 else 1
        if args.command == "compare":
            out = Path(args.out) if args.out else _default_out(None)
            summary = run_comparison(args.config, args.duration, out, seed=args.seed)
            print(json.dumps({
                "delta_final_q": summary["delta_final_q"],
                "delta_final_coverage": summary["delta_final_coverage"],
                "out": str(out),
            }))
            bad = (summary["active"]["band_violations"]["reference"]
                   + summary["coverage"]["band_violations"]["reference"])
            return 0 if bad == 0 else 1
        if args.command == "serve":
            from .service import serve

            serve(args.config, args.port, host=args.host)
            return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
