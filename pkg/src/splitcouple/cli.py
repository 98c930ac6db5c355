"""Command-line front door: ``run``, ``validate`` and ``report`` subcommands.

Exit codes: 0 when every acceptance flag of the targeted run is true, 1 when
any flag is false, 2 on configuration or runtime errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import load_config
from .errors import ConfigError, RunError, ScheduleError
from .harness import run as run_experiment
from .harness import write_report


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    outdir = args.out if args.out else cfg.output_dir
    report = run_experiment(cfg)
    csv_path, json_path = write_report(report, outdir)
    print(f"experiment: {report.experiment}")
    print(f"wrote {csv_path}")
    print(f"wrote {json_path}")
    for name, ok in sorted(report.flags.items()):
        print(f"flag {name}: {'PASS' if ok else 'FAIL'}")
    print(f"wall clock: {report.wall_clock_s:.3f} s")
    return 0 if report.all_flags_true else 1


def _cmd_validate(args) -> int:
    cfg = load_config(args.config)
    for key in sorted(cfg.resolved):
        print(f"{key} = {cfg.resolved[key]}")
    print("config ok")
    return 0


def _cmd_report(args) -> int:
    path = os.path.join(args.run_dir, "report.json")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise RunError(f"cannot read {path}: {exc}") from exc
    print(f"experiment: {payload['experiment']}")
    print(f"replicas: {payload['replicas']}")
    flags = payload.get("flags", {})
    for name, ok in sorted(flags.items()):
        print(f"flag {name}: {'PASS' if ok else 'FAIL'}")
    return 0 if all(flags.values()) else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="splitcouple",
        description="Deterministic coupling and stability experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--out", help="output directory (overrides output.dir)")
    p_run.set_defaults(fn=_cmd_run)
    p_val = sub.add_parser("validate", help="validate a config and echo defaults")
    p_val.add_argument("config")
    p_val.set_defaults(fn=_cmd_validate)
    p_rep = sub.add_parser("report", help="summarize a finished run directory")
    p_rep.add_argument("run_dir")
    p_rep.set_defaults(fn=_cmd_report)
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, RunError, ScheduleError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
