"""Shared driver for the study scripts: parse flags, run, print a table, save."""

import argparse
import time

import numpy as np
from pathlib import Path

from continuity_lab.cli import format_config, parse_config
from continuity_lab.experiments import CSV_COLUMNS, run_study, write_report

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _fmt(v):
    if v is None or v == "" or (isinstance(v, float) and v != v):
        return "-"
    return f"{v:.5g}" if isinstance(v, float) else str(v)


def print_report(report):
    cols = [c for c in CSV_COLUMNS if c == "parameter" or np.isfinite(report.column(c)).any()]
    print("  ".join(f"{c:>12}" for c in cols))
    for row in report.rows:
        print("  ".join(f"{_fmt(row.get(c)):>12}" for c in cols))
    print(f"slope {report.slope:.5g}  intercept {report.intercept:.5g}  residual {report.residual:.3g}")
    for name, ok in report.checks.items():
        print(f"  {'PASS' if ok else 'FAIL'}  {name}")


def main(study, argv=None):
    ap = argparse.ArgumentParser(description=f"Run the {study} study and save CSV/JSON.")
    ap.add_argument("-o", "--output", default="results")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args(argv)
    cfg = parse_config((CONFIGS / f"{study}.cfg").read_text(), args.set)
    t0 = time.perf_counter()
    report = run_study(cfg)
    print(f"== {study} ({time.perf_counter() - t0:.1f}s)")
    print_report(report)
    out = Path(args.output)
    write_report(report, out)
    (out / f"{study}.cfg").write_text(format_config(cfg))
    return 0 if report.passed else 2
