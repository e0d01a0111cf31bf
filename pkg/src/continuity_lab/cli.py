"""Command-line front end.

    continuity-lab run CONFIG [-o DIR] [--set key=value]...
    continuity-lab validate [--quick]
    continuity-lab list-fields
    continuity-lab export-snapshot --field NAME --k INT --t FLOAT --cells INT [-o FILE]

Exit codes: 0 when every pass flag holds, 2 when a contract fails, 1 on
errors (bad config, bad arguments, solver failures).
"""

from __future__ import annotations

import argparse
import csv
import difflib
import sys
import typing
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import LabError
from .experiments import StudyConfig, oscillating_cell_average, run_study, write_report
from .fields import CellField, builtin_velocity, describe_fields, make_grid

SECTIONS = {
    "study": ("study", "p", "t", "k", "kappa", "h", "times", "delta0"),
    "grid": ("cells", "cells_per_wave", "safety", "block"),
    "field": ("field", "field_k", "speed", "amplitude", "modes", "period", "squares", "initial"),
    "output": ("output", "workers"),
}
_SECTION_OF = {key: sec for sec, keys in SECTIONS.items() for key in keys}
_TYPES = typing.get_type_hints(StudyConfig)


class ConfigError(LabError, ValueError):
    """Malformed configuration text; the message names the line."""


def _scalar(text: str, kind):
    text = text.strip()
    if kind is str:
        if not text:
            raise ValueError("empty value")
        return text
    if kind is int:
        return int(text)
    if kind is float:
        if "/" in text:
            return float(Fraction(text.replace(" ", "")))
        return float(text)
    raise TypeError(kind)


def _convert(key: str, text: str):
    kind = _TYPES[key]
    args = typing.get_args(kind)
    if typing.get_origin(kind) is tuple:
        items = [s for s in text.split(",") if s.strip()]
        return tuple(_scalar(s, args[0]) for s in items)
    return _scalar(text, kind)


def _suggest(key: str) -> str:
    near = difflib.get_close_matches(key, list(_SECTION_OF), n=1)
    return f"; did you mean {near[0]!r}?" if near else ""


def parse_config(text: str, overrides=()) -> StudyConfig:
    """Parse ``key = value`` lines grouped under [study] [grid] [field] [output].

    Keys before the first header are accepted in any section.  ``overrides``
    are ``key=value`` or ``section.key=value`` strings applied last.
    """
    values: dict[str, object] = {}
    where: dict[str, int] = {}
    section = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {no}: malformed section header {raw.strip()!r}")
            section = line[1:-1].strip()
            if section not in SECTIONS:
                near = difflib.get_close_matches(section, list(SECTIONS), n=1)
                hint = f"; did you mean [{near[0]}]?" if near else ""
                raise ConfigError(f"line {no}: unknown section [{section}]{hint}")
            continue
        if "=" not in line:
            raise ConfigError(f"line {no}: expected key = value, got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        _store(values, where, key, val, no, section)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        key, val = (s.strip() for s in item.split("=", 1))
        sec = None
        if "." in key:
            sec, key = key.split(".", 1)
            if sec not in SECTIONS:
                raise ConfigError(f"override {item!r}: unknown section {sec!r}")
        _store(values, where, key, val, None, sec, allow_repeat=True)
    if "study" not in values:
        raise ConfigError("missing required key 'study' (section [study])")
    try:
        cfg = StudyConfig.defaults(str(values.pop("study")))
        return cfg.replace(**values).validate()
    except LabError as exc:
        raise ConfigError(str(exc)) from None


def _store(values, where, key, val, no, section, allow_repeat=False):
    loc = f"line {no}" if no is not None else "override"
    if key not in _SECTION_OF:
        raise ConfigError(f"{loc}: unknown key {key!r}{_suggest(key)}")
    if section is not None and _SECTION_OF[key] != section:
        raise ConfigError(f"{loc}: key {key!r} belongs to section [{_SECTION_OF[key]}], not [{section}]")
    if key in values and not allow_repeat:
        raise ConfigError(f"{loc}: duplicate key {key!r} (first set on line {where[key]})")
    try:
        values[key] = _convert(key, val)
    except (ValueError, TypeError, ZeroDivisionError):
        kind = getattr(_TYPES[key], "__name__", str(_TYPES[key]))
        raise ConfigError(f"{loc}: cannot read {val!r} as {kind} for key {key!r}") from None
    if no is not None:
        where[key] = no


def _format_value(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_config(cfg: StudyConfig) -> str:
    """Full config text (every default spelled out); parses back to ``cfg``."""
    lines = []
    for sec, keys in SECTIONS.items():
        lines.append(f"[{sec}]")
        lines += [f"{k} = {_format_value(getattr(cfg, k))}" for k in keys]
        lines.append("")
    return "\n".join(lines)


# --- subcommands -----------------------------------------------------------


def _cmd_run(args) -> int:
    text = Path(args.config).read_text(encoding="utf-8")
    cfg = parse_config(text, args.set or ())
    outdir = Path(args.output or cfg.output)
    report = run_study(cfg)
    csv_path, json_path = write_report(report, outdir)
    (outdir / f"{cfg.study}.cfg").write_text(format_config(cfg), encoding="utf-8")
    for name, ok in report.checks.items():
        print(f"{'PASS' if ok else 'FAIL'}  {cfg.study}: {name}")
    print(f"slope {report.slope:.6g}  intercept {report.intercept:.6g}  residual {report.residual:.6g}")
    print(f"wrote {csv_path} and {json_path}")
    return 0 if report.passed else 2


def _cmd_validate(args) -> int:
    from .validation import run_suite

    checks = run_suite(quick=args.quick)
    width = max(len(c.name) for c in checks)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name:<{width}}  {c.detail}  ({c.seconds:.1f}s)")
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return 0 if failed == 0 else 2


def _cmd_list_fields(args) -> int:
    for name, desc in describe_fields().items():
        print(f"{name:<18} {desc}")
    return 0


def snapshot_field(name: str, k: int, t: float, cells: int) -> CellField:
    """Density at time t transported from rho = 1 on [0, 1] (exact cell averages)."""
    if cells < 1 or t < 0:
        raise LabError("cells must be >= 1 and t >= 0")
    grid = make_grid([1.0], cells)
    if name == "oscillating":
        return oscillating_cell_average(k, t, grid)
    if name == "zero":
        return CellField(grid, np.ones(cells), t)
    builtin_velocity(name)  # unknown names raise here
    raise LabError(f"no 1D closed form or tangential setup for field {name!r}; "
                   "use 'oscillating' or 'zero'")


def write_snapshot(f: CellField, out) -> None:
    """CSV rows time, i, x, value (x is the cell center)."""
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["time", "i", "x", "value"])
    xs = f.grid.centers(0)
    for i, v in enumerate(np.asarray(f.values)):
        w.writerow([repr(float(f.time)), i, repr(float(xs[i])), repr(float(v))])


def _cmd_export(args) -> int:
    f = snapshot_field(args.field, args.k, args.t, args.cells)
    if args.output:
        path = Path(args.output)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            write_snapshot(f, fh)
    else:
        write_snapshot(f, sys.stdout)
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="continuity-lab", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    r = sub.add_parser("run", help="run a study from a config file")
    r.add_argument("config")
    r.add_argument("-o", "--output", help="output directory (default: [output] output)")
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    r.set_defaults(func=_cmd_run)
    v = sub.add_parser("validate", help="run the invariant suite")
    v.add_argument("--quick", action="store_true", help="smaller random samples")
    v.set_defaults(func=_cmd_validate)
    lf = sub.add_parser("list-fields", help="list the velocity catalog")
    lf.set_defaults(func=_cmd_list_fields)
    e = sub.add_parser("export-snapshot", help="write a 1D density snapshot as CSV")
    e.add_argument("--field", required=True)
    e.add_argument("--k", type=int, required=True)
    e.add_argument("--t", type=float, required=True)
    e.add_argument("--cells", type=int, required=True)
    e.add_argument("-o", "--output", help="CSV path (default: stdout)")
    e.set_defaults(func=_cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (LabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
