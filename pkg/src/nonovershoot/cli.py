"""Command-line front end: ``validate | run | sweep | bounds``.

Exit codes: 0 ok, 1 validation, 2 I/O, 3 numeric failure.  Diagnostics go
to stderr as one JSON object per line; human-readable tables go to stdout.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import controller as ctl
from . import sim
from .errors import CompileError, NonFinite, NonovershootError, ParseError, ValidationError
from .plant import Scenario, load_scenario, scenario_from_dict

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3

SWEEP_AXES = ("cbar", "kappabar", "gbar", "sigma", "gamma", "thetahat0")
SUMMARY_COLUMNS = ("axis", "value", "status", "violation", "h1_star", "settled", "min_h1",
                   "theta_err_final", "fingerprint")


def diag(level: str, code: str, message: str, **extra) -> None:
    """One JSON-lines diagnostic on stderr."""
    rec = {"level": level, "code": code, "message": message, **extra}
    print(json.dumps(rec, sort_keys=True, default=str), file=sys.stderr)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def _load(path, args=None) -> Scenario:
    scenario = load_scenario(path)
    if args is None:
        return scenario
    changes = {}
    if getattr(args, "dt", None) is not None:
        changes["sim.dt"] = args.dt
    if getattr(args, "t_end", None) is not None:
        changes["sim.t_end"] = args.t_end
    if getattr(args, "stride", None) is not None:
        changes["sim.stride"] = args.stride
    return scenario.with_changes(**changes) if changes else scenario


def _load_or_exit(path, args=None):
    """``(scenario, None)`` or ``(None, exit code)`` with the diagnostic printed."""
    try:
        return _load(path, args), None
    except OSError as exc:
        diag("error", "io", f"cannot read scenario: {exc}", path=str(path))
        return None, EXIT_IO
    except ValidationError as exc:
        diag("error", "validation", str(exc), path=str(path), invariant=exc.invariant)
        return None, EXIT_VALIDATION
    except ParseError as exc:
        diag("error", "parse", str(exc), path=str(path))
        return None, EXIT_VALIDATION


def _out_dir(path) -> Path | None:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        diag("error", "io", f"cannot create output directory: {exc}", path=str(out))
        return None
    return out


# --- validate ------------------------------------------------------------------

def cmd_validate(path) -> int:
    scenario, code = _load_or_exit(path)
    if scenario is None:
        return code
    try:
        report = ctl.ci_floor(scenario)
    except CompileError as exc:
        diag("error", "compile", str(exc), path=str(path))
        return EXIT_VALIDATION
    except (NonovershootError, ArithmeticError) as exc:
        diag("error", "numeric", str(exc), path=str(path))
        return EXIT_NUMERIC
    print(f"scenario {scenario.name} ({scenario.identifier.value}, n={scenario.n}, p={scenario.p})")
    print("level,c,cfloor,h0,degenerate,pass")
    for i in range(scenario.n):
        print(f"{i + 1},{_fmt(report.c[i])},{_fmt(report.floor[i])},{_fmt(report.h0[i])},"
              f"{_fmt(report.degenerate[i])},{_fmt(report.passed[i])}")
    for i in range(scenario.n):
        if report.degenerate[i]:
            diag("warning", "degenerate_floor", f"h{i + 1}(0) is on the boundary; floor taken as 0", level_index=i + 1)
    if not report.ok:
        for i in report.violations:
            diag("error", "validation", f"c{i} below its floor", invariant="ci_floor", level_index=i,
                 c=report.c[i - 1], floor=report.floor[i - 1])
        print("FAIL")
        return EXIT_VALIDATION
    print("PASS")
    return EXIT_OK


# --- run -----------------------------------------------------------------------

def cmd_run(path, out_dir, *, plot: bool = False, csv_stdout: bool = False, args=None) -> int:
    scenario, code = _load_or_exit(path, args)
    if scenario is None:
        return code
    out = _out_dir(out_dir)
    if out is None:
        return EXIT_IO
    try:
        trace, metrics = sim.run(scenario)
    except NonFinite as exc:
        diag("error", "nonfinite", str(exc), component=exc.component, t=exc.t)
        if exc.partial is not None and len(exc.partial):
            try:
                exc.partial.write_csv(out / "trace.csv")
            except OSError as io_exc:
                diag("error", "io", str(io_exc))
        return EXIT_NUMERIC
    except CompileError as exc:
        diag("error", "compile", str(exc), path=str(path))
        return EXIT_VALIDATION
    try:
        trace.write_csv(out / "trace.csv")
        (out / "metrics.json").write_text(sim.metrics_json(metrics, scenario))
        if plot:
            from . import plotting
            plotting.fig_y(trace, scenario, out / "fig_y.svg")
            plotting.fig_theta(trace, scenario, out / "fig_theta.svg")
            plotting.fig_u(trace, scenario, out / "fig_u.svg")
            plotting.fig_h1(trace, scenario, metrics.h1_star, out / "fig_h1.svg")
    except OSError as exc:
        diag("error", "io", str(exc), path=str(out))
        return EXIT_IO
    keys = ("min_h1", "violation", "h1_star", "bound_respected", "h1_final", "theta_err_final", "settled")
    if csv_stdout:
        print(",".join(keys))
        print(",".join(_fmt(getattr(metrics, k)) for k in keys))
    else:
        for k in keys:
            print(f"{k:16s} {_fmt(getattr(metrics, k))}")
    if not math.isnan(metrics.h1_star) and not metrics.bound_respected:
        diag("warning", "bound", "min h1 below -h1*", min_h1=metrics.min_h1, h1_star=metrics.h1_star)
    return EXIT_OK


# --- sweep ---------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    base: Path
    axis: str
    values: tuple[float, ...]
    out: Path

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ValidationError("sweep_axis", f"unknown axis {self.axis!r}; choose from {', '.join(SWEEP_AXES)}")
        if len(self.values) < 2:
            raise ValidationError("sweep_values", "a sweep needs at least two values")
        if self.axis != "thetahat0" and any(not v > 0 for v in self.values):
            raise ValidationError("positivity", f"{self.axis} values must be > 0")


def apply_axis(scenario: Scenario, axis: str, value: float) -> Scenario:
    """Copy of ``scenario`` with every entry of the swept quantity set to ``value``."""
    value = float(value)
    if axis == "cbar":
        return scenario.with_changes(**{"gains.c": [value] * scenario.n})
    if axis == "kappabar":
        return scenario.with_changes(**{"gains.kappa": [value] * scenario.n})
    if axis == "gbar":
        return scenario.with_changes(**{"gains.g": [value] * scenario.n})
    if axis in ("sigma", "gamma"):
        return scenario.with_changes(**{f"gains.{axis}": value})
    if axis == "thetahat0":
        return scenario.with_changes(**{"init.thetahat0": [value] * scenario.p})
    raise ValidationError("sweep_axis", f"unknown axis {axis!r}")


def _sweep_one(config: dict, name: str, axis: str, value: float) -> dict:
    # runs in a worker process; returns plain data only
    row = {"axis": axis, "value": value, "status": "ok", "violation": math.nan, "h1_star": math.nan,
           "settled": False, "min_h1": math.nan, "theta_err_final": math.nan, "fingerprint": ""}
    try:
        scenario = apply_axis(scenario_from_dict(config, name=name), axis, value)
        row["fingerprint"] = scenario.fingerprint()
        _, m = sim.run(scenario)
    except NonFinite as exc:
        row["status"] = f"nonfinite: {exc}"
        return row
    except NonovershootError as exc:
        row["status"] = f"{type(exc).__name__}: {exc}"
        return row
    row.update(violation=m.violation, h1_star=m.h1_star, settled=m.settled, min_h1=m.min_h1,
               theta_err_final=m.theta_err_final)
    return row


def run_sweep(spec: SweepSpec, scenario: Scenario, jobs: int | None = None) -> list[dict]:
    config = scenario.to_dict()
    todo = [(config, scenario.name, spec.axis, float(v)) for v in spec.values]
    if jobs == 1:
        return [_sweep_one(*a) for a in todo]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_sweep_one, *a) for a in todo]
        return [f.result() for f in futures]


def summary_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in SUMMARY_COLUMNS])
    return buf.getvalue()


def cmd_sweep(base, axis: str, values, out_dir, *, jobs: int | None = None, args=None) -> int:
    scenario, code = _load_or_exit(base, args)
    if scenario is None:
        return code
    try:
        spec = SweepSpec(Path(base), axis, tuple(float(v) for v in values), Path(out_dir))
    except ValidationError as exc:
        diag("error", "validation", str(exc), invariant=exc.invariant)
        return EXIT_VALIDATION
    out = _out_dir(spec.out)
    if out is None:
        return EXIT_IO
    rows = run_sweep(spec, scenario, jobs)
    # single collector: only this process writes files
    try:
        (out / "summary.csv").write_text(summary_csv(rows))
        from . import plotting
        plotting.fig_sweep(axis, [r["value"] for r in rows], [r["violation"] for r in rows],
                           [r["h1_star"] for r in rows], out / f"sweep_{axis}.svg")
    except OSError as exc:
        diag("error", "io", str(exc), path=str(out))
        return EXIT_IO
    sys.stdout.write(summary_csv(rows))
    failed = [r for r in rows if r["status"] != "ok"]
    for r in failed:
        diag("error", "run_failed", r["status"], axis=axis, value=r["value"])
    return EXIT_OK if not failed else EXIT_NUMERIC


# --- bounds --------------------------------------------------------------------

def bounds_table(scenario: Scenario) -> list[tuple[str, float, str]]:
    """All four ``h1*`` variants: the two trajectory bounds use the sup and
    L2 norms of a simulated run, the two theorem bounds use ``|theta~(0)|``."""
    _, m = sim.run(scenario)
    gains, err0, n = scenario.gains, scenario.theta_err0, scenario.n
    passive = ctl.violation_bound(gains, err0, ctl.BoundMode.H_PASSIVE, n=n)
    swapping = (ctl.violation_bound(gains, err0, ctl.BoundMode.H_SWAPPING, n=n)
                if gains.nu > 0 else math.nan)
    return [("Linf", m.h1_star_linf, "trajectory"), ("L2", m.h1_star_l2, "trajectory"),
            ("passive", passive, "initial_error"), ("swapping", swapping, "initial_error")]


def cmd_bounds(path, out_dir=None, *, args=None) -> int:
    scenario, code = _load_or_exit(path, args)
    if scenario is None:
        return code
    try:
        table = bounds_table(scenario)
    except NonFinite as exc:
        diag("error", "nonfinite", str(exc), component=exc.component, t=exc.t)
        return EXIT_NUMERIC
    text = "mode,h1_star,basis\n" + "".join(f"{m},{_fmt(v)},{b}\n" for m, v, b in table)
    if scenario.gains.nu <= 0:
        diag("warning", "swapping_bound", "swapping bound needs nu > 0; reported as nan")
    sys.stdout.write(text)
    if out_dir is not None:
        out = _out_dir(out_dir)
        if out is None:
            return EXIT_IO
        try:
            (out / "bounds.csv").write_text(text)
        except OSError as exc:
            diag("error", "io", str(exc), path=str(out))
            return EXIT_IO
    return EXIT_OK


# --- entry point ---------------------------------------------------------------

def _overrides(p):
    p.add_argument("--stride", type=int, help="export every N-th step")
    p.add_argument("--dt", type=float, help="integration step [s]")
    p.add_argument("--t-end", dest="t_end", type=float, help="horizon [s]")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nonovershoot", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a scenario and print the c_i floor table")
    p.add_argument("scenario")

    p = sub.add_parser("run", help="simulate a scenario")
    p.add_argument("scenario")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--csv", action="store_true", help="print the metrics summary as CSV")
    p.add_argument("--plot", action="store_true", help="write SVG figures")
    _overrides(p)

    p = sub.add_parser("sweep", help="run one scenario over several values of a gain")
    p.add_argument("scenario")
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True, type=float, nargs="+")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (1 = serial)")
    _overrides(p)

    p = sub.add_parser("bounds", help="print every violation bound as CSV")
    p.add_argument("scenario")
    p.add_argument("--out", default=None, help="also write bounds.csv here")
    p.add_argument("--csv", action="store_true", help="accepted for symmetry; output is always CSV")
    _overrides(p)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "validate":
        return cmd_validate(args.scenario)
    if args.command == "run":
        return cmd_run(args.scenario, args.out, plot=args.plot, csv_stdout=args.csv, args=args)
    if args.command == "sweep":
        return cmd_sweep(args.scenario, args.axis, args.values, args.out, jobs=args.jobs, args=args)
    return cmd_bounds(args.scenario, args.out, args=args)


if __name__ == "__main__":
    sys.exit(main())
