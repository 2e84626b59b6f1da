"""Command-line entry point: ``wptlink <command> [options]``.

Exit codes: 0 success, 1 requirement or compliance failure, 2 configuration
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

from . import analysis, harness
from .circuit import CircuitError, NumericalInstability
from .config import (BUNDLED, ConfigError, bundled_scenario_text, default_scenario_text,
                     load_scenario, parse_quantity)
from .controller import ControllerError
from .dosimetry import (DosimetryError, ExposureLimits, TissuePhantom, exposure_summary,
                        induced_fields)
from .magnetics import MagneticsError, resonance_capacitance

EXIT_OK, EXIT_REQUIREMENT, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


def _scenario(args):
    if not args.config:
        return load_scenario(default_scenario_text())
    path = Path(args.config)
    if not path.exists() and args.config in BUNDLED:
        return load_scenario(bundled_scenario_text(args.config))
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {args.config}: {exc.strerror}") from None
    return load_scenario(text)


def _out_dir(args) -> Path | None:
    if args.out is None:
        return None
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _emit(args, payload: dict, text: str):
    if args.format == "json":
        print(json.dumps(payload, indent=2, default=_jsonable))
    else:
        print(text, end="" if text.endswith("\n") else "\n")


def _jsonable(o):
    if hasattr(o, "item"):
        return o.item()
    if isinstance(o, float) and math.isinf(o):
        return None
    raise TypeError(type(o).__name__)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_resonance(args) -> int:
    L = parse_quantity(args.inductance, "inductance")
    f = parse_quantity(args.frequency, "frequency")
    C = resonance_capacitance(L, f)
    payload = {"inductance_h": L, "frequency_hz": f, "capacitance_f": C}
    _emit(args, payload, "inductance_h,frequency_hz,capacitance_f\n"
          f"{L:.6g},{f:.6g},{C:.6e}\nC = {C * 1e9:.2f} nF")
    return EXIT_OK


def cmd_simulate(args) -> int:
    s = _scenario(args)
    d = parse_quantity(args.distance, "length")
    if args.duration:
        s = s.with_(sim=replace(s.sim, duration=parse_quantity(args.duration, "time")))
    result = harness.simulate_distance(s, d, keep_trace=True)
    if result.status == "out_of_range":
        raise _Fail(EXIT_REQUIREMENT, f"no coupling at {d * 100:g} cm: {result.message}")
    trace = result.trace
    payload = {"distance_cm": d * 100, "k": result.k, "result": result.as_dict()}
    if trace is not None:
        payload["telemetry"] = trace.telemetry()
    out = _out_dir(args)
    if out:
        if trace is not None:
            trace.to_csv(out / "trace.csv")
        (out / "report.json").write_text(json.dumps(payload, indent=2, default=_jsonable))
    rep = result.report
    lines = [f"distance {d * 100:g} cm, k = {result.k:.4f}, status {result.status}"]
    if result.message:
        lines.append(result.message)
    if rep:
        lines.append(",".join(analysis.REPORT_COLUMNS))
        lines.append(",".join(rep.row(d * 100)))
    _emit(args, payload, "\n".join(lines))
    if result.status == "unstable":
        return EXIT_NUMERICAL
    return EXIT_OK if result.passed else EXIT_REQUIREMENT


def cmd_sweep(args) -> int:
    s = _scenario(args)
    report = harness.run_sweep(s, workers=args.workers)
    out = _out_dir(args)
    if out:
        harness.write_sweep(report, out, args.format)
    summary = report.summary()
    lp = report.largest_passing_distance
    text = report.to_csv() + "\n" + "\n".join(
        f"{r.distance * 100:.2f} cm: {r.status}{' PASS' if r.passed else ' FAIL'}"
        + (f" ({r.message})" if r.message else "") for r in report.results)
    text += f"\nlargest passing distance: {'none' if lp is None else f'{lp * 100:.2f} cm'}"
    _emit(args, summary, text)
    if any(r.status == "unstable" for r in report.results):
        return EXIT_NUMERICAL
    return EXIT_OK if report.all_passed else EXIT_REQUIREMENT


def _parse_assignments(text: str) -> dict[str, float]:
    out = {}
    for item in filter(None, (t.strip() for t in text.split(","))):
        name, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"expected name=value, got {item!r}")
        out[name.strip()] = float(value)
    return out


def cmd_calibrate(args) -> int:
    s = _scenario(args)
    free = [p for p in args.free.split(",") if p] if args.free else []
    initial = _parse_assignments(args.initial) if args.initial else None
    res = harness.calibrate(s, harness.bench_dataset(), free, initial=initial,
                            max_evaluations=args.max_evals, monotone=args.monotone,
                            voltage_weight=args.voltage_weight)
    fragment = res.fragment()
    payload = res.as_dict()
    payload["fragment"] = fragment
    out = _out_dir(args)
    if out:
        (out / "calibration.cfg").write_text(fragment)
        (out / "calibration.json").write_text(json.dumps(payload, indent=2))
    text = (fragment + f"# rms efficiency error {res.rms:.3f} pp, "
            f"{'converged' if res.converged else 'NOT converged'} "
            f"after {res.n_evaluations} evaluations\n")
    _emit(args, payload, text)
    return EXIT_OK


def cmd_dosimetry(args) -> int:
    phantom = TissuePhantom()
    s = _scenario(args)
    i_ref = parse_quantity(args.current, "current")
    f = parse_quantity(args.frequency, "frequency")
    spacing = parse_quantity(args.spacing, "length")
    gap = parse_quantity(args.gap, "length")
    fmap = induced_fields(phantom, s.circuit.tx, i_ref, f, spacing=spacing, gap=gap)
    summary = exposure_summary(fmap, phantom, ExposureLimits())
    out = _out_dir(args)
    if out:
        if args.format == "csv":
            fmap.to_csv(out / "fieldmap.csv")
        (out / "dosimetry.json").write_text(json.dumps(summary, indent=2, default=_jsonable))
    text = "\n".join(f"{k}: {v}" for k, v in summary.items() if k != "limits")
    _emit(args, summary, text)
    return EXIT_OK if summary["compliant"] else EXIT_REQUIREMENT


def _read_sweep_csv(path: Path) -> list[tuple[float, float]]:
    pts = []
    with path.open() as fh:
        for row in csv.DictReader(fh):
            if row.get("efficiency_pct"):
                pts.append((float(row["distance_cm"]), float(row["efficiency_pct"])))
    return pts


def cmd_regress(args) -> int:
    if args.input:
        pts = _read_sweep_csv(Path(args.input))
        source = str(args.input)
    else:
        pts = [(r.distance * 100, r.efficiency * 100) for r in harness.bench_dataset()]
        source = "embedded"
    slope, intercept, r2 = analysis.linear_regression(pts)
    payload = {"source": source, "n": len(pts), "slope_pct_per_cm": slope,
               "intercept_pct": intercept, "r2": r2}
    out = _out_dir(args)
    if out:
        (out / "regression.json").write_text(json.dumps(payload, indent=2))
    _emit(args, payload, "slope_pct_per_cm,intercept_pct,r2\n"
          f"{slope:.6f},{intercept:.6f},{r2:.6f}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config",
                        help="scenario document, or a bundled name (%s)" % ", ".join(BUNDLED))
    common.add_argument("--out", help="output directory")
    common.add_argument("--format", choices=("csv", "json"), default="csv")

    p = argparse.ArgumentParser(prog="wptlink", description="Resonant inductive power link: simulation, calibration, dosimetry.",
                                epilog=__doc__.split("\n\n", 1)[1].strip())
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("resonance", parents=[common], help="series capacitance for L at f")
    r.add_argument("-L", "--inductance", required=True, help="e.g. 47uH")
    r.add_argument("-f", "--frequency", default="127 kHz")
    r.set_defaults(func=cmd_resonance)

    s = sub.add_parser("simulate", parents=[common], help="one closed-loop run")
    s.add_argument("--distance", default="1 cm")
    s.add_argument("--duration", help="override [sim] duration, e.g. 6ms")
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", parents=[common], help="distance sweep with pass/fail")
    w.add_argument("--workers", type=int, default=1)
    w.set_defaults(func=cmd_sweep)

    c = sub.add_parser("calibrate", parents=[common], help="fit parasitics to the bench data")
    c.add_argument("--free", default="tx.esr,rx.esr,diode_vf,k_scale",
                   help="comma list from " + ",".join(harness.FREE_PARAMS))
    c.add_argument("--initial", help="starting point, e.g. tx.esr=2.1,k_scale=1.6")
    c.add_argument("--max-evals", type=int, default=150)
    c.add_argument("--monotone", action="store_true",
                   help="penalise efficiency increasing with distance")
    c.add_argument("--voltage-weight", type=float, default=0.0,
                   help="weight (pp per V) of the load-voltage RMS error")
    c.set_defaults(func=cmd_calibrate)

    d = sub.add_parser("dosimetry", parents=[common], help="field map and compliance")
    d.add_argument("--current", default="1 A", help="peak coil current")
    d.add_argument("--frequency", default="127 kHz")
    d.add_argument("--spacing", default="2 mm")
    d.add_argument("--gap", default="6 mm", help="phantom surface to coil plane")
    d.set_defaults(func=cmd_dosimetry)

    g = sub.add_parser("regress", parents=[common], help="efficiency vs distance fit")
    g.add_argument("--input", help="sweep CSV (default: embedded bench data)")
    g.set_defaults(func=cmd_regress)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _Fail as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, CircuitError, ControllerError, MagneticsError, DosimetryError,
            FileNotFoundError, ValueError) as exc:
        if isinstance(exc, analysis.AnalysisError):
            print(f"numerical error: {exc}", file=sys.stderr)
            return EXIT_NUMERICAL
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalInstability, analysis.NotConverged) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
