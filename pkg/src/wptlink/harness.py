"""Distance sweeps, parasitic calibration against the measured link data, and the
report plumbing used by the command line.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import minimize

from .analysis import (REPORT_COLUMNS, AnalysisError, NotConverged, PowerReport,
                       cycle_metrics, detect_steady_state, energy_balance, rising_crossings)
from .circuit import (LinkCircuit, NumericalInstability, Resistor, SimTrace, default_dt,
                      run_transient)
from .config import Scenario, SimSettings, calibration_fragment
from .controller import ControllerConfig, Mode, fixed_drive
from .magnetics import (CouplingModel, MagneticsError, coil_mutual,
                        coupling_coefficient)


# ---------------------------------------------------------------------------
# measured data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MeasuredRow:
    distance: float   # m
    i_tx: float       # A
    p_tx: float       # W
    i_rx: float       # A
    v_rx: float       # V
    p_rx: float       # W
    efficiency: float

    @property
    def load_resistance(self) -> float:
        """Equivalent DC load V/I seen by the receiver at this row."""
        return self.v_rx / self.i_rx


#: Relative energy-audit residual above which a run is not trusted.
ENERGY_BUDGET = 5e-3

_BENCH = (
    # d [cm], I_tx [A], P_tx [W], I_rx [mA], V_rx [V], P_rx [W], eff [%]
    (0.5, 1.25, 6.25, 143, 19, 2.73, 43.5),
    (0.6, 1.27, 6.35, 124, 17, 2.11, 33.2),
    (0.7, 1.30, 6.50, 131, 18, 2.36, 36.3),
    (0.8, 1.26, 6.30, 110, 16, 1.76, 28.0),
    (0.9, 1.28, 6.40, 108, 17, 1.84, 28.7),
    (1.0, 1.19, 5.95, 100, 12, 1.20, 20.2),
    (1.5, 1.35, 6.75, 71, 9, 0.64, 9.5),
    (2.0, 1.27, 6.35, 20, 9, 0.18, 2.8),
)


def bench_dataset() -> list[MeasuredRow]:
    """The eight bench measurements (5 V supply, 0.5 to 2.0 cm) in SI units."""
    return [MeasuredRow(d * 1e-2, i_tx, p_tx, i_rx * 1e-3, v_rx, p_rx, eff / 100.0)
            for d, i_tx, p_tx, i_rx, v_rx, p_rx, eff in _BENCH]


def _row_for(distance: float, rows: Sequence[MeasuredRow]) -> MeasuredRow | None:
    for r in rows:
        if math.isclose(r.distance, distance, rel_tol=1e-9, abs_tol=1e-12):
            return r
    return None


# ---------------------------------------------------------------------------
# single distance
# ---------------------------------------------------------------------------

@dataclass
class DistanceResult:
    """Outcome at one distance.

    ``status`` is one of ``ok``, ``not_converged`` (metrics taken from the
    end of the run anyway), ``no_coupling`` (controller never left SEARCH),
    ``out_of_range`` (no coupling model at this distance), ``fault`` and
    ``unstable`` (non-finite state, or the averaging window misses the energy
    budget). ``energy_residual`` is the relative energy-audit residual over
    that window.
    """

    distance: float
    status: str
    k: float | None = None
    report: PowerReport | None = None
    passed: bool = False
    fault: str | None = None
    steady_state_time: float | None = None
    message: str = ""
    energy_residual: float | None = None
    trace: SimTrace | None = field(default=None, repr=False, compare=False)

    def as_dict(self) -> dict:
        return {"distance": self.distance, "status": self.status, "k": self.k,
                "report": asdict(self.report) if self.report else None,
                "passed": self.passed, "fault": self.fault,
                "steady_state_time": self.steady_state_time, "message": self.message,
                "energy_residual": self.energy_residual}


def sim_step(s: Scenario) -> float:
    """Integration step: the configured one, else :func:`default_dt` at the
    fastest frequency the controller can reach."""
    if s.sim.dt is not None:
        return s.sim.dt
    return default_dt(s.controller.f_window[1])


@lru_cache(maxsize=64)
def _idle_amplitude(circuit: LinkCircuit, ctrl: ControllerConfig, dt: float) -> float:
    bare = circuit.with_(m=0.0)
    probe = fixed_drive(ctrl.f_search, ctrl.search_duty, ctrl.f_window)
    ts = 1.0 / ctrl.f_search
    n_periods = 40
    tr = run_transient(bare, probe, n_periods * ts, dt)
    last = tr.t >= tr.t[-1] - ts * (1 + 1e-9)
    return float(np.max(np.abs(tr.i1[last])))


def idle_amplitude(circuit: LinkCircuit, ctrl: ControllerConfig, dt: float) -> float:
    """Search-mode peak Tx current with no receiver present."""
    return _idle_amplitude(circuit.with_(m=0.0), ctrl, dt)


def controller_for(s: Scenario) -> ControllerConfig:
    ctrl = s.controller
    if s.auto_idle:
        ctrl = replace(ctrl, idle_amplitude=idle_amplitude(s.circuit, ctrl, sim_step(s)))
    return ctrl


def circuit_at(s: Scenario, distance: float,
               measured: Sequence[MeasuredRow] | None = None) -> LinkCircuit:
    """Scenario circuit with the mutual inductance (and, for ``measured``
    loads, the measured equivalent resistance) of one distance.

    Raises :class:`MagneticsError` when the coupling model has no value there.
    """
    m = coil_mutual(s.circuit.tx, s.circuit.rx, distance, s.coupling)
    cfg = s.circuit.with_(m=m)
    if s.load_mode == "measured":
        row = _row_for(distance, measured if measured is not None else bench_dataset())
        if row is None:
            raise MagneticsError(f"no measured load for distance {distance:g} m")
        cfg = cfg.with_(load=Resistor(row.load_resistance))
    return cfg


def simulate_distance(s: Scenario, distance: float,
                      measured: Sequence[MeasuredRow] | None = None,
                      ctrl: ControllerConfig | None = None,
                      keep_trace: bool = False) -> DistanceResult:
    """Closed-loop run at one distance and its steady-state power report."""
    res = _simulate_distance(s, distance, measured, ctrl)
    if not keep_trace:
        res.trace = None
    return res


def _simulate_distance(s, distance, measured, ctrl) -> DistanceResult:
    try:
        cfg = circuit_at(s, distance, measured)
        k = coupling_coefficient(cfg.m, cfg.tx.inductance, cfg.rx.inductance)
    except MagneticsError as exc:
        return DistanceResult(distance, "out_of_range", message=str(exc))
    ctrl = ctrl or controller_for(s)
    sim = s.sim
    dt = sim_step(s)
    try:
        tr = run_transient(cfg, ctrl, sim.duration, dt, sim.dt_out)
    except NumericalInstability as exc:
        return DistanceResult(distance, "unstable", k=k, message=str(exc))
    if tr.status == "fault":
        fault = tr.fault.value if tr.fault else None
        return DistanceResult(distance, "fault", k=k, fault=fault, trace=tr,
                              message=f"controller fault {fault} at {tr.t_end:.4g} s")
    n_win = sim.window_cycles
    if tr.controller.mode != Mode.LOCK:
        # nothing detected: average the last search periods
        period = 1.0 / ctrl.f_search
        t0 = tr.t[-1] - n_win * period
        t0 = max(t0, tr.t[0])
        try:
            rep = cycle_metrics(tr, n_win, t_start=t0, period=period)
            audit = energy_balance(tr, t0, t0 + n_win * period)["relative"]
        except AnalysisError:
            rep = audit = None
        return DistanceResult(distance, "no_coupling", k=k, report=rep, trace=tr,
                              energy_residual=audit, message="controller stayed in SEARCH")
    status, t_ss, msg = "ok", None, ""
    lock_t = tr.controller.lock_time
    try:
        n = detect_steady_state(tr, None, sim.steady_tol, t0=lock_t)
        t_ss = float(rising_crossings(tr.t, tr.i1, lock_t)[n])
    except NotConverged as exc:
        status, msg = "not_converged", str(exc)
    except AnalysisError as exc:
        status, msg = "not_converged", str(exc)
    zc = rising_crossings(tr.t, tr.i1, lock_t)
    if len(zc) < n_win + 1 or (t_ss is not None and zc[-(n_win + 1)] < t_ss):
        status = "not_converged"
        msg = msg or "run too short for the averaging window after steady state"
    if len(zc) < n_win + 1:
        return DistanceResult(distance, status, k=k, message=msg, trace=tr)
    rep = cycle_metrics(tr, n_win, t_start=zc[-(n_win + 1)])
    audit = energy_balance(tr, zc[-(n_win + 1)], zc[-1])["relative"]
    if audit > ENERGY_BUDGET:
        status, msg = "unstable", f"energy audit residual {audit:.2%} over the window"
    passed = (status == "ok" and rep.v_load >= s.requirement.v_min
              and rep.i_load >= s.requirement.i_min)
    return DistanceResult(distance, status, k=k, report=rep, passed=passed,
                          steady_state_time=t_ss, message=msg, energy_residual=audit,
                          trace=tr)


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

@dataclass
class SweepReport:
    results: list[DistanceResult]
    requirement: tuple[float, float]

    @property
    def largest_passing_distance(self) -> float | None:
        ok = [r.distance for r in self.results if r.passed]
        return max(ok) if ok else None

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.results)

    def efficiencies(self) -> np.ndarray:
        return np.array([r.report.efficiency if r.report else math.nan
                         for r in self.results])

    def to_csv(self) -> str:
        """Table-shaped CSV; distances without a report get empty cells."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.results:
            if r.report is None:
                w.writerow([f"{r.distance * 100:.2f}"] + [""] * (len(REPORT_COLUMNS) - 1))
            else:
                w.writerow(r.report.row(r.distance * 100))
        return buf.getvalue()

    def summary(self) -> dict:
        i_min, v_min = self.requirement
        lp = self.largest_passing_distance
        return {
            "requirement": {"i_min_a": i_min, "v_min_v": v_min},
            "largest_passing_distance_cm": None if lp is None else lp * 100,
            "all_passed": self.all_passed,
            "distances": [{"distance_cm": r.distance * 100, "status": r.status,
                           "passed": r.passed, "k": r.k, "fault": r.fault,
                           "steady_state_time_s": r.steady_state_time,
                           "message": r.message,
                           "report": asdict(r.report) if r.report else None}
                          for r in self.results],
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, allow_nan=False, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(type(o).__name__)


def _sweep_job(args):
    s, d, measured, ctrl = args
    return simulate_distance(s, d, measured, ctrl)


def run_sweep(s: Scenario, workers: int = 1,
              measured: Sequence[MeasuredRow] | None = None) -> SweepReport:
    """Simulate every scenario distance; failures are recorded, not raised.

    ``workers > 1`` farms distances out to processes. Each distance is an
    independent deterministic run, so the report does not depend on it.
    """
    ctrl = controller_for(s)
    jobs = [(s, d, measured, ctrl) for d in s.distances]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    return SweepReport(results, (s.requirement.i_min, s.requirement.v_min))


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------

FREE_PARAMS = ("tx.esr", "rx.esr", "diode_vf", "k_scale")


def get_params(s: Scenario) -> dict[str, float]:
    c = s.circuit
    return {"tx.esr": c.tx.esr, "rx.esr": c.rx.esr, "diode_vf": c.diode_vf,
            "k_scale": s.coupling.k_scale}


def apply_params(s: Scenario, params: dict[str, float]) -> Scenario:
    c = s.circuit
    cpl = s.coupling
    for name, v in params.items():
        if name == "tx.esr":
            c = c.with_(tx=c.tx.with_esr(v))
        elif name == "rx.esr":
            c = c.with_(rx=c.rx.with_esr(v))
        elif name == "diode_vf":
            c = c.with_(diode_vf=v)
        elif name == "k_scale":
            cpl = CouplingModel(cpl.mode, cpl.table, v)
        else:
            raise ValueError(f"unknown calibration parameter {name!r}")
    return s.with_(circuit=c, coupling=cpl)


def tabulate_coupling(s: Scenario, distances: Iterable[float]) -> CouplingModel:
    """Freeze the scenario's k(d) at ``distances`` into a table (no
    extrapolation beyond them)."""
    table = []
    for d in sorted(distances):
        m = coil_mutual(s.circuit.tx, s.circuit.rx, d, s.coupling)
        table.append((d, coupling_coefficient(m, s.circuit.tx.inductance,
                                              s.circuit.rx.inductance)))
    return CouplingModel("tabulated", tuple(table))


@dataclass
class CalibrationResult:
    params: dict[str, float]
    free_params: tuple[str, ...]
    residuals: np.ndarray        # simulated minus measured efficiency, percentage points
    simulated: np.ndarray        # efficiency, percent
    measured: np.ndarray         # efficiency, percent
    rms: float                   # percentage points
    converged: bool
    n_evaluations: int
    distances: tuple[float, ...]
    scenario: Scenario = field(repr=False)

    def calibrated_scenario(self, tabulate: bool = True) -> Scenario:
        """Scenario with the fitted parameters. With ``tabulate`` the coupling
        becomes a table over the measured distances, so distances outside
        that span are reported out of range instead of extrapolated."""
        s = self.scenario
        if tabulate:
            s = s.with_(coupling=tabulate_coupling(s, self.distances))
        return s

    def fragment(self, tabulate: bool = True) -> str:
        """Config fragment with the fitted values (see ``calibrated_scenario``)."""
        table = None
        if tabulate:
            table = tabulate_coupling(self.scenario, self.distances).table
        return calibration_fragment(self.params, table)

    def as_dict(self) -> dict:
        return {"params": self.params, "free_params": list(self.free_params),
                "residuals_pp": self.residuals.tolist(),
                "simulated_pct": self.simulated.tolist(),
                "measured_pct": self.measured.tolist(),
                "rms_pp": self.rms, "converged": self.converged,
                "n_evaluations": self.n_evaluations}


def simulate_rows(s: Scenario, measured: Sequence[MeasuredRow]) -> tuple[np.ndarray, np.ndarray]:
    """Simulated efficiency (percent) and load voltage at each measured row.

    Rows that cannot be simulated (fault, instability, no lock) count as 0.
    """
    ctrl = controller_for(s)
    eff, volt = [], []
    for row in measured:
        r = simulate_distance(s, row.distance, measured, ctrl)
        good = r.report is not None and r.status in ("ok", "not_converged")
        eff.append(100.0 * r.report.efficiency if good else 0.0)
        volt.append(r.report.v_load if good else 0.0)
    return np.array(eff), np.array(volt)


def efficiency_residuals(s: Scenario, measured: Sequence[MeasuredRow]) -> tuple[np.ndarray, np.ndarray]:
    """Simulated efficiencies (percent) and their residuals against ``measured``."""
    sim, _ = simulate_rows(s, measured)
    return sim, sim - np.array([100.0 * r.efficiency for r in measured])


#: objective penalty per percentage point of efficiency increase with distance
MONOTONE_PENALTY = 10.0


def calibrate(s: Scenario, measured: Sequence[MeasuredRow],
              free_params: Sequence[str] = ("tx.esr", "rx.esr", "k_scale"),
              initial: dict[str, float] | None = None, step: float = 0.3,
              max_evaluations: int = 150, xatol: float = 1e-3,
              fatol: float = 1e-3, monotone: bool = False,
              voltage_weight: float = 0.0) -> CalibrationResult:
    """Fit parasitics so simulated efficiency tracks the measured rows.

    Nelder-Mead on the logarithm of each free parameter (all are positive).
    The initial simplex is the starting point plus one vertex per parameter
    scaled by ``1 + step``, so the fit is deterministic.

    The objective is the RMS efficiency error in percentage points. Two
    optional terms:

    monotone
        adds ``MONOTONE_PENALTY`` times the summed increase of simulated
        efficiency between consecutive (distance-ordered) rows.
    voltage_weight
        adds ``voltage_weight`` times the RMS load-voltage error (V) against
        the measured rows, anchoring delivered power as well as the ratio.

    ``rms`` in the result is always the plain efficiency RMS error.
    """
    free = tuple(free_params)
    if len(measured) < 2:
        raise ValueError("need at least two measured rows")
    if len(free) > 4 or len(set(free)) != len(free):
        raise ValueError("at most four distinct free parameters")
    for name in free:
        if name not in FREE_PARAMS:
            raise ValueError(f"unknown calibration parameter {name!r}")
    if "k_scale" in free and s.coupling.mode != "analytic_filament":
        raise ValueError("k_scale calibration needs the analytic coupling model")
    if initial:
        s = apply_params(s, initial)
    base = get_params(s)
    order = np.argsort([r.distance for r in measured])
    meas_pct = np.array([100.0 * r.efficiency for r in measured])
    meas_v = np.array([r.v_rx for r in measured])
    cache: dict[tuple, tuple[float, float, np.ndarray]] = {}

    def evaluate(z):
        key = tuple(np.round(z, 12))
        if key not in cache:
            params = {n: float(math.exp(v)) for n, v in zip(free, z)}
            eff, volt = simulate_rows(apply_params(s, params), measured)
            rms = float(np.sqrt(np.mean((eff - meas_pct) ** 2)))
            obj = rms
            if monotone:
                obj += MONOTONE_PENALTY * float(np.sum(np.maximum(np.diff(eff[order]), 0.0)))
            if voltage_weight:
                obj += voltage_weight * float(np.sqrt(np.mean((volt - meas_v) ** 2)))
            cache[key] = (obj, rms, eff)
        return cache[key]

    if free:
        z0 = np.log([base[n] for n in free])
        simplex = [z0] + [z0 + math.log1p(step) * np.eye(len(free))[i]
                          for i in range(len(free))]
        opt = minimize(lambda z: evaluate(z)[0], z0, method="Nelder-Mead",
                       options={"initial_simplex": np.array(simplex),
                                "maxfev": max_evaluations, "xatol": xatol,
                                "fatol": fatol})
        z_best, converged, n_eval = opt.x, bool(opt.success), int(opt.nfev)
    else:
        z_best, converged, n_eval = np.empty(0), True, 1
    params = dict(base)
    params.update({n: float(math.exp(v)) for n, v in zip(free, z_best)})
    _, rms, sim = evaluate(z_best)
    return CalibrationResult(params=params, free_params=free, residuals=sim - meas_pct,
                             simulated=sim, measured=meas_pct, rms=rms,
                             converged=converged, n_evaluations=n_eval,
                             distances=tuple(r.distance for r in measured),
                             scenario=apply_params(s, params))


def write_sweep(report: SweepReport, out: Path, fmt: str = "csv") -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    if fmt == "csv":
        p = out / "sweep.csv"
        p.write_text(report.to_csv())
        paths.append(p)
    p = out / "sweep.json"
    p.write_text(report.to_json())
    paths.append(p)
    return paths


__all__ = ["MeasuredRow", "bench_dataset", "DistanceResult", "SweepReport",
           "CalibrationResult", "simulate_distance", "run_sweep", "calibrate",
           "circuit_at", "idle_amplitude", "controller_for", "apply_params",
           "get_params", "tabulate_coupling", "efficiency_residuals", "simulate_rows",
           "write_sweep",
           "FREE_PARAMS", "ENERGY_BUDGET", "sim_step", "SimSettings"]
