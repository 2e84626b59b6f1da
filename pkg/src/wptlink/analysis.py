"""Steady-state extraction, power metrics, harmonic content, the phasor
(fundamental-frequency) model of the linearised link and small regression
helpers."""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import optimize, stats

from . import _kernels as K
from .circuit import LinkCircuit, Resistor, SimTrace, load_terminals


class AnalysisError(ValueError):
    pass


class NotConverged(AnalysisError):
    def __init__(self, residual: float):
        self.residual = residual
        super().__init__(f"steady state not reached (final residual {residual:.3e})")


# ---------------------------------------------------------------------------
# cycle bookkeeping
# ---------------------------------------------------------------------------

def _interp_rows(t: np.ndarray, y: np.ndarray, tq: np.ndarray) -> np.ndarray:
    """Linear interpolation of every column of ``y`` at times ``tq``."""
    idx = np.clip(np.searchsorted(t, tq, side="right") - 1, 0, len(t) - 2)
    w = (tq - t[idx]) / (t[idx + 1] - t[idx])
    if y.ndim == 1:
        return y[idx] + w * (y[idx + 1] - y[idx])
    return y[idx] + w[:, None] * (y[idx + 1] - y[idx])


def rising_crossings(t: np.ndarray, y: np.ndarray, t_min: float = -math.inf) -> np.ndarray:
    """Interpolated times where ``y`` crosses zero going up."""
    y0, y1 = y[:-1], y[1:]
    hit = np.nonzero((y0 < 0) & (y1 >= 0))[0]
    tc = t[hit] - y0[hit] * (t[hit + 1] - t[hit]) / (y1[hit] - y0[hit])
    return tc[tc >= t_min]


def _trace_arrays(trace) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(trace, SimTrace):
        return trace.t, trace.x[:, :K.N_PHYS]
    t, x = trace
    x = np.asarray(x, dtype=float)
    return np.asarray(t, dtype=float), x.reshape(len(t), -1)


def detect_steady_state(trace, period: float | None = None, tol: float = 1e-3,
                        t0: float | None = None) -> int:
    """First cycle ``n >= 1`` whose boundary state is a fixed point of the
    cycle-to-cycle map: ``|s(n+1) - s(n)| / |s(n)| < tol``.

    Cycle ``n`` ends at ``t0 + n*period``. With ``period=None`` the cycles are
    delimited by the rising zero crossings of the Tx current instead, which is
    the natural section for an autoresonant run. ``trace`` is a
    :class:`SimTrace` or a ``(t, states)`` pair.
    """
    t, x = _trace_arrays(trace)
    if period is None:
        if not isinstance(trace, SimTrace):
            raise AnalysisError("crossing-delimited cycles need a SimTrace")
        bounds = rising_crossings(t, trace.i1, t[0] if t0 is None else t0)
    else:
        start = t[0] if t0 is None else t0
        n = int(math.floor((t[-1] - start) / period * (1 + 1e-12)))
        bounds = start + period * np.arange(n + 1)
    if len(bounds) < 4:
        raise AnalysisError("trace must span at least three cycles")
    s = _interp_rows(t, x, bounds)
    diff = np.linalg.norm(np.diff(s, axis=0), axis=1)
    ref = np.linalg.norm(s[:-1], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        resid = np.where(diff == 0, 0.0, diff / ref)
    # s[0] is the initial condition; cycle n compares s[n+1] with s[n]
    for n in range(1, len(resid)):
        if resid[n] < tol:
            return n
    raise NotConverged(float(resid[-1]))


def cycle_boundaries(trace: SimTrace, period: float | None = None,
                     t_start: float | None = None) -> np.ndarray:
    start = trace.t[0] if t_start is None else t_start
    if period is None:
        return rising_crossings(trace.t, trace.i1, start)
    n = int(math.floor((trace.t[-1] - start) / period * (1 + 1e-12)))
    return start + period * np.arange(n + 1)


def _window_integral(t, y, ta, tb):
    """Trapezoidal integral of sampled ``y`` over [ta, tb] (interpolated ends)."""
    inner = (t > ta) & (t < tb)
    tt = np.concatenate(([ta], t[inner], [tb]))
    yy = np.concatenate(([_interp_rows(t, y, np.array([ta]))[0]], y[inner],
                         [_interp_rows(t, y, np.array([tb]))[0]]))
    return float(np.trapezoid(yy, tt))


# ---------------------------------------------------------------------------
# power report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PowerReport:
    i_tx_rms: float
    i_supply_avg: float
    p_source: float
    i_load: float
    v_load: float
    p_load: float
    efficiency: float
    f_lock: float

    def row(self, distance_cm: float) -> list[str]:
        return [f"{distance_cm:.2f}", f"{self.i_supply_avg:.4g}", f"{self.p_source:.4g}",
                f"{self.i_load * 1e3:.4g}", f"{self.v_load:.4g}", f"{self.p_load:.4g}",
                f"{self.efficiency * 100:.4g}"]


#: Column order of the bench report (distance, Tx current/power, Rx current/voltage/power, eff.).
REPORT_COLUMNS = ("distance_cm", "i_tx_a", "p_tx_w", "i_rx_ma", "v_rx_v", "p_rx_w",
                  "efficiency_pct")


def cycle_metrics(trace: SimTrace, n_cycles: int, t_start: float | None = None,
                  period: float | None = None) -> PowerReport:
    """Average electrical quantities over ``n_cycles`` whole drive cycles.

    With ``period=None`` the window runs between rising Tx-current zero
    crossings (first one at or after ``t_start``); otherwise it is
    ``[t_start, t_start + n_cycles*period]``. Powers come from the integrated
    energy totals, so they are exact up to the integrator error.
    """
    if isinstance(n_cycles, float) and not n_cycles.is_integer():
        raise AnalysisError("window must be a whole number of cycles")
    n_cycles = int(n_cycles)
    if n_cycles < 1:
        raise AnalysisError("window must hold at least one cycle")
    t = trace.t
    start = t[0] if t_start is None else t_start
    if period is None:
        zc = rising_crossings(t, trace.i1, start)
        if len(zc) < n_cycles + 1:
            raise AnalysisError(f"only {max(len(zc) - 1, 0)} whole cycles after t_start")
        ta, tb = zc[0], zc[n_cycles]
    else:
        ta, tb = start, start + n_cycles * period
        if tb > t[-1] * (1 + 1e-12):
            raise AnalysisError("window extends past the end of the trace")
        tb = min(tb, t[-1])
    span = tb - ta
    ends = _interp_rows(t, trace.x, np.array([ta, tb]))
    p_source = (ends[1, K.X_ESRC] - ends[0, K.X_ESRC]) / span
    p_load = (ends[1, K.X_ELOAD] - ends[0, K.X_ELOAD]) / span
    v_l, i_l = load_terminals(trace.circuit, trace.x)
    i_rms = math.sqrt(max(_window_integral(t, trace.i1 ** 2, ta, tb) / span, 0.0))
    v_avg = _window_integral(t, v_l, ta, tb) / span
    i_avg = _window_integral(t, i_l, ta, tb) / span
    eff = p_load / p_source if p_source > 0 else 0.0
    return PowerReport(i_tx_rms=i_rms, i_supply_avg=p_source / trace.circuit.v_supply,
                       p_source=p_source, i_load=i_avg, v_load=v_avg, p_load=p_load,
                       efficiency=eff, f_lock=n_cycles / span)


def energy_balance(trace: SimTrace, ta: float, tb: float) -> dict:
    """Energy audit over [ta, tb]: source, load, dissipation, storage change
    and the relative residual.

    Both ends snap to the nearest stored sample; stored energy is quadratic
    in the state, so interpolating between samples would bias the audit.
    """
    t = trace.t
    idx = np.clip(np.searchsorted(t, [ta, tb]), 1, len(t) - 1)
    idx = np.where(np.abs(t[idx - 1] - [ta, tb]) <= np.abs(t[idx] - [ta, tb]), idx - 1, idx)
    rows = trace.x[idx]
    p = trace.circuit.as_array()
    d_src = rows[1, K.X_ESRC] - rows[0, K.X_ESRC]
    d_load = rows[1, K.X_ELOAD] - rows[0, K.X_ELOAD]
    d_diss = rows[1, K.X_EDISS] - rows[0, K.X_EDISS]
    d_store = K.stored_energy(rows[1], p) - K.stored_energy(rows[0], p)
    resid = d_src - d_load - d_diss - d_store
    return {"source": d_src, "load": d_load, "dissipated": d_diss, "stored": d_store,
            "residual": resid, "relative": abs(resid) / abs(d_src) if d_src else 0.0,
            "t_start": float(t[idx[0]]), "t_end": float(t[idx[1]])}


# ---------------------------------------------------------------------------
# harmonics
# ---------------------------------------------------------------------------

def fourier_coefficient(t, x, f: float) -> complex:
    """Single-bin projection 2/N * sum x e^{-j 2 pi f t} (peak-amplitude phasor)."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    return complex(2.0 / len(x) * np.sum(x * np.exp(-2j * np.pi * f * t)))


def _check_whole_periods(t, f0):
    t = np.asarray(t, dtype=float)
    if len(t) < 2:
        raise AnalysisError("need at least two samples")
    dt = (t[-1] - t[0]) / (len(t) - 1)
    periods = len(t) * dt * f0
    if abs(periods - round(periods)) > 1e-6 * max(periods, 1.0) or round(periods) < 1:
        raise AnalysisError(f"signal spans {periods:.6f} periods, not a whole number")


def harmonic_ratios(t, x, f0: float, n_harmonics: int) -> list[float]:
    """|X_k / X_1| for k = 1..n_harmonics from single-bin projections.

    ``t`` must be uniformly sampled and the samples must cover a whole number
    of ``1/f0`` periods (``len(t) * dt * f0`` integral).
    """
    _check_whole_periods(t, f0)
    coeffs = [abs(fourier_coefficient(t, x, k * f0)) for k in range(1, n_harmonics + 1)]
    if coeffs[0] == 0:
        raise AnalysisError("fundamental is zero")
    return [c / coeffs[0] for c in coeffs]


def harmonic_amplitudes(t, x, f0: float, n_harmonics: int) -> np.ndarray:
    _check_whole_periods(t, f0)
    return np.array([abs(fourier_coefficient(t, x, k * f0))
                     for k in range(1, n_harmonics + 1)])


def fundamental_phase(t, v, i, f: float) -> float:
    """Phase of ``i`` relative to ``v`` at ``f`` in degrees (wrapped to +-180)."""
    pv = fourier_coefficient(t, v, f)
    pi_ = fourier_coefficient(t, i, f)
    return math.degrees(cmath.phase(pi_ / pv))


# ---------------------------------------------------------------------------
# phasor model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhasorSolution:
    i1: complex
    i2: complex
    z_in: complex
    eta_ac: float
    f: float


def rectifier_ac_resistance(r_dc: float, output_filter: str = "capacitive") -> float:
    """Fundamental-frequency equivalent of a full-wave rectifier load.

    ``capacitive``: 8/pi^2 * r_dc (voltage-fed bridge into a reservoir cap);
    ``inductive``: pi^2/8 * r_dc (current-fed bridge into a choke).
    """
    if output_filter == "capacitive":
        return 8.0 / math.pi ** 2 * r_dc
    if output_filter == "inductive":
        return math.pi ** 2 / 8.0 * r_dc
    raise AnalysisError(f"unknown output filter {output_filter!r}")


def _r_ac(circuit: LinkCircuit, r_ac: float | None) -> float:
    if r_ac is not None:
        return r_ac
    if not isinstance(circuit.load, Resistor):
        raise AnalysisError("phasor model needs a resistive load or an explicit r_ac")
    if circuit.rectifier:
        return rectifier_ac_resistance(circuit.load.r)
    return circuit.load.r


def drive_amplitude(circuit: LinkCircuit) -> float:
    """Peak fundamental of the +-v_supply square wave."""
    return 4.0 / math.pi * circuit.v_supply


def phasor_solve(circuit: LinkCircuit, f: float, r_ac: float | None = None,
                 v1: complex | None = None) -> PhasorSolution:
    """Solve the two coupled meshes at ``f``.

    The bridge resistance is folded into the Tx mesh and the load (or
    ``r_ac``) into the Rx mesh. ``v1`` defaults to the square-wave
    fundamental, so currents are peak phasors.
    """
    if not f > 0:
        raise AnalysisError("frequency must be positive")
    if circuit.m ** 2 >= circuit.tx.inductance * circuit.rx.inductance:
        raise AnalysisError("coupling coefficient must be below 1")
    r_load = _r_ac(circuit, r_ac)
    v1 = drive_amplitude(circuit) if v1 is None else v1
    w = 2.0 * math.pi * f
    r1 = circuit.tx.esr + circuit.bridge_ron
    z1 = r1 + 1j * (w * circuit.tx.inductance - 1.0 / (w * circuit.c1))
    z2 = circuit.rx.esr + r_load + 1j * (w * circuit.rx.inductance - 1.0 / (w * circuit.c2))
    zm = 1j * w * circuit.m
    a = np.array([[z1, -zm], [-zm, z2]])
    if abs(np.linalg.det(a)) < 1e-300:
        raise AnalysisError("singular mesh system (lossless resonance)")
    try:
        i1, i2 = np.linalg.solve(a, np.array([v1, 0.0], dtype=complex))
    except np.linalg.LinAlgError as exc:
        raise AnalysisError("singular mesh system") from exc
    if i1 == 0:
        raise AnalysisError("zero input current")
    p_in = (v1 * np.conj(i1)).real
    eta = abs(i2) ** 2 * r_load / p_in if p_in > 0 else 0.0
    return PhasorSolution(complex(i1), complex(i2), complex(v1 / i1), float(eta), f)


def zero_phase_frequency(circuit: LinkCircuit, bracket: tuple[float, float],
                         r_ac: float | None = None, rtol: float = 1e-6) -> float:
    """Frequency in ``bracket`` where the input impedance is purely resistive."""
    f_lo, f_hi = bracket

    def reactance(f):
        return phasor_solve(circuit, f, r_ac).z_in.imag

    x_lo, x_hi = reactance(f_lo), reactance(f_hi)
    if x_lo == 0:
        return f_lo
    if x_hi == 0:
        return f_hi
    if np.sign(x_lo) == np.sign(x_hi):
        raise AnalysisError(f"input reactance does not change sign over {bracket}")
    return float(optimize.bisect(reactance, f_lo, f_hi, rtol=rtol, xtol=1e-12 * f_hi))


# ---------------------------------------------------------------------------
# regression
# ---------------------------------------------------------------------------

def linear_regression(points: Sequence[tuple[float, float]]) -> tuple[float, float, float]:
    """Ordinary least squares; returns (slope, intercept, r^2)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or len(pts) < 2:
        raise AnalysisError("need at least two points")
    if np.all(pts[:, 0] == pts[0, 0]):
        raise AnalysisError("all x values are equal; slope is undefined")
    fit = stats.linregress(pts[:, 0], pts[:, 1])
    return float(fit.slope), float(fit.intercept), float(fit.rvalue ** 2)
