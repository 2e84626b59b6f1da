"""Autoresonant driver: fixed-frequency search, zero-current-crossing lock and
the board protections (temperature, power, frequency window).

The state machine itself is compiled (:func:`wptlink._kernels.controller_update`)
so the closed-loop simulator and the Python-level :func:`controller_step` share
one implementation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np

from . import _kernels as K


class Mode(str, Enum):
    SEARCH = "SEARCH"
    LOCK = "LOCK"
    FAULT = "FAULT"


class FaultCode(str, Enum):
    OVERTEMP = "OVERTEMP"
    OVERPOWER = "OVERPOWER"
    FREQ_WINDOW = "FREQ_WINDOW"


_MODES = {K.MODE_SEARCH: Mode.SEARCH, K.MODE_LOCK: Mode.LOCK, K.MODE_FAULT: Mode.FAULT}
_FAULTS = {K.FAULT_OVERTEMP: FaultCode.OVERTEMP, K.FAULT_OVERPOWER: FaultCode.OVERPOWER,
           K.FAULT_FREQ: FaultCode.FREQ_WINDOW}


class ControllerError(ValueError):
    pass


@dataclass(frozen=True)
class ThermalModel:
    r_th: float = 25.0       # degC/W
    c_th: float = 2.0        # J/degC
    t_ambient: float = 25.0  # degC


@dataclass(frozen=True)
class ControllerConfig:
    """Driver settings.

    ``idle_amplitude`` is the search-mode tank-current amplitude of the bare
    transmitter. When it is given, a receiver counts as present only once the
    search amplitude has dropped at least ``detect_threshold`` below it
    (reflected load) and has settled: successive periods differ by at most
    ``settle_tol`` times that deficit. Without it, any amplitude above the
    threshold locks.

    The frequency-window fault trips after ``freq_debounce`` consecutive
    locked cycles outside ``f_window``; power and temperature trip at once.
    """

    f_search: float = 127e3
    search_duty: float = 0.5
    detect_threshold: float = 0.05
    f_window: tuple[float, float] = (119e3, 135e3)
    p_max: float = 10.0
    temp_max: float = 85.0
    thermal: ThermalModel = field(default_factory=ThermalModel)
    idle_amplitude: float | None = None
    settle_tol: float = 0.02
    freq_debounce: int = 32

    def __post_init__(self):
        f_lo, f_hi = self.f_window
        problems = []
        if not f_lo < self.f_search < f_hi:
            problems.append("f_search (must lie strictly inside f_window)")
        if not self.p_max > 0:
            problems.append("p_max")
        if not 0 < self.search_duty <= 1:
            problems.append("search_duty")
        if not self.detect_threshold >= 0:
            problems.append("detect_threshold")
        if not (self.thermal.r_th > 0 and self.thermal.c_th > 0):
            problems.append("thermal")
        if problems:
            raise ControllerError("invalid ControllerConfig: " + ", ".join(problems))

    def as_array(self) -> np.ndarray:
        c = np.zeros(K.N_CCFG)
        c[K.C_FSEARCH] = self.f_search
        c[K.C_DUTY] = self.search_duty
        c[K.C_THR] = self.detect_threshold
        c[K.C_FLO], c[K.C_FHI] = self.f_window
        c[K.C_PMAX] = self.p_max
        c[K.C_TMAX] = self.temp_max
        c[K.C_RTH] = self.thermal.r_th
        c[K.C_CTH] = self.thermal.c_th
        c[K.C_TAMB] = self.thermal.t_ambient
        c[K.C_IDLE] = math.nan if self.idle_amplitude is None else self.idle_amplitude
        c[K.C_SETTLE] = self.settle_tol
        c[K.C_DEBOUNCE] = self.freq_debounce
        return c


def fixed_drive(f: float, duty: float = 1.0, window: tuple[float, float] | None = None
                ) -> ControllerConfig:
    """Open-loop square wave at ``f``: a controller that never leaves SEARCH."""
    if window is None:
        window = (0.5 * f, 2.0 * f)
    return ControllerConfig(f_search=f, search_duty=duty, detect_threshold=math.inf,
                            f_window=window, p_max=math.inf, temp_max=math.inf)


class ControllerState:
    """Mutable controller state backed by the compiled state vector."""

    def __init__(self, cfg: ControllerConfig | None = None, raw: np.ndarray | None = None):
        if raw is not None:
            self.raw = np.array(raw, dtype=float)
            return
        s = np.zeros(K.N_CSTATE)
        s[K.S_PERIOD] = 1.0 / cfg.f_search if cfg else math.nan
        s[K.S_TEMP] = cfg.thermal.t_ambient if cfg else 25.0
        s[K.S_LAST_RISE] = math.nan
        s[K.S_LAST_ZC] = math.nan
        s[K.S_LOCK_TIME] = math.nan
        s[K.S_FAULT_TIME] = math.nan
        self.raw = s

    def copy(self) -> "ControllerState":
        return ControllerState(raw=self.raw)

    @property
    def mode(self) -> Mode:
        return _MODES[int(self.raw[K.S_MODE])]

    @property
    def fault_code(self) -> FaultCode | None:
        return _FAULTS.get(int(self.raw[K.S_FAULT]))

    @property
    def period_estimate(self) -> float:
        return float(self.raw[K.S_PERIOD])

    @property
    def f_lock(self) -> float:
        return 1.0 / self.period_estimate

    @property
    def last_zc_time(self) -> float:
        return float(self.raw[K.S_LAST_ZC])

    @property
    def board_temp(self) -> float:
        return float(self.raw[K.S_TEMP])

    @property
    def lock_time(self) -> float:
        return float(self.raw[K.S_LOCK_TIME])

    @property
    def fault_time(self) -> float:
        return float(self.raw[K.S_FAULT_TIME])

    @property
    def drive(self) -> int:
        return int(self.raw[K.S_DRIVE])

    def __repr__(self):
        return (f"ControllerState(mode={self.mode.value}, period={self.period_estimate:.6g}, "
                f"temp={self.board_temp:.3g}, fault={self.fault_code})")


class Sample(NamedTuple):
    t: float
    i1: float
    v_switch: float
    p_tx: float
    p_loss: float = 0.0


def controller_step(cfg: ControllerConfig, st: ControllerState, sample: Sample,
                    _cfg_array: np.ndarray | None = None) -> tuple[int, ControllerState]:
    """Feed one sample; returns the drive polarity and the new state.

    ``sample.p_tx`` is the instantaneous supply power; the controller averages
    it over each drive period before comparing against ``p_max``.
    """
    new = st.copy()
    if new.raw[K.S_HAS_PREV] > 0.5 and not sample.t > new.raw[K.S_PREV_T]:
        raise ControllerError("samples must arrive in strictly increasing time order")
    c = cfg.as_array() if _cfg_array is None else _cfg_array
    drive = K.controller_update(c, new.raw, float(sample.t), float(sample.i1),
                                float(sample.p_tx), float(sample.p_loss))
    return int(drive), new


def check_faults(cfg: ControllerConfig, p_tx: float, f_lock: float, board_temp: float,
                 locked: bool = True) -> FaultCode | None:
    """Fault for the given telemetry, highest priority first (OVERTEMP >
    OVERPOWER > FREQ_WINDOW). The frequency window only applies when locked."""
    for v in (p_tx, f_lock, board_temp):
        if not math.isfinite(v):
            raise ControllerError("telemetry must be finite")
    code = K.fault_code(cfg.as_array(), float(p_tx), float(f_lock), float(board_temp),
                        bool(locked))
    return _FAULTS.get(int(code))


def thermal_step(cfg: ControllerConfig, temp: float, p_loss: float, dt: float) -> float:
    """Explicit update of the first-order board temperature model."""
    if not dt > 0:
        raise ControllerError("dt must be positive")
    return float(K.thermal_update(cfg.as_array(), float(temp), float(p_loss), float(dt)))
