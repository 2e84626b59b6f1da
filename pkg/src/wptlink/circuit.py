"""Time-domain model of the whole link.

Topology: DC supply -> full bridge (series ``bridge_ron``) -> series Tx tank
(C1, L1) coupled through M to the series Rx tank (L2, C2) -> full-wave diode
bridge -> reservoir capacitor -> LCL filter (l_in, c_mid, l_out) -> load.

With ``rectifier=False`` the bridge and filter are bypassed and a resistive
load sits directly in the Rx mesh, which gives a linear circuit that the
phasor solver in :mod:`wptlink.analysis` can check.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Union

import numpy as np

from . import _kernels as K
from .controller import ControllerConfig, ControllerState, FaultCode, Mode
from .magnetics import (CoilSpec, F_CENTER, default_rx_coil, default_tx_coil,
                        resonance_capacitance)


class CircuitError(ValueError):
    """Invalid circuit description; ``fields`` names the offending entries."""

    def __init__(self, fields):
        self.fields = list(fields)
        super().__init__("invalid circuit: " + "; ".join(self.fields))


class NumericalInstability(RuntimeError):
    def __init__(self, t: float):
        self.t = t
        super().__init__(f"non-finite state at t = {t:.6e} s")


# ---------------------------------------------------------------------------
# loads
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Resistor:
    r: float


@dataclass(frozen=True)
class DCMotor:
    back_emf_const: float = 2e-3   # V s/rad
    armature_r: float = 20.0
    inertia: float = 1e-7          # kg m^2
    friction: float = 1e-6         # N m s/rad


@dataclass(frozen=True)
class ConstantCurrent:
    i: float


LoadModel = Union[Resistor, DCMotor, ConstantCurrent]


@dataclass(frozen=True)
class LCLFilter:
    l_in: float = 10e-6
    c_mid: float = 10e-6
    l_out: float = 10e-6


@dataclass(frozen=True)
class LinkCircuit:
    tx: CoilSpec
    rx: CoilSpec
    m: float
    c1: float
    c2: float
    v_supply: float = 5.0
    bridge_ron: float = 0.1
    diode_vf: float = 0.4
    diode_ron: float = 0.05
    c_rect: float = 1e-6
    lcl: LCLFilter = field(default_factory=LCLFilter)
    lcl_dcr: float = 0.1
    load: LoadModel = field(default_factory=lambda: Resistor(100.0))
    rectifier: bool = True

    def with_(self, **changes) -> "LinkCircuit":
        return replace(self, **changes)

    @property
    def k(self) -> float:
        return self.m / math.sqrt(self.tx.inductance * self.rx.inductance)

    def as_array(self) -> np.ndarray:
        p = np.zeros(K.N_PARAMS)
        p[K.P_VS] = self.v_supply
        p[K.P_RON] = self.bridge_ron
        p[K.P_R1] = self.tx.esr
        p[K.P_L1] = self.tx.inductance
        p[K.P_C1] = self.c1
        p[K.P_M] = self.m
        p[K.P_R2] = self.rx.esr
        p[K.P_L2] = self.rx.inductance
        p[K.P_C2] = self.c2
        p[K.P_VF] = self.diode_vf
        p[K.P_RON_D] = self.diode_ron
        p[K.P_C_RECT] = self.c_rect
        p[K.P_L_IN] = self.lcl.l_in
        p[K.P_C_MID] = self.lcl.c_mid
        p[K.P_L_OUT] = self.lcl.l_out
        p[K.P_DCR] = self.lcl_dcr
        p[K.P_RECTIFIER] = 1.0 if self.rectifier else 0.0
        load = self.load
        if isinstance(load, Resistor):
            p[K.P_LOAD_KIND] = K.LOAD_RESISTOR
            p[K.P_LOAD_R] = load.r
        elif isinstance(load, DCMotor):
            p[K.P_LOAD_KIND] = K.LOAD_MOTOR
            p[K.P_KE] = load.back_emf_const
            p[K.P_RA] = load.armature_r
            p[K.P_J] = load.inertia
            p[K.P_B] = load.friction
        else:
            p[K.P_LOAD_KIND] = K.LOAD_CURRENT
            p[K.P_I_CONST] = load.i
        return p


def default_circuit(m: float = 0.0, load: LoadModel | None = None,
                    f0: float = F_CENTER, **overrides) -> LinkCircuit:
    """5 V link with both tanks tuned to ``f0`` and the default parasitics."""
    tx = overrides.pop("tx", None) or default_tx_coil()
    rx = overrides.pop("rx", None) or default_rx_coil()
    overrides.setdefault("c1", resonance_capacitance(tx.inductance, f0))
    overrides.setdefault("c2", resonance_capacitance(rx.inductance, f0))
    return LinkCircuit(tx=tx, rx=rx, m=m,
                       load=load if load is not None else Resistor(100.0),
                       **overrides)


def validate_circuit(cfg: LinkCircuit) -> LinkCircuit:
    """Return ``cfg`` unchanged if every invariant holds, else raise
    :class:`CircuitError` naming each violated field."""
    bad = []

    def positive(name, value):
        if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
            bad.append(f"{name} must be > 0 (got {value!r})")

    def non_negative(name, value):
        if not (isinstance(value, (int, float)) and math.isfinite(value) and value >= 0):
            bad.append(f"{name} must be >= 0 (got {value!r})")

    positive("v_supply", cfg.v_supply)
    positive("c1", cfg.c1)
    positive("c2", cfg.c2)
    positive("tx.inductance", cfg.tx.inductance)
    positive("rx.inductance", cfg.rx.inductance)
    non_negative("tx.esr", cfg.tx.esr)
    non_negative("rx.esr", cfg.rx.esr)
    non_negative("bridge_ron", cfg.bridge_ron)
    non_negative("m", cfg.m)
    if cfg.rectifier:
        positive("c_rect", cfg.c_rect)
        positive("lcl.l_in", cfg.lcl.l_in)
        positive("lcl.c_mid", cfg.lcl.c_mid)
        positive("lcl.l_out", cfg.lcl.l_out)
        positive("diode_ron", cfg.diode_ron)
        non_negative("diode_vf", cfg.diode_vf)
        non_negative("lcl_dcr", cfg.lcl_dcr)
    load = cfg.load
    if isinstance(load, Resistor):
        positive("load.r", load.r)
    elif isinstance(load, DCMotor):
        if not cfg.rectifier:
            bad.append("load must be a resistor when the rectifier is bypassed")
        for name in ("back_emf_const", "armature_r", "inertia", "friction"):
            positive(f"load.{name}", getattr(load, name))
    elif isinstance(load, ConstantCurrent):
        if not cfg.rectifier:
            bad.append("load must be a resistor when the rectifier is bypassed")
        positive("load.i", load.i)
    else:
        bad.append(f"load has unknown type {type(load).__name__}")
    if cfg.tx.inductance > 0 and cfg.rx.inductance > 0 and cfg.m >= 0:
        if cfg.m ** 2 >= cfg.tx.inductance * cfg.rx.inductance:
            bad.append(f"m (coupling k = {cfg.k:.6g} must be < 1)")
    if bad:
        raise CircuitError(bad)
    return cfg


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------

_STATE_FIELDS = ("i1", "i2", "v_c1", "v_c2", "v_rect", "i_lin", "v_cmid", "i_lout",
                 "motor_speed")


@dataclass(frozen=True)
class SimState:
    i1: float = 0.0
    i2: float = 0.0
    v_c1: float = 0.0
    v_c2: float = 0.0
    v_rect: float = 0.0
    i_lin: float = 0.0
    v_cmid: float = 0.0
    i_lout: float = 0.0
    motor_speed: float = 0.0
    t: float = 0.0
    # running energy totals (J); carried so energy audits need no resampling
    e_source: float = 0.0
    e_dissipated: float = 0.0
    e_load: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in _STATE_FIELDS]
                        + [self.e_source, self.e_dissipated, self.e_load], dtype=float)

    @classmethod
    def from_array(cls, x, t: float) -> "SimState":
        vals = dict(zip(_STATE_FIELDS, map(float, x[:K.N_PHYS])))
        return cls(**vals, t=float(t), e_source=float(x[K.X_ESRC]),
                   e_dissipated=float(x[K.X_EDISS]), e_load=float(x[K.X_ELOAD]))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.as_array())))


def initial_state(cfg: LinkCircuit) -> SimState:
    if isinstance(cfg.load, ConstantCurrent) and cfg.rectifier:
        return SimState(i_lout=cfg.load.i)
    return SimState()


def load_terminals(cfg: LinkCircuit, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Load voltage and current for state rows ``x`` (shape (..., N_STATE))."""
    x = np.asarray(x)
    if not cfg.rectifier:
        i = x[..., K.X_I2]
        return cfg.load.r * i, i
    i = x[..., K.X_ILOUT]
    load = cfg.load
    if isinstance(load, Resistor):
        v = load.r * i
    elif isinstance(load, DCMotor):
        v = load.back_emf_const * x[..., K.X_OMEGA] + load.armature_r * i
    else:
        v = x[..., K.X_VCMID] - cfg.lcl_dcr * i
    return v, i


def stored_energy(cfg: LinkCircuit, s: SimState | np.ndarray) -> float:
    x = s.as_array() if isinstance(s, SimState) else np.asarray(s, dtype=float)
    return float(K.stored_energy(x, cfg.as_array()))


def step(cfg: LinkCircuit, s: SimState, drive: int, dt: float,
         period: float | None = None) -> SimState:
    """Advance one fixed RK4 step with bridge polarity ``drive`` (-1, 0 or +1).

    ``period`` is the drive period used to enforce at least 200 steps per
    cycle (defaults to the Tx tank resonance).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if period is None:
        period = 2.0 * math.pi * math.sqrt(cfg.tx.inductance * cfg.c1)
    if dt > period / 200.0 * (1 + 1e-12):
        raise ValueError(f"dt = {dt:g} s exceeds period/200 = {period / 200:g} s")
    if drive not in (-1, 0, 1):
        raise ValueError("drive must be -1, 0 or +1")
    x = s.as_array()
    work = np.zeros((5, K.N_STATE))
    K.rk4_step(x, float(drive), dt, cfg.as_array(), work)
    if not K.all_finite(x):
        raise NumericalInstability(s.t + dt)
    return SimState.from_array(x, s.t + dt)


# ---------------------------------------------------------------------------
# transient runs
# ---------------------------------------------------------------------------

@dataclass
class SimTrace:
    """Uniformly sampled run output.

    ``x`` holds the full state rows (see ``_kernels.X_*`` for columns) at the
    sample times ``t``; ``drive`` is the polarity applied from each sample to
    the next one.
    """

    circuit: LinkCircuit
    dt_out: float
    t: np.ndarray
    x: np.ndarray
    drive: np.ndarray
    v_switch: np.ndarray
    i_supply: np.ndarray
    controller: ControllerState
    status: str = "ok"
    t_end: float = 0.0

    def __len__(self):
        return len(self.t)

    @property
    def i1(self):
        return self.x[:, K.X_I1]

    @property
    def i2(self):
        return self.x[:, K.X_I2]

    @property
    def v_c1(self):
        return self.x[:, K.X_VC1]

    @property
    def v_c2(self):
        return self.x[:, K.X_VC2]

    @property
    def v_load(self):
        return load_terminals(self.circuit, self.x)[0]

    @property
    def i_load(self):
        return load_terminals(self.circuit, self.x)[1]

    @property
    def e_source(self):
        return self.x[:, K.X_ESRC]

    @property
    def e_dissipated(self):
        return self.x[:, K.X_EDISS]

    @property
    def e_load(self):
        return self.x[:, K.X_ELOAD]

    @property
    def fault(self) -> FaultCode | None:
        return self.controller.fault_code

    def state(self, index: int) -> SimState:
        return SimState.from_array(self.x[index], self.t[index])

    def stored_energy(self) -> np.ndarray:
        p = self.circuit.as_array()
        return np.array([K.stored_energy(row, p) for row in self.x])

    def telemetry(self) -> dict:
        st = self.controller
        return {
            "status": self.status,
            "final_mode": st.mode.value,
            "lock_time_s": None if math.isnan(st.lock_time) else st.lock_time,
            "f_lock_hz": st.f_lock if st.mode == Mode.LOCK else None,
            "fault": st.fault_code.value if st.fault_code else None,
            "fault_time_s": None if math.isnan(st.fault_time) else st.fault_time,
            "board_temp_c": st.board_temp,
        }

    def to_csv(self, path) -> Path:
        path = Path(path)
        v_load, i_load = load_terminals(self.circuit, self.x)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for n in range(len(self.t)):
                w.writerow([f"{self.t[n]:.9e}", f"{self.i1[n]:.6e}", f"{self.i2[n]:.6e}",
                            f"{self.v_c1[n]:.6e}", f"{self.v_c2[n]:.6e}",
                            f"{v_load[n]:.6e}", f"{i_load[n]:.6e}", int(self.drive[n]),
                            f"{self.v_switch[n]:.6e}", f"{self.i_supply[n]:.6e}"])
        return path


TRACE_COLUMNS = ("t_s", "i1_a", "i2_a", "v_c1_v", "v_c2_v", "v_load_v", "i_load_a",
                 "drive", "v_switch_v", "i_supply_a")


def default_dt(f: float = F_CENTER, steps_per_cycle: int = 256) -> float:
    return 1.0 / (f * steps_per_cycle)


def run_transient(cfg: LinkCircuit, ctrl: ControllerConfig, duration: float, dt: float,
                  dt_out: float | None = None, s0: SimState | None = None,
                  raise_on_instability: bool = True) -> SimTrace:
    """Closed-loop fixed-step run; the controller sets the polarity each step.

    A controller fault ends the run early (``status == "fault"``). Identical
    inputs give bit-identical traces.
    """
    validate_circuit(cfg)
    if not duration > 0:
        raise ValueError("duration must be positive")
    dt_out = dt if dt_out is None else dt_out
    ratio = dt_out / dt
    every = int(round(ratio))
    if every < 1 or abs(ratio - every) > 1e-9 * ratio:
        raise ValueError("dt must divide dt_out")
    f_max = ctrl.f_search if math.isinf(ctrl.detect_threshold) else ctrl.f_window[1]
    if dt > 1.0 / (200.0 * f_max) * (1 + 1e-9):
        raise ValueError("dt too large: need >= 200 steps per drive cycle")
    n_steps = int(math.ceil(duration / dt / every)) * every
    n_rec = n_steps // every + 1

    p = cfg.as_array()
    c = ctrl.as_array()
    x = (s0 or initial_state(cfg)).as_array()
    st = ControllerState(ctrl)
    rec_t = np.empty(n_rec)
    rec_x = np.empty((n_rec, K.N_STATE))
    rec_d = np.empty(n_rec)
    rec_v = np.empty(n_rec)
    rec_i = np.empty(n_rec)
    n, status, t_end = K.run_loop(p, c, x, st.raw, n_steps, dt, every,
                                  rec_t, rec_x, rec_d, rec_v, rec_i)
    label = {K.STATUS_OK: "ok", K.STATUS_FAULT: "fault",
             K.STATUS_UNSTABLE: "unstable"}[status]
    if status == K.STATUS_UNSTABLE and raise_on_instability:
        raise NumericalInstability(t_end)
    return SimTrace(cfg, dt_out, rec_t[:n].copy(), rec_x[:n].copy(), rec_d[:n].copy(),
                    rec_v[:n].copy(), rec_i[:n].copy(), st, label, t_end)
