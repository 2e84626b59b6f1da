"""Scenario documents: a small sectioned ``key = value`` format with unit-suffixed
scalars.

Example::

    [circuit]
    l1 = 24 uH
    c1 = auto          # tune to f0
    v_supply = 5 V

    [sweep]
    distances = 5 mm, 10 mm, 20 mm

Every physical quantity must carry a unit suffix matching the key's
dimension; bare numbers are accepted only for dimensionless keys. Unknown
sections or keys are rejected and errors carry the offending line number.
"""

from __future__ import annotations

import re
from typing import Sequence
from dataclasses import dataclass, field, replace
from importlib import resources

from .circuit import (CircuitError, DCMotor, LCLFilter, LinkCircuit, Resistor,
                      ConstantCurrent, validate_circuit)
from .controller import ControllerConfig, ControllerError, ThermalModel
from .magnetics import CouplingModel, MagneticsError, make_coil, resonance_capacitance


class ConfigError(ValueError):
    """Malformed or invalid scenario document."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


# ---------------------------------------------------------------------------
# units
# ---------------------------------------------------------------------------

_PREFIX = {"p": 1e-12, "n": 1e-9, "u": 1e-6, "µ": 1e-6, "m": 1e-3, "": 1.0, "k": 1e3,
           "M": 1e6}

# dimension -> base symbols (case sensitive)
_BASE = {
    "inductance": ("H",),
    "capacitance": ("F",),
    "resistance": ("ohm", "Ohm", "Ω"),
    "voltage": ("V",),
    "current": ("A",),
    "power": ("W",),
    "frequency": ("Hz",),
    "time": ("s",),
    "temperature": ("C", "degC"),
    "thermal_resistance": ("C/W", "K/W"),
    "heat_capacity": ("J/C", "J/K"),
}


def _unit_table():
    table = {}
    for dim, symbols in _BASE.items():
        for sym in symbols:
            if dim in ("temperature", "thermal_resistance", "heat_capacity"):
                table[sym] = (dim, 1.0)
                continue
            for p, f in _PREFIX.items():
                table[p + sym] = (dim, f)
    # lengths: "m" alone is metres, not a prefix
    table.update({"m": ("length", 1.0), "cm": ("length", 1e-2), "mm": ("length", 1e-3),
                  "um": ("length", 1e-6), "µm": ("length", 1e-6)})
    return table


UNITS = _unit_table()
_NUM = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(\S*)\s*$")


def parse_quantity(text: str, dim: str | None, line: int | None = None) -> float:
    """Parse ``'24 uH'`` into SI units, checking the dimension.

    ``dim=None`` means dimensionless (no suffix allowed).
    """
    m = _NUM.match(text)
    if not m:
        raise ConfigError(f"cannot parse quantity {text!r}", line)
    value, unit = float(m.group(1)), m.group(2)
    if dim is None:
        if unit:
            raise ConfigError(f"unexpected unit {unit!r} on dimensionless value", line)
        return value
    if not unit:
        raise ConfigError(f"missing unit suffix (expected a {dim})", line)
    if unit not in UNITS:
        raise ConfigError(f"unknown unit {unit!r}", line)
    got, factor = UNITS[unit]
    if got != dim:
        raise ConfigError(f"unit {unit!r} is a {got}, expected a {dim}", line)
    return value * factor


# ---------------------------------------------------------------------------
# schema
# ---------------------------------------------------------------------------

AUTO = "auto"

# key -> dimension; "str" for words, "list:<dim>" for comma lists
SCHEMA: dict[str, dict[str, str | None]] = {
    "circuit": {
        "v_supply": "voltage", "bridge_ron": "resistance",
        "l1": "inductance", "l2": "inductance", "c1": "capacitance", "c2": "capacitance",
        "f0": "frequency", "tx_esr": "resistance", "rx_esr": "resistance",
        "tx_radius": "length", "rx_radius": "length", "filaments": None,
        "diode_vf": "voltage", "diode_ron": "resistance", "c_rect": "capacitance",
        "lcl_l_in": "inductance", "lcl_c_mid": "capacitance", "lcl_l_out": "inductance",
        "lcl_dcr": "resistance", "rectifier": "str",
        "load": "str", "load_r": "resistance", "load_i": "current",
        "motor_ke": None, "motor_ra": "resistance", "motor_j": None, "motor_b": None,
    },
    "controller": {
        "f_search": "frequency", "search_duty": None, "detect_threshold": "current",
        "f_lo": "frequency", "f_hi": "frequency", "p_max": "power",
        "temp_max": "temperature", "r_th": "thermal_resistance", "c_th": "heat_capacity",
        "t_ambient": "temperature", "idle_amplitude": "current", "settle_tol": None,
        "freq_debounce": None,
    },
    "coupling": {"mode": "str", "k_scale": None, "table": "table"},
    "sweep": {"distances": "list:length", "load": "str"},
    "sim": {"duration": "time", "dt": "time", "dt_out": "time", "steady_tol": None,
            "window_cycles": None},
    "requirement": {"i_min": "current", "v_min": "voltage"},
}
REQUIRED_SECTIONS = ("circuit", "controller", "coupling", "sweep", "sim", "requirement")
_AUTO_OK = {("circuit", "c1"), ("circuit", "c2"), ("controller", "idle_amplitude"),
            ("sim", "dt"), ("sim", "dt_out")}


@dataclass(frozen=True)
class Requirement:
    i_min: float = 5e-3
    v_min: float = 7.0


@dataclass(frozen=True)
class SimSettings:
    duration: float = 4e-3
    dt: float | None = None       # None: default_dt at the window's upper edge
    dt_out: float | None = None   # None: every step
    steady_tol: float = 1e-3
    window_cycles: int = 50


@dataclass(frozen=True)
class Scenario:
    """Everything a sweep needs. ``circuit.m`` is ignored (set per distance).

    ``load_mode`` is ``"circuit"`` (use ``circuit.load`` everywhere) or
    ``"measured"`` (per-distance resistance V/I of the embedded measurements).
    ``auto_idle`` asks the harness to derive the bare-transmitter search
    amplitude so that an empty link stays in SEARCH.
    """

    circuit: LinkCircuit
    controller: ControllerConfig
    coupling: CouplingModel
    distances: tuple[float, ...]
    requirement: Requirement = field(default_factory=Requirement)
    sim: SimSettings = field(default_factory=SimSettings)
    load_mode: str = "circuit"
    auto_idle: bool = True

    def __post_init__(self):
        d = self.distances
        if not d:
            raise ConfigError("distances must be non-empty")
        if any(x <= 0 for x in d) or any(b <= a for a, b in zip(d, d[1:])):
            raise ConfigError("distances must be positive and strictly increasing")
        if self.load_mode not in ("circuit", "measured"):
            raise ConfigError(f"unknown load mode {self.load_mode!r}")

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _parse_lines(text: str) -> dict[str, dict[str, tuple[str, int]]]:
    sections: dict[str, dict[str, tuple[str, int]]] = {}
    current = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", n)
            current = line[1:-1].strip()
            if current not in SCHEMA:
                raise ConfigError(f"unknown section [{current}]", n)
            if current in sections:
                raise ConfigError(f"duplicate section [{current}]", n)
            sections[current] = {}
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", n)
        if current is None:
            raise ConfigError("key outside any section", n)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA[current]:
            raise ConfigError(f"unknown key {key!r} in [{current}]", n)
        if key in sections[current]:
            raise ConfigError(f"duplicate key {key!r}", n)
        sections[current][key] = (value, n)
    return sections


def _values(sections) -> dict[str, dict[str, object]]:
    out: dict[str, dict[str, object]] = {}
    for sec, items in sections.items():
        out[sec] = {}
        for key, (text, n) in items.items():
            dim = SCHEMA[sec][key]
            if text.lower() == AUTO:
                if (sec, key) not in _AUTO_OK:
                    raise ConfigError(f"{key} does not accept 'auto'", n)
                out[sec][key] = AUTO
            elif dim == "str":
                out[sec][key] = text
            elif dim == "table":
                pairs = []
                for item in filter(None, (s.strip() for s in text.split(","))):
                    if ":" not in item:
                        raise ConfigError("table entries look like '5 mm: 0.2'", n)
                    d, k = item.split(":", 1)
                    pairs.append((parse_quantity(d, "length", n), parse_quantity(k, None, n)))
                out[sec][key] = tuple(pairs)
            elif isinstance(dim, str) and dim.startswith("list:"):
                out[sec][key] = tuple(parse_quantity(s, dim[5:], n)
                                      for s in text.split(",") if s.strip())
            else:
                out[sec][key] = parse_quantity(text, dim, n)
    return out


def _line_of(sections, sec, key):
    return sections.get(sec, {}).get(key, (None, None))[1]


def load_scenario(text: str) -> Scenario:
    """Parse and validate a scenario document."""
    sections = _parse_lines(text)
    missing = [s for s in REQUIRED_SECTIONS if s not in sections]
    if missing:
        raise ConfigError("missing required sections: " + ", ".join(f"[{s}]" for s in missing))
    v = _values(sections)
    circ, ctl, cpl = v["circuit"], v["controller"], v["coupling"]

    try:
        circuit = _build_circuit(circ)
        validate_circuit(circuit)
    except CircuitError as exc:
        first = exc.fields[0].split()[0]
        key = {"tx.inductance": "l1", "rx.inductance": "l2", "tx.esr": "tx_esr",
               "rx.esr": "rx_esr"}.get(first, first.replace(".", "_"))
        raise ConfigError("invalid circuit: " + "; ".join(exc.fields),
                          _line_of(sections, "circuit", key)) from exc
    except MagneticsError as exc:
        raise ConfigError(f"invalid circuit: {exc}") from exc

    try:
        thermal = ThermalModel(ctl.get("r_th", 25.0), ctl.get("c_th", 2.0),
                               ctl.get("t_ambient", 25.0))
        idle = ctl.get("idle_amplitude", AUTO)
        controller = ControllerConfig(
            f_search=ctl.get("f_search", 127e3),
            search_duty=ctl.get("search_duty", 0.5),
            detect_threshold=ctl.get("detect_threshold", 0.02),
            f_window=(ctl.get("f_lo", 119e3), ctl.get("f_hi", 135e3)),
            p_max=ctl.get("p_max", 10.0),
            temp_max=ctl.get("temp_max", 85.0),
            thermal=thermal,
            idle_amplitude=None if idle == AUTO else idle,
            settle_tol=ctl.get("settle_tol", 0.02),
            freq_debounce=int(ctl.get("freq_debounce", 32)),
        )
    except ControllerError as exc:
        raise ConfigError(str(exc)) from exc

    try:
        coupling = CouplingModel(mode=cpl.get("mode", "analytic_filament"),
                                 table=cpl.get("table"), k_scale=cpl.get("k_scale", 1.0))
    except MagneticsError as exc:
        raise ConfigError(f"invalid coupling: {exc}",
                          _line_of(sections, "coupling", "table")) from exc

    sim = v["sim"]
    window = sim.get("window_cycles", 50)
    if window < 1 or window != int(window):
        raise ConfigError("window_cycles must be a positive integer",
                          _line_of(sections, "sim", "window_cycles"))
    settings = SimSettings(
        duration=sim.get("duration", 4e-3),
        dt=None if sim.get("dt", AUTO) == AUTO else sim["dt"],
        dt_out=None if sim.get("dt_out", AUTO) == AUTO else sim["dt_out"],
        steady_tol=sim.get("steady_tol", 1e-3),
        window_cycles=int(window),
    )
    if not settings.duration > 0:
        raise ConfigError("duration must be positive", _line_of(sections, "sim", "duration"))
    req = v["requirement"]
    sweep = v["sweep"]
    if "distances" not in sweep:
        raise ConfigError("[sweep] needs 'distances'")
    return Scenario(circuit=circuit, controller=controller, coupling=coupling,
                    distances=tuple(sweep["distances"]),
                    requirement=Requirement(req.get("i_min", 5e-3), req.get("v_min", 7.0)),
                    sim=settings, load_mode=sweep.get("load", "circuit"),
                    auto_idle=idle == AUTO)


def _build_circuit(c: dict) -> LinkCircuit:
    f0 = c.get("f0", 127e3)
    l1, l2 = c.get("l1", 24e-6), c.get("l2", 47e-6)
    n_fil = c.get("filaments", 10)
    for name, val in (("l1", l1), ("l2", l2), ("f0", f0)):
        if not val > 0:
            raise CircuitError([f"{name} must be > 0 (got {val!r})"])
    if n_fil < 1 or n_fil != int(n_fil):
        raise CircuitError([f"filaments must be a positive integer (got {n_fil!r})"])
    tx = make_coil(l1, c.get("tx_esr", 0.15), c.get("tx_radius", 25e-3), int(n_fil))
    rx = make_coil(l2, c.get("rx_esr", 0.30), c.get("rx_radius", 13.15e-3), int(n_fil))
    c1 = c.get("c1", AUTO)
    c2 = c.get("c2", AUTO)
    kind = c.get("load", "resistor")
    if kind == "resistor":
        load = Resistor(c.get("load_r", 100.0))
    elif kind == "dc_motor":
        d = DCMotor()
        load = DCMotor(c.get("motor_ke", d.back_emf_const), c.get("motor_ra", d.armature_r),
                       c.get("motor_j", d.inertia), c.get("motor_b", d.friction))
    elif kind == "constant_current":
        load = ConstantCurrent(c.get("load_i", 10e-3))
    else:
        raise CircuitError([f"load (unknown variant {kind!r})"])
    rect = c.get("rectifier", "on")
    if rect not in ("on", "off"):
        raise CircuitError([f"rectifier must be 'on' or 'off' (got {rect!r})"])
    d = LCLFilter()
    return LinkCircuit(
        tx=tx, rx=rx, m=0.0,
        c1=resonance_capacitance(l1, f0) if c1 == AUTO else c1,
        c2=resonance_capacitance(l2, f0) if c2 == AUTO else c2,
        v_supply=c.get("v_supply", 5.0), bridge_ron=c.get("bridge_ron", 0.1),
        diode_vf=c.get("diode_vf", 0.4), diode_ron=c.get("diode_ron", 0.05),
        c_rect=c.get("c_rect", 1e-6),
        lcl=LCLFilter(c.get("lcl_l_in", d.l_in), c.get("lcl_c_mid", d.c_mid),
                      c.get("lcl_l_out", d.l_out)),
        lcl_dcr=c.get("lcl_dcr", 0.1), load=load, rectifier=rect == "on")


BUNDLED = ("default", "calibrated")


def bundled_scenario_text(name: str = "default") -> str:
    """Text of a scenario shipped with the package: ``default`` (uncalibrated
    bench link) or ``calibrated`` (parasitics fitted to the bench data)."""
    if name not in BUNDLED:
        raise ConfigError(f"no bundled scenario {name!r} (have {', '.join(BUNDLED)})")
    return resources.files("wptlink").joinpath(f"data/{name}.cfg").read_text()


def default_scenario_text() -> str:
    return bundled_scenario_text("default")


def default_scenario() -> Scenario:
    return load_scenario(default_scenario_text())


def _fmt(value: float, unit: str, scale: float) -> str:
    return f"{value / scale:.10g} {unit}"


def calibration_fragment(params: dict[str, float],
                         table: Sequence[tuple[float, float]] | None = None) -> str:
    """Config-document fragment carrying fitted calibration parameters.

    With ``table`` ((distance m, k) pairs) the coupling is frozen into a
    tabulated model instead, which refuses distances outside it.
    """
    lines = []
    circ = {"tx.esr": ("tx_esr", "ohm", 1.0), "rx.esr": ("rx_esr", "ohm", 1.0),
            "diode_vf": ("diode_vf", "V", 1.0)}
    c_lines = [f"{circ[k][0]} = {_fmt(v, circ[k][1], circ[k][2])}"
               for k, v in params.items() if k in circ]
    if c_lines:
        lines += ["[circuit]"] + c_lines
    if table is not None:
        entries = ", ".join(f"{d * 1e3:.10g} mm: {k:.10g}" for d, k in table)
        lines += ["[coupling]", "mode = tabulated", "k_scale = 1.0", f"table = {entries}"]
    elif "k_scale" in params:
        lines += ["[coupling]", f"k_scale = {params['k_scale']:.10g}"]
    return "\n".join(lines) + "\n"


def merge_documents(base: str, fragment: str) -> str:
    """Overlay ``fragment`` keys onto ``base`` (both scenario documents)."""
    over: dict[str, dict[str, str]] = {}
    sec = None
    for raw in fragment.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line.startswith("["):
            sec = line[1:-1].strip()
            over.setdefault(sec, {})
        elif "=" in line and sec:
            k, val = (s.strip() for s in line.split("=", 1))
            over[sec][k] = val
    out, sec, seen = [], None, set()

    def flush(s):
        # new keys go before the blank lines closing the section
        tail = len(out)
        while tail and not out[tail - 1].strip():
            tail -= 1
        extra = [f"{k} = {val}" for k, val in over.get(s, {}).items() if (s, k) not in seen]
        out[tail:tail] = extra

    for raw in base.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line.startswith("["):
            if sec is not None:
                flush(sec)
            sec = line[1:-1].strip()
            out.append(raw)
            continue
        if "=" in line and sec:
            k = line.split("=", 1)[0].strip()
            if k in over.get(sec, {}):
                out.append(f"{k} = {over[sec][k]}")
                seen.add((sec, k))
                continue
        out.append(raw)
    if sec is not None:
        flush(sec)
    return "\n".join(out) + "\n"


__all__ = ["ConfigError", "Scenario", "SimSettings", "Requirement", "load_scenario",
           "parse_quantity", "default_scenario", "default_scenario_text",
           "bundled_scenario_text", "BUNDLED",
           "calibration_fragment", "merge_documents", "UNITS"]
