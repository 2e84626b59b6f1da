"""Coil models, series-resonance design and coaxial mutual inductance.

Mutual inductance between circular filaments uses Maxwell's elliptic-integral
formula; K and E come from the arithmetic-geometric mean so the module only
needs numpy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

MU0 = 4e-7 * np.pi

#: Equivalent wire radius used for the self term of each filament.
DEFAULT_WIRE_RADIUS = 0.4e-3


class MagneticsError(ValueError):
    """Raised for non-physical or singular magnetic inputs."""


# ---------------------------------------------------------------------------
# Elliptic integrals
# ---------------------------------------------------------------------------

def ellip_ke(m, rtol=1e-12, max_iter=64):
    """Complete elliptic integrals K(m) and E(m) by the AGM iteration.

    ``m`` is the parameter (modulus squared), ``0 <= m < 1``. Works on scalars
    and arrays.
    """
    m = np.asarray(m, dtype=float)
    if np.any(m < 0) or np.any(m >= 1):
        raise MagneticsError("elliptic parameter must lie in [0, 1)")
    a = np.ones_like(m)
    b = np.sqrt(1.0 - m)
    c = np.sqrt(m)
    total = 0.5 * c * c
    power = 0.5
    for _ in range(max_iter):
        if np.all(np.abs(a - b) <= rtol * a):
            break
        a, b, c = 0.5 * (a + b), np.sqrt(a * b), 0.5 * (a - b)
        power *= 2.0
        total = total + power * c * c
    K = np.pi / (2.0 * a)
    E = K * (1.0 - total)
    if K.ndim == 0:
        return float(K), float(E)
    return K, E


# ---------------------------------------------------------------------------
# Resonance design
# ---------------------------------------------------------------------------

def resonant_frequency(L: float, C: float) -> float:
    """Series LC resonance 1/(2*pi*sqrt(L*C)) in Hz."""
    if not (L > 0 and C > 0):
        raise MagneticsError(f"L and C must be positive (got L={L!r}, C={C!r})")
    return 1.0 / (2.0 * np.pi * np.sqrt(L * C))


def resonance_capacitance(L: float, f_target: float) -> float:
    """Series capacitance that tunes ``L`` to ``f_target``."""
    if not (L > 0 and f_target > 0):
        raise MagneticsError(
            f"L and f_target must be positive (got L={L!r}, f={f_target!r})")
    w = 2.0 * np.pi * f_target
    return 1.0 / (w * w * L)


# ---------------------------------------------------------------------------
# Filament mutual inductance
# ---------------------------------------------------------------------------

def mutual_inductance_loops(a, b, d):
    """Mutual inductance of two coaxial circular filaments.

    Parameters
    ----------
    a, b : float or array
        Loop radii in m.
    d : float or array
        Axial separation in m.

    Returns
    -------
    float or ndarray
        Mutual inductance in H.
    """
    a, b, d = (np.asarray(x, dtype=float) for x in (a, b, d))
    if np.any(a <= 0) or np.any(b <= 0) or np.any(d < 0):
        raise MagneticsError("radii must be positive and separation non-negative")
    if np.any((d == 0) & (a == b)):
        raise MagneticsError("coincident filaments: mutual inductance is singular")
    m = 4.0 * a * b / ((a + b) ** 2 + d * d)
    k = np.sqrt(m)
    K, E = ellip_ke(m)
    out = MU0 * np.sqrt(a * b) * ((2.0 / k - k) * K - (2.0 / k) * E)
    return float(out) if out.ndim == 0 else out


def loop_self_inductance(a: float, wire_radius: float = DEFAULT_WIRE_RADIUS) -> float:
    """Self inductance of a thin circular loop of round wire (low frequency)."""
    if not (0 < wire_radius < a):
        raise MagneticsError("wire radius must be positive and below loop radius")
    return MU0 * a * (np.log(8.0 * a / wire_radius) - 1.75)


# ---------------------------------------------------------------------------
# Coils
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoilSpec:
    """One coil: electrical values plus an equivalent set of circular filaments.

    Each filament stands for ``turns_scale`` turns, so filament-pair sums are
    multiplied by ``turns_scale`` on each side.
    """

    inductance: float
    esr: float
    outer_radius: float
    filaments: tuple[tuple[float, float], ...]
    turns_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "filaments",
                           tuple((float(r), float(z)) for r, z in self.filaments))
        problems = []
        if not self.inductance > 0:
            problems.append("inductance")
        if not self.esr >= 0:
            problems.append("esr")
        if not self.outer_radius > 0:
            problems.append("outer_radius")
        if not self.filaments:
            problems.append("filaments (need at least one)")
        elif any(not (0 < r <= self.outer_radius) for r, _ in self.filaments):
            problems.append("filaments (radius outside (0, outer_radius])")
        if not self.turns_scale > 0:
            problems.append("turns_scale")
        if problems:
            raise MagneticsError("invalid CoilSpec: " + ", ".join(problems))

    @property
    def radii(self) -> np.ndarray:
        return np.array([r for r, _ in self.filaments])

    @property
    def offsets(self) -> np.ndarray:
        return np.array([z for _, z in self.filaments])

    def with_esr(self, esr: float) -> "CoilSpec":
        return CoilSpec(self.inductance, esr, self.outer_radius, self.filaments,
                        self.turns_scale)


def filament_self_sum(radii: Sequence[float], offsets: Sequence[float] | None = None,
                      wire_radius: float = DEFAULT_WIRE_RADIUS) -> float:
    """Inductance of the filament bundle with one turn per filament."""
    radii = np.asarray(radii, dtype=float)
    offsets = np.zeros_like(radii) if offsets is None else np.asarray(offsets, float)
    total = 0.0
    for i, (ri, zi) in enumerate(zip(radii, offsets)):
        total += loop_self_inductance(ri, wire_radius)
        for j in range(i + 1, len(radii)):
            total += 2.0 * mutual_inductance_loops(ri, radii[j], abs(zi - offsets[j]))
    return total


def make_coil(inductance: float, esr: float, outer_radius: float,
              n_filaments: int = 10, inner_fraction: float = 0.4,
              wire_radius: float = DEFAULT_WIRE_RADIUS) -> CoilSpec:
    """Planar coil with filaments spread uniformly over [inner_fraction, 1]·R.

    ``turns_scale`` is chosen so the bundle reproduces ``inductance``.
    """
    if n_filaments < 1:
        raise MagneticsError("need at least one filament")
    if n_filaments == 1:
        radii = np.array([outer_radius])
    else:
        radii = np.linspace(inner_fraction * outer_radius, outer_radius, n_filaments)
    # keep the bundle self-term well defined for tightly packed filaments
    wire = min(wire_radius, 0.45 * (radii[1] - radii[0]) if n_filaments > 1 else wire_radius)
    unit = filament_self_sum(radii, None, wire)
    scale = float(np.sqrt(inductance / unit))
    return CoilSpec(inductance, esr, outer_radius,
                    tuple((float(r), 0.0) for r in radii), scale)


# ---------------------------------------------------------------------------
# Coupling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CouplingModel:
    """How the harness turns distance into mutual inductance.

    ``analytic_filament`` sums filament pairs (optionally multiplied by
    ``k_scale``); ``tabulated`` interpolates k(d) linearly without
    extrapolation.
    """

    mode: str = "analytic_filament"
    table: tuple[tuple[float, float], ...] | None = None
    k_scale: float = 1.0

    def __post_init__(self):
        if self.mode not in ("analytic_filament", "tabulated"):
            raise MagneticsError(f"unknown coupling mode {self.mode!r}")
        if self.mode == "tabulated":
            if not self.table:
                raise MagneticsError("tabulated coupling needs a table")
            d = np.array([p[0] for p in self.table])
            k = np.array([p[1] for p in self.table])
            if np.any(np.diff(d) <= 0):
                raise MagneticsError("table distances must be strictly increasing")
            if np.any(k < 0) or np.any(k >= 1):
                raise MagneticsError("tabulated k must lie in [0, 1)")
        if not self.k_scale > 0:
            raise MagneticsError("k_scale must be positive")

    def k_at(self, d: float) -> float:
        d_tab = [p[0] for p in self.table]
        if not d_tab[0] <= d <= d_tab[-1]:
            raise MagneticsError(
                f"distance {d:g} m outside tabulated range [{d_tab[0]:g}, {d_tab[-1]:g}]")
        return float(np.interp(d, d_tab, [p[1] for p in self.table]))


def coil_mutual(tx: CoilSpec, rx: CoilSpec, d: float,
                model: CouplingModel = CouplingModel()) -> float:
    """Mutual inductance (H) between coaxial coils with planes ``d`` apart.

    Rx filament offsets point towards the Tx side (positive offsets reduce the
    gap), Tx offsets away from it.
    """
    if not d > 0:
        raise MagneticsError("coil distance must be positive")
    if model.mode == "tabulated":
        return model.k_at(d) * np.sqrt(tx.inductance * rx.inductance)
    a = tx.radii[:, None]
    b = rx.radii[None, :]
    gap = d + tx.offsets[:, None] - rx.offsets[None, :]
    m = mutual_inductance_loops(a, b, np.abs(gap))
    return float(model.k_scale * tx.turns_scale * rx.turns_scale * np.sum(m))


def coupling_coefficient(M: float, L1: float, L2: float) -> float:
    """k = M/sqrt(L1*L2); raises if the result is not below one."""
    if not (L1 > 0 and L2 > 0):
        raise MagneticsError("inductances must be positive")
    if M < 0:
        raise MagneticsError("mutual inductance magnitude must be non-negative")
    k = M / np.sqrt(L1 * L2)
    if k >= 1.0:
        raise MagneticsError(f"coupling coefficient {k:.6g} >= 1 is not physical")
    return float(k)


# Würth parts used on the link (outer diameters 50.0 mm and 26.3 mm).
TX_INDUCTANCE = 24e-6
RX_INDUCTANCE = 47e-6
TX_OUTER_RADIUS = 25.0e-3
RX_OUTER_RADIUS = 13.15e-3
F_CENTER = 127e3


def default_tx_coil(esr: float = 0.15, n_filaments: int = 10) -> CoilSpec:
    return make_coil(TX_INDUCTANCE, esr, TX_OUTER_RADIUS, n_filaments)


def default_rx_coil(esr: float = 0.30, n_filaments: int = 10) -> CoilSpec:
    return make_coil(RX_INDUCTANCE, esr, RX_OUTER_RADIUS, n_filaments)
