"""Quasi-static exposure of a homogeneous tissue cylinder to the Tx coil field.

Geometry: the phantom axis runs along x and is centred on the origin; the coil
axis is the z axis and the coil plane sits ``gap`` above the phantom surface,
at ``z = radius + gap``. Induced fields use the vector potential of the coil
filaments only (``E = omega |A|``), which neglects surface-charge
corrections.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numba as nb
import numpy as np
from scipy import ndimage

from .magnetics import MU0, CoilSpec, ellip_ke

EPS0 = 8.8541878128e-12


class DosimetryError(ValueError):
    pass


@dataclass(frozen=True)
class TissuePhantom:
    """Homogeneous wet-skin cylinder."""

    radius: float = 0.040
    length: float = 0.650
    sigma: float = 0.082078   # S/m
    eps_r: float = 12960.0
    rho: float = 1100.0       # kg/m^3

    def __post_init__(self):
        bad = [n for n in ("radius", "length", "sigma", "rho") if not getattr(self, n) > 0]
        if not self.eps_r >= 0:
            bad.append("eps_r")
        if bad:
            raise DosimetryError("invalid TissuePhantom: " + ", ".join(bad))


@dataclass(frozen=True)
class ExposureLimits:
    sar_10g_limit: float = 2.0    # W/kg
    e_limit_rms: float = 17.1     # V/m
    j_limit_rms: float = 0.254    # A/m^2

    def __post_init__(self):
        if not (self.sar_10g_limit > 0 and self.e_limit_rms > 0 and self.j_limit_rms > 0):
            raise DosimetryError("exposure limits must be positive")


# ---------------------------------------------------------------------------
# field of one circular loop (closed form)
# ---------------------------------------------------------------------------

def b_field_loop(a: float, i: float, point) -> np.ndarray:
    """Flux density (T) of a loop of radius ``a`` in the z = 0 plane, centred
    on the origin, carrying ``i`` (counter-clockwise seen from +z).

    ``point`` is a 3-vector or an (n, 3) array.
    """
    if not a > 0:
        raise DosimetryError("loop radius must be positive")
    p = np.asarray(point, dtype=float)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    rho = np.hypot(x, y)
    if np.any((np.abs(rho - a) <= 1e-12 * a) & (np.abs(z) <= 1e-12 * a)):
        raise DosimetryError("field point lies on the filament")
    out = np.zeros_like(p)
    if i == 0:
        return out[0] if single else out
    alpha2 = (a - rho) ** 2 + z ** 2
    beta2 = (a + rho) ** 2 + z ** 2
    m = np.clip(4.0 * a * rho / beta2, 0.0, 1.0 - 1e-16)
    K, E = ellip_ke(m)
    K, E = np.atleast_1d(K), np.atleast_1d(E)
    c = MU0 * i / (2.0 * np.pi * np.sqrt(beta2))
    bz = c * (K + (a * a - rho * rho - z * z) / alpha2 * E)
    with np.errstate(invalid="ignore", divide="ignore"):
        brho = np.where(rho > 0, c * z / rho * (-K + (a * a + rho * rho + z * z) / alpha2 * E),
                        0.0)
        cos = np.where(rho > 0, x / rho, 0.0)
        sin = np.where(rho > 0, y / rho, 0.0)
    out[:, 0] = brho * cos
    out[:, 1] = brho * sin
    out[:, 2] = bz
    return out[0] if single else out


def vector_potential_loop(a: float, i: float, point) -> np.ndarray:
    """Azimuthal vector potential magnitude (T m) of the same loop, closed form."""
    p = np.atleast_2d(np.asarray(point, dtype=float))
    rho = np.hypot(p[:, 0], p[:, 1])
    z = p[:, 2]
    m = 4.0 * a * rho / ((a + rho) ** 2 + z ** 2)
    K, E = ellip_ke(np.clip(m, 0.0, 1.0 - 1e-16))
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.sqrt(m)
        val = MU0 * i / (np.pi * k) * np.sqrt(a / rho) * ((1.0 - 0.5 * m) * K - E)
    return np.where(rho > 0, val, 0.0)


# ---------------------------------------------------------------------------
# quadrature kernel
# ---------------------------------------------------------------------------

@nb.njit(cache=True)
def _coil_fields(pts, radii, heights, currents, n_quad, out_a, out_b):
    """|A| and |B| of coaxial filaments (axis z through the origin) at ``pts``
    by trapezoidal Biot-Savart quadrature (spectrally accurate for a
    periodic integrand)."""
    cphi = np.empty(n_quad)
    sphi = np.empty(n_quad)
    for q in range(n_quad):
        ph = 2.0 * math.pi * q / n_quad
        cphi[q] = math.cos(ph)
        sphi[q] = math.sin(ph)
    scale = 1e-7 * 2.0 * math.pi / n_quad   # mu0/(4 pi) * dphi
    for n in range(pts.shape[0]):
        px, py, pz = pts[n, 0], pts[n, 1], pts[n, 2]
        ax = 0.0
        ay = 0.0
        bx = 0.0
        by = 0.0
        bz = 0.0
        for f in range(radii.shape[0]):
            r = radii[f]
            w = scale * currents[f] * r
            for q in range(n_quad):
                dlx = -sphi[q]
                dly = cphi[q]
                rx = px - r * cphi[q]
                ry = py - r * sphi[q]
                rz = pz - heights[f]
                d2 = rx * rx + ry * ry + rz * rz
                inv = 1.0 / math.sqrt(d2)
                ax += w * dlx * inv
                ay += w * dly * inv
                inv3 = inv * inv * inv
                # dl x R with dl = (dlx, dly, 0)
                bx += w * (dly * rz) * inv3
                by += w * (-dlx * rz) * inv3
                bz += w * (dlx * ry - dly * rx) * inv3
        out_a[n] = math.sqrt(ax * ax + ay * ay)
        out_b[n] = math.sqrt(bx * bx + by * by + bz * bz)


# ---------------------------------------------------------------------------
# field map
# ---------------------------------------------------------------------------

@dataclass
class FieldMap:
    """Peak-amplitude fields on a regular lattice; arrays are indexed
    ``[ix, iy, iz]`` and are zero outside ``mask``."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    mask: np.ndarray
    e_peak: np.ndarray
    j_peak: np.ndarray
    b_peak: np.ndarray
    spacing: float
    i_ref: float
    f: float
    excluded: int = 0

    @property
    def points(self) -> np.ndarray:
        ix, iy, iz = np.nonzero(self.mask)
        return np.column_stack([self.x[ix], self.y[iy], self.z[iz]])

    def peaks(self) -> dict:
        return {"e_peak_vpm": float(self.e_peak.max(initial=0.0)),
                "j_peak_apm2": float(self.j_peak.max(initial=0.0)),
                "b_peak_t": float(self.b_peak.max(initial=0.0))}

    def scaled(self, c: float) -> "FieldMap":
        return FieldMap(self.x, self.y, self.z, self.mask, self.e_peak * c, self.j_peak * c,
                        self.b_peak * c, self.spacing, self.i_ref * c, self.f, self.excluded)

    def to_csv(self, path) -> Path:
        path = Path(path)
        ix, iy, iz = np.nonzero(self.mask)
        data = np.column_stack([self.x[ix], self.y[iy], self.z[iz], self.e_peak[ix, iy, iz],
                                self.j_peak[ix, iy, iz], self.b_peak[ix, iy, iz]])
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("x_m", "y_m", "z_m", "e_vpm", "j_apm2", "b_t"))
            np.savetxt(fh, data, delimiter=",", fmt="%.6e")
        return path


def phantom_grid(phantom: TissuePhantom, spacing: float):
    """Lattice axes and the inside-cylinder mask (axis along x)."""
    nx = int(math.floor(phantom.length / 2 / spacing + 1e-9))
    nr = int(math.floor(phantom.radius / spacing + 1e-9))
    x = spacing * np.arange(-nx, nx + 1)
    y = spacing * np.arange(-nr, nr + 1)
    z = y.copy()
    inside_yz = (y[:, None] ** 2 + z[None, :] ** 2) <= phantom.radius ** 2 * (1 + 1e-12)
    mask = np.broadcast_to(inside_yz, (len(x),) + inside_yz.shape).copy()
    return x, y, z, mask


def induced_fields(phantom: TissuePhantom, coil: CoilSpec, i_peak: float, f: float,
                   spacing: float = 2e-3, gap: float = 6e-3, n_quad: int = 256,
                   complex_admittivity: bool = False) -> FieldMap:
    """Peak E, J and B inside the phantom for a sinusoidal coil current.

    Each filament carries ``i_peak * coil.turns_scale``. ``gap`` is the
    distance from the phantom surface to the coil plane. With
    ``complex_admittivity`` J uses ``|sigma + j omega eps0 eps_r|`` instead of
    the conduction term alone.
    """
    if not 0 < spacing <= 2e-3 * (1 + 1e-12):
        raise DosimetryError("grid spacing must lie in (0, 2 mm]")
    if not f > 0:
        raise DosimetryError("frequency must be positive")
    h0 = phantom.radius + gap
    heights = h0 + coil.offsets
    if np.any(heights <= phantom.radius):
        raise DosimetryError("coil must lie outside the phantom")
    x, y, z, mask = phantom_grid(phantom, spacing)
    radii = coil.radii.astype(float)

    # drop lattice points sitting on a filament
    ix, iy, iz = np.nonzero(mask)
    pts = np.column_stack([x[ix], y[iy], z[iz]])
    rho = np.hypot(pts[:, 0], pts[:, 1])
    on_wire = np.zeros(len(pts), dtype=bool)
    for r, h in zip(radii, heights):
        on_wire |= (np.abs(rho - r) < 1e-9) & (np.abs(pts[:, 2] - h) < 1e-9)
    excluded = int(on_wire.sum())
    if excluded:
        mask[ix[on_wire], iy[on_wire], iz[on_wire]] = False
        ix, iy, iz, pts = ix[~on_wire], iy[~on_wire], iz[~on_wire], pts[~on_wire]

    a_mag = np.zeros(len(pts))
    b_mag = np.zeros(len(pts))
    if i_peak != 0:
        # unit-current kernel, then one scaling: the map is exactly linear in i_peak
        currents = np.full(len(radii), coil.turns_scale)
        _coil_fields(pts, radii, heights.astype(float), currents, int(n_quad), a_mag, b_mag)
        a_mag *= abs(i_peak)
        b_mag *= abs(i_peak)
    a_mag = np.abs(a_mag)
    omega = 2.0 * np.pi * f
    admittivity = phantom.sigma
    if complex_admittivity:
        admittivity = abs(complex(phantom.sigma, omega * EPS0 * phantom.eps_r))
    shape = mask.shape
    e = np.zeros(shape)
    b = np.zeros(shape)
    e[ix, iy, iz] = omega * a_mag
    b[ix, iy, iz] = b_mag
    return FieldMap(x, y, z, mask, e, admittivity * e, b, spacing, float(abs(i_peak)), f,
                    excluded)


# ---------------------------------------------------------------------------
# SAR and compliance
# ---------------------------------------------------------------------------

def cube_points(phantom: TissuePhantom, spacing: float, mass: float = 0.010) -> int:
    """Odd lattice count spanning the side of a cube holding ``mass`` kg."""
    side = (mass / phantom.rho) ** (1.0 / 3.0)
    return 2 * int(round((side / spacing - 1.0) / 2.0)) + 1


def sar_10g(fmap: FieldMap, phantom: TissuePhantom) -> float:
    """Peak 10 g cube-averaged SAR (W/kg) for sinusoidal excitation.

    The cube is centred on each tissue point; parts falling outside the
    phantom are dropped and the average is taken over the tissue that
    remains.
    """
    if fmap.spacing > 5e-3 * (1 + 1e-12):
        raise DosimetryError("grid spacing must not exceed 5 mm")
    side = (0.010 / phantom.rho) ** (1.0 / 3.0)
    if side > 2 * phantom.radius or side > phantom.length:
        raise DosimetryError("10 g cube does not fit inside the phantom")
    if not fmap.mask.any():
        return 0.0
    w = fmap.mask.astype(float)
    sar = np.where(fmap.mask, phantom.sigma * (fmap.e_peak / math.sqrt(2.0)) ** 2
                   / phantom.rho, 0.0)
    n = cube_points(phantom, fmap.spacing)
    num = ndimage.uniform_filter(sar, size=n, mode="constant", cval=0.0)
    den = ndimage.uniform_filter(w, size=n, mode="constant", cval=0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        avg = np.where(fmap.mask & (den > 0), num / den, 0.0)
    return float(avg.max())


def max_compliant_current(sar_10g_peak: float, e_peak: float, j_peak: float, i_ref: float,
                          limits: ExposureLimits = ExposureLimits()) -> float:
    """Largest peak coil current keeping SAR, E and J within limits.

    Fields scale linearly with current and SAR quadratically; peaks convert
    to RMS by 1/sqrt(2). A zero peak puts no bound on the current; with all
    peaks zero the result is ``inf``.
    """
    if not i_ref > 0:
        raise DosimetryError("i_ref must be positive")
    if min(sar_10g_peak, e_peak, j_peak) < 0:
        raise DosimetryError("peaks must be non-negative")
    bounds = []
    if j_peak > 0:
        bounds.append(i_ref * limits.j_limit_rms / (j_peak / math.sqrt(2.0)))
    if e_peak > 0:
        bounds.append(i_ref * limits.e_limit_rms / (e_peak / math.sqrt(2.0)))
    if sar_10g_peak > 0:
        bounds.append(i_ref * math.sqrt(limits.sar_10g_limit / sar_10g_peak))
    return min(bounds) if bounds else math.inf


def exposure_summary(fmap: FieldMap, phantom: TissuePhantom,
                     limits: ExposureLimits = ExposureLimits()) -> dict:
    """Peaks, 10 g SAR and the compliant current for a computed map."""
    pk = fmap.peaks()
    sar = sar_10g(fmap, phantom)
    i_max = max_compliant_current(sar, pk["e_peak_vpm"], pk["j_peak_apm2"], fmap.i_ref,
                                  limits) if fmap.i_ref > 0 else math.inf
    rms = 1.0 / math.sqrt(2.0)
    return {
        "i_ref_a": fmap.i_ref,
        "f_hz": fmap.f,
        "spacing_m": fmap.spacing,
        **pk,
        "e_rms_vpm": pk["e_peak_vpm"] * rms,
        "j_rms_apm2": pk["j_peak_apm2"] * rms,
        "sar_10g_wpkg": sar,
        "limits": {"sar_10g_wpkg": limits.sar_10g_limit, "e_rms_vpm": limits.e_limit_rms,
                   "j_rms_apm2": limits.j_limit_rms},
        "compliant": bool(sar <= limits.sar_10g_limit
                          and pk["e_peak_vpm"] * rms <= limits.e_limit_rms
                          and pk["j_peak_apm2"] * rms <= limits.j_limit_rms),
        "max_compliant_current_a": i_max,
        "excluded_points": fmap.excluded,
        "note": ("E is evaluated inside the tissue (induced term only); reference E "
                 "values quoted for air are not directly comparable."),
    }
