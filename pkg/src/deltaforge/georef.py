"""Pixel/world georeferencing: affine transforms, GCP fitting, UTM <-> WGS84.

Pixel coordinates are (col, row) with row increasing downward; world
coordinates follow the attached CRS (meters for UTM, degrees for WGS84).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import BadZone, DegenerateGcps, SingularTransform

_DET_EPS = 1e-15


@dataclass(frozen=True)
class AffineTransform:
    """x = c + a*col + b*row ; y = f + d*col + e*row."""

    a: float
    b: float
    c: float
    d: float
    e: float
    f: float

    @property
    def det(self) -> float:
        return self.a * self.e - self.b * self.d

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(1.0, 0.0, 0.0, 0.0, 1.0, 0.0)

    def to_list(self):
        return [self.a, self.b, self.c, self.d, self.e, self.f]

    @classmethod
    def from_list(cls, vals) -> "AffineTransform":
        a, b, c, d, e, f = (float(v) for v in vals)
        return cls(a, b, c, d, e, f)


@dataclass(frozen=True)
class GroundControlPoint:
    col: float
    row: float
    x: float
    y: float


@dataclass(frozen=True)
class CrsId:
    """Coordinate reference system tag: 'wgs84', 'utm' or 'unknown'."""

    kind: str  # "wgs84" | "utm" | "unknown"
    zone: Optional[int] = None
    hemisphere: Optional[str] = None  # "N" | "S"
    epsg: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("wgs84", "utm", "unknown"):
            raise ValueError(f"bad CRS kind {self.kind!r}")
        if self.kind == "utm":
            if self.zone is None or not (1 <= self.zone <= 60):
                raise BadZone(f"UTM zone out of range: {self.zone}")
            if self.hemisphere not in ("N", "S"):
                raise ValueError(f"bad hemisphere {self.hemisphere!r}")

    @classmethod
    def unknown(cls) -> "CrsId":
        return cls("unknown")

    @classmethod
    def wgs84(cls) -> "CrsId":
        return cls("wgs84", epsg=4326)

    @classmethod
    def from_epsg(cls, epsg: int) -> "CrsId":
        if epsg == 4326:
            return cls("wgs84", epsg=4326)
        if 32601 <= epsg <= 32660:
            return cls("utm", zone=epsg - 32600, hemisphere="N", epsg=epsg)
        if 32701 <= epsg <= 32760:
            return cls("utm", zone=epsg - 32700, hemisphere="S", epsg=epsg)
        return cls("unknown", epsg=epsg)

    def to_dict(self):
        return {
            "kind": self.kind,
            "zone": self.zone,
            "hemisphere": self.hemisphere,
            "epsg": self.epsg,
        }

    @classmethod
    def from_dict(cls, d) -> "CrsId":
        return cls(
            kind=d.get("kind", "unknown"),
            zone=d.get("zone"),
            hemisphere=d.get("hemisphere"),
            epsg=d.get("epsg"),
        )


def apply_affine(t: AffineTransform, col: float, row: float) -> Tuple[float, float]:
    return (t.c + t.a * col + t.b * row, t.f + t.d * col + t.e * row)


def invert_affine(t: AffineTransform) -> AffineTransform:
    det = t.det
    if abs(det) <= _DET_EPS:
        raise SingularTransform(f"affine determinant too small: {det}")
    # Inverse of [[a, b], [d, e]] plus the translated offset.
    ia = t.e / det
    ib = -t.b / det
    id_ = -t.d / det
    ie = t.a / det
    ic = -(ia * t.c + ib * t.f)
    if_ = -(id_ * t.c + ie * t.f)
    return AffineTransform(ia, ib, ic, id_, ie, if_)


def fit_affine(gcps: Sequence[GroundControlPoint]) -> Tuple[AffineTransform, float]:
    """Least-squares affine from >=3 ground control points.

    Returns the transform and the RMS residual in world units.
    """
    if len(gcps) < 3:
        raise DegenerateGcps(f"need >=3 GCPs, got {len(gcps)}")
    A = np.array([[g.col, g.row, 1.0] for g in gcps])
    X = np.array([g.x for g in gcps])
    Y = np.array([g.y for g in gcps])
    ata = A.T @ A
    # Collinear pixel points make the normal matrix singular.
    if abs(np.linalg.det(ata)) < 1e-9 * max(1.0, np.abs(ata).max()) ** 3:
        raise DegenerateGcps("pixel points are collinear or degenerate")
    abc = np.linalg.solve(ata, A.T @ X)
    def_ = np.linalg.solve(ata, A.T @ Y)
    t = AffineTransform(abc[0], abc[1], abc[2], def_[0], def_[1], def_[2])
    rx = A @ abc - X
    ry = A @ def_ - Y
    rms = float(math.sqrt(np.mean(rx * rx + ry * ry)))
    return t, rms


# --- Transverse Mercator (UTM, WGS84 ellipsoid), 6th-order Krueger series ---

_A_SEMI = 6378137.0
_FLAT = 1.0 / 298.257223563
_K0 = 0.9996
_FALSE_EASTING = 500000.0
_FALSE_NORTHING_S = 10000000.0

_N = _FLAT / (2.0 - _FLAT)
_E2 = _FLAT * (2.0 - _FLAT)
_E = math.sqrt(_E2)

# Rectifying radius.
_A_RECT = _A_SEMI / (1.0 + _N) * (
    1.0 + _N**2 / 4.0 + _N**4 / 64.0 + _N**6 / 256.0
)

_ALPHA = (
    _N / 2.0 - 2.0 * _N**2 / 3.0 + 5.0 * _N**3 / 16.0 + 41.0 * _N**4 / 180.0
    - 127.0 * _N**5 / 288.0 + 7891.0 * _N**6 / 37800.0,
    13.0 * _N**2 / 48.0 - 3.0 * _N**3 / 5.0 + 557.0 * _N**4 / 1440.0
    + 281.0 * _N**5 / 630.0 - 1983433.0 * _N**6 / 1935360.0,
    61.0 * _N**3 / 240.0 - 103.0 * _N**4 / 140.0 + 15061.0 * _N**5 / 26880.0
    + 167603.0 * _N**6 / 181440.0,
    49561.0 * _N**4 / 161280.0 - 179.0 * _N**5 / 168.0
    + 6601661.0 * _N**6 / 7257600.0,
    34729.0 * _N**5 / 80640.0 - 3418889.0 * _N**6 / 1995840.0,
    212378941.0 * _N**6 / 319334400.0,
)

_BETA = (
    _N / 2.0 - 2.0 * _N**2 / 3.0 + 37.0 * _N**3 / 96.0 - _N**4 / 360.0
    - 81.0 * _N**5 / 512.0 + 96199.0 * _N**6 / 604800.0,
    _N**2 / 48.0 + _N**3 / 15.0 - 437.0 * _N**4 / 1440.0 + 46.0 * _N**5 / 105.0
    - 1118711.0 * _N**6 / 3870720.0,
    17.0 * _N**3 / 480.0 - 37.0 * _N**4 / 840.0 - 209.0 * _N**5 / 4480.0
    + 5569.0 * _N**6 / 90720.0,
    4397.0 * _N**4 / 161280.0 - 11.0 * _N**5 / 504.0
    - 830251.0 * _N**6 / 7257600.0,
    4583.0 * _N**5 / 161280.0 - 108847.0 * _N**6 / 3991680.0,
    20648693.0 * _N**6 / 638668800.0,
)


def _check_zone(zone: int) -> None:
    if not isinstance(zone, int) or not (1 <= zone <= 60):
        raise BadZone(f"UTM zone must be 1..60, got {zone}")


def _central_meridian_deg(zone: int) -> float:
    return -183.0 + 6.0 * zone


def wgs84_to_utm(lon: float, lat: float, zone: int) -> Tuple[float, float]:
    """Forward Transverse Mercator. Returns (easting, northing-without-false-N
    applied for the southern hemisphere offset handled by the caller's
    hemisphere); northing is relative to the equator (negative south of it is
    NOT produced: callers pass hemisphere to utm_to_wgs84 instead).

    For points south of the equator the standard false northing is added.
    """
    _check_zone(zone)
    if abs(lat) >= 84.0:
        raise ValueError(f"latitude out of UTM range: {lat}")
    lam = math.radians(lon - _central_meridian_deg(zone))
    phi = math.radians(lat)

    sphi = math.sin(phi)
    t = math.sinh(
        math.atanh(sphi) - 2.0 * math.sqrt(_N) / (1.0 + _N)
        * math.atanh(2.0 * math.sqrt(_N) / (1.0 + _N) * sphi)
    )
    xi_p = math.atan2(t, math.cos(lam))
    eta_p = math.asinh(math.sin(lam) / math.hypot(t, math.cos(lam)))

    xi = xi_p
    eta = eta_p
    for j in range(6):
        k = 2.0 * (j + 1)
        xi += _ALPHA[j] * math.sin(k * xi_p) * math.cosh(k * eta_p)
        eta += _ALPHA[j] * math.cos(k * xi_p) * math.sinh(k * eta_p)

    x = _FALSE_EASTING + _K0 * _A_RECT * eta
    y = _K0 * _A_RECT * xi
    if lat < 0.0:
        y += _FALSE_NORTHING_S
    return (x, y)


def _tau_from_tau_prime(tau_p: float) -> float:
    # Newton inversion of the conformal latitude mapping (Karney 2011).
    tau = tau_p / math.sqrt(1.0 - _E2)
    if not math.isfinite(tau):
        return tau
    for _ in range(8):
        sig = math.sinh(_E * math.atanh(_E * tau / math.hypot(1.0, tau)))
        f = tau * math.hypot(1.0, sig) - sig * math.hypot(1.0, tau) - tau_p
        df = (
            (math.hypot(1.0, sig) * math.hypot(1.0, tau) - sig * tau)
            * (1.0 - _E2) * math.hypot(1.0, tau)
            / (1.0 + (1.0 - _E2) * tau * tau)
        )
        dtau = f / df
        tau -= dtau
        if abs(dtau) < 1e-16 * max(1.0, abs(tau)):
            break
    return tau


def utm_to_wgs84(x: float, y: float, zone: int, hemisphere: str) -> Tuple[float, float]:
    """Inverse Transverse Mercator. Returns (lon_deg, lat_deg)."""
    _check_zone(zone)
    if hemisphere not in ("N", "S"):
        raise ValueError(f"hemisphere must be 'N' or 'S', got {hemisphere!r}")
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError("non-finite UTM coordinates")
    yy = y - (_FALSE_NORTHING_S if hemisphere == "S" else 0.0)
    xi = yy / (_K0 * _A_RECT)
    eta = (x - _FALSE_EASTING) / (_K0 * _A_RECT)

    xi_p = xi
    eta_p = eta
    for j in range(6):
        k = 2.0 * (j + 1)
        xi_p -= _BETA[j] * math.sin(k * xi) * math.cosh(k * eta)
        eta_p -= _BETA[j] * math.cos(k * xi) * math.sinh(k * eta)

    tau_p = math.sin(xi_p) / math.hypot(math.sinh(eta_p), math.cos(xi_p))
    lam = math.atan2(math.sinh(eta_p), math.cos(xi_p))
    tau = _tau_from_tau_prime(tau_p)
    lat = math.degrees(math.atan(tau))
    lon = _central_meridian_deg(zone) + math.degrees(lam)
    return (lon, lat)
