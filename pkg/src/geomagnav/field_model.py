"""IGRF coefficient parsing and main-field synthesis.

The engine evaluates the internal geomagnetic field on a spherical Earth
(reference radius 6371.2 km) from Schmidt semi-normalized Gauss
coefficients, decomposes the field vector into the seven standard
elements, and estimates horizontal gradients of any element by central
finite differences.

All angles are radians internally; degrees appear only in ``GeoPosition``
and at I/O boundaries.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from .geodesy import LocalFrame, METERS_PER_DEG_LAT

EARTH_RADIUS_KM = 6371.2
POLE_OFFSET_DEG = 1e-6
GRADIENT_STEP_M = 1000.0
ELEMENT_NAMES = ("b_f", "b_h", "bx", "by", "bz", "d", "i")
GRID_HEADER = ("lat", "lon", "D_deg", "I_deg", "BH_nT", "BF_nT")
COEFFS_ENV_VAR = "GEOMAGNAV_COEFFS"


class FieldModelError(Exception):
    """Base class for field engine failures."""


class CoefficientParseError(FieldModelError):
    pass


class EpochRangeError(FieldModelError):
    pass


class DegenerateFieldError(FieldModelError):
    pass


class PoleError(FieldModelError):
    pass


@dataclass(frozen=True)
class CoefficientSet:
    """Gauss coefficients per epoch.

    ``g[k]`` and ``h[k]`` are ``(N+1, N+1)`` arrays indexed ``[n, m]`` for
    ``epochs[k]``; ``sv_g``/``sv_h`` hold the secular variation (nT/yr)
    that applies after the final epoch.
    """

    epochs: tuple[float, ...]
    g: tuple[np.ndarray, ...]
    h: tuple[np.ndarray, ...]
    sv_g: np.ndarray
    sv_h: np.ndarray

    def __post_init__(self):
        if len(self.epochs) == 0:
            raise CoefficientParseError("coefficient set has no epochs")
        if any(b <= a for a, b in zip(self.epochs, self.epochs[1:])):
            raise CoefficientParseError("epochs must be strictly increasing")
        for arr in (*self.g, *self.h, self.sv_g, self.sv_h):
            arr.setflags(write=False)

    @property
    def max_degree(self) -> int:
        return self.g[0].shape[0] - 1

    @property
    def supported_range(self) -> tuple[float, float]:
        return self.epochs[0], self.epochs[-1] + 5.0

    def coefficients_at(self, epoch: float) -> tuple[np.ndarray, np.ndarray]:
        """Interpolated (g, h) arrays for a decimal-year epoch."""
        lo, hi = self.supported_range
        if not (lo <= epoch <= hi):
            raise EpochRangeError(f"epoch {epoch} outside supported range [{lo}, {hi}]")
        eps = self.epochs
        if epoch >= eps[-1]:
            dt = epoch - eps[-1]
            return self.g[-1] + dt * self.sv_g, self.h[-1] + dt * self.sv_h
        k = int(np.searchsorted(eps, epoch, side="right")) - 1
        w = (epoch - eps[k]) / (eps[k + 1] - eps[k])
        g = (1.0 - w) * self.g[k] + w * self.g[k + 1]
        h = (1.0 - w) * self.h[k] + w * self.h[k + 1]
        return g, h

    @classmethod
    def single_epoch(cls, g: np.ndarray, h: np.ndarray | None = None, epoch: float = 2020.0):
        """Build a one-epoch set with zero secular variation (handy for synthetic models)."""
        g = np.array(g, dtype=float)
        h = np.zeros_like(g) if h is None else np.array(h, dtype=float)
        return cls((float(epoch),), (g,), (h,), np.zeros_like(g), np.zeros_like(g))


@dataclass(frozen=True)
class GeoPosition:
    latitude: float
    longitude: float
    altitude: float = 0.0

    def __post_init__(self):
        lat, lon = float(self.latitude), float(self.longitude)
        if not math.isfinite(lat) or not math.isfinite(lon):
            raise ValueError("non-finite coordinates")
        if not -90.0 <= lat <= 90.0:
            raise ValueError(f"latitude {lat} outside [-90, 90]")
        lon = math.fmod(lon, 360.0)
        if lon > 180.0:
            lon -= 360.0
        elif lon <= -180.0:
            lon += 360.0
        object.__setattr__(self, "latitude", lat)
        object.__setattr__(self, "longitude", lon)
        object.__setattr__(self, "altitude", float(self.altitude))


@dataclass(frozen=True)
class FieldVector:
    bx: float
    by: float
    bz: float

    @property
    def magnitude(self) -> float:
        return math.sqrt(self.bx**2 + self.by**2 + self.bz**2)


@dataclass(frozen=True)
class GeomagneticElements:
    b_f: float
    b_h: float
    bx: float
    by: float
    bz: float
    d: float
    i: float

    def get(self, name: str) -> float:
        return getattr(self, _ALIASES.get(name, name))

    def triple(self) -> tuple[float, float, float]:
        """(D, I, B_H), the navigation parameters."""
        return self.d, self.i, self.b_h


_ALIASES = {"D": "d", "I": "i", "BH": "b_h", "B_H": "b_h", "BF": "b_f", "B_F": "b_f",
            "Bx": "bx", "By": "by", "Bz": "bz"}


@dataclass(frozen=True)
class GradientVector:
    gx: float  # per meter, east
    gy: float  # per meter, north

    def as_array(self) -> np.ndarray:
        return np.array([self.gx, self.gy])


# ---------------------------------------------------------------------------
# parsing


def parse_coefficients(text: str) -> CoefficientSet:
    """Parse the IGRF ``g/h n m v1 ... vk sv`` text layout."""
    epochs: list[float] | None = None
    rows: list[tuple[str, int, int, list[float], float, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if tokens[0] in ("g/h",):
            try:
                epochs = [float(t) for t in tokens[3:-1]]
            except ValueError as exc:
                raise CoefficientParseError(f"line {lineno}: bad epoch header: {exc}") from None
            if not epochs:
                raise CoefficientParseError(f"line {lineno}: epoch header lists no epochs")
            continue
        if tokens[0] not in ("g", "h"):
            # column-label rows such as "c/s deg ord IGRF ..."
            continue
        if epochs is None:
            raise CoefficientParseError(f"line {lineno}: coefficient row before epochs header")
        if len(tokens) != 3 + len(epochs) + 1:
            raise CoefficientParseError(
                f"line {lineno}: expected {4 + len(epochs)} tokens, got {len(tokens)}")
        try:
            n, m = int(tokens[1]), int(tokens[2])
            vals = [float(t) for t in tokens[3:]]
        except ValueError as exc:
            raise CoefficientParseError(f"line {lineno}: {exc}") from None
        if n < 1 or m < 0 or m > n:
            raise CoefficientParseError(f"line {lineno}: invalid degree/order ({n}, {m})")
        if tokens[0] == "h" and m == 0 and any(v != 0.0 for v in vals):
            raise CoefficientParseError(f"line {lineno}: h(n,0) must be zero")
        rows.append((tokens[0], n, m, vals[:-1], vals[-1], lineno))

    if epochs is None:
        raise CoefficientParseError("missing epochs header row (\"g/h n m ...\")")
    if not rows:
        raise CoefficientParseError("no coefficient rows")

    nmax = max(r[1] for r in rows)
    k = len(epochs)
    g = np.zeros((k, nmax + 1, nmax + 1))
    h = np.zeros((k, nmax + 1, nmax + 1))
    sv_g = np.zeros((nmax + 1, nmax + 1))
    sv_h = np.zeros((nmax + 1, nmax + 1))
    seen = set()
    for kind, n, m, vals, sv, lineno in rows:
        if (kind, n, m) in seen:
            raise CoefficientParseError(f"line {lineno}: duplicate coefficient {kind}({n},{m})")
        seen.add((kind, n, m))
        if kind == "g":
            g[:, n, m] = vals
            sv_g[n, m] = sv
        else:
            h[:, n, m] = vals
            sv_h[n, m] = sv
    missing = [(n, m) for n in range(1, nmax + 1) for m in range(n + 1) if ("g", n, m) not in seen]
    if missing:
        raise CoefficientParseError(f"missing g coefficients for (n, m) in {missing[:5]}")
    return CoefficientSet(tuple(epochs), tuple(g), tuple(h), sv_g, sv_h)


def default_coefficient_path() -> str | None:
    """Coefficient file override from the environment, if set."""
    return os.environ.get(COEFFS_ENV_VAR) or None


def load_coefficients(path: str | os.PathLike | None = None) -> CoefficientSet:
    """Load a coefficient file; falls back to the bundled IGRF-13 table."""
    path = path or default_coefficient_path()
    if path is None:
        text = resources.files("geomagnav").joinpath("data/igrf13coeffs.txt").read_text()
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return parse_coefficients(text)


# ---------------------------------------------------------------------------
# synthesis


def schmidt_legendre(nmax: int, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Schmidt semi-normalized P(n, m)(cos theta) and dP/dtheta.

    Returns arrays of shape ``(nmax+1, nmax+1) + theta.shape``.
    """
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    P = np.zeros((nmax + 1, nmax + 1) + theta.shape)
    dP = np.zeros_like(P)
    P[0, 0] = 1.0
    for n in range(1, nmax + 1):
        # sectoral term
        k = 1.0 if n == 1 else math.sqrt((2.0 * n - 1.0) / (2.0 * n))
        P[n, n] = k * s * P[n - 1, n - 1]
        dP[n, n] = k * (c * P[n - 1, n - 1] + s * dP[n - 1, n - 1])
        for m in range(n):
            a = math.sqrt(n * n - m * m)
            b = math.sqrt((n - 1) ** 2 - m * m) if n - 1 >= m else 0.0
            p2 = P[n - 2, m] if n >= 2 else 0.0
            dp2 = dP[n - 2, m] if n >= 2 else 0.0
            P[n, m] = ((2 * n - 1) * c * P[n - 1, m] - b * p2) / a
            dP[n, m] = ((2 * n - 1) * (c * dP[n - 1, m] - s * P[n - 1, m]) - b * dp2) / a
    return P, dP


def _offset_pole(lat: np.ndarray) -> np.ndarray:
    near = np.abs(np.abs(lat) - 90.0) < POLE_OFFSET_DEG
    if np.any(near):
        lat = np.where(near, np.sign(lat) * (90.0 - POLE_OFFSET_DEG), lat)
    return lat


def synthesize(g: np.ndarray, h: np.ndarray, lat, lon, alt=0.0):
    """Vectorized north/east/down field (nT) for arrays of positions (degrees, km)."""
    lat = _offset_pole(np.asarray(lat, dtype=float))
    lon = np.asarray(lon, dtype=float)
    lat, lon, alt = np.broadcast_arrays(lat, lon, np.asarray(alt, dtype=float))
    nmax = g.shape[0] - 1
    theta = np.radians(90.0 - lat)
    phi = np.radians(lon)
    ratio = EARTH_RADIUS_KM / (EARTH_RADIUS_KM + alt)
    P, dP = schmidt_legendre(nmax, theta)
    sin_t = np.sin(theta)

    br = np.zeros(lat.shape)
    bt = np.zeros(lat.shape)
    bp = np.zeros(lat.shape)
    cos_m = [np.cos(m * phi) for m in range(nmax + 1)]
    sin_m = [np.sin(m * phi) for m in range(nmax + 1)]
    for n in range(1, nmax + 1):
        rn = ratio ** (n + 2)
        for m in range(n + 1):
            gnm, hnm = g[n, m], h[n, m]
            if gnm == 0.0 and hnm == 0.0:
                continue
            cs = gnm * cos_m[m] + hnm * sin_m[m]
            br += (n + 1) * rn * cs * P[n, m]
            bt -= rn * cs * dP[n, m]
            if m:
                bp -= rn * m * (hnm * cos_m[m] - gnm * sin_m[m]) * P[n, m]
    bp = bp / sin_t
    return -bt, bp, -br


def evaluate_field(coeffs: CoefficientSet, pos: GeoPosition, epoch: float) -> FieldVector:
    g, h = coeffs.coefficients_at(epoch)
    x, y, z = synthesize(g, h, pos.latitude, pos.longitude, pos.altitude)
    return FieldVector(float(x), float(y), float(z))


def elements_from_arrays(bx, by, bz):
    """Array form of :func:`elements_from_vector`: returns (b_f, b_h, d, i)."""
    bh = np.hypot(bx, by)
    bf = np.sqrt(bx * bx + by * by + bz * bz)
    return bf, bh, np.arctan2(by, bx), np.arctan2(bz, bh)


def elements_from_vector(v: FieldVector) -> GeomagneticElements:
    vals = (v.bx, v.by, v.bz)
    if not all(math.isfinite(c) for c in vals):
        raise DegenerateFieldError(f"non-finite field vector {vals}")
    if vals == (0.0, 0.0, 0.0):
        raise DegenerateFieldError("zero field vector")
    bh = math.hypot(v.bx, v.by)
    bf = math.sqrt(v.bx**2 + v.by**2 + v.bz**2)
    return GeomagneticElements(b_f=bf, b_h=bh, bx=v.bx, by=v.by, bz=v.bz,
                               d=math.atan2(v.by, v.bx), i=math.atan2(v.bz, bh))


# ---------------------------------------------------------------------------
# field sources


class FieldSource:
    """Anything that maps positions to geomagnetic elements.

    Subclasses implement :meth:`vectors`, the array form; everything else
    derives from it.
    """

    def vectors(self, lat, lon, alt=0.0):  # pragma: no cover - interface
        raise NotImplementedError

    def elements(self, pos: GeoPosition) -> GeomagneticElements:
        bx, by, bz = self.vectors(pos.latitude, pos.longitude, pos.altitude)
        return elements_from_vector(FieldVector(float(bx), float(by), float(bz)))

    def params(self, lat, lon, alt=0.0) -> np.ndarray:
        """(D, I, B_H) for arrays of positions; shape ``(..., 3)``."""
        bx, by, bz = (np.asarray(a, dtype=float) for a in self.vectors(lat, lon, alt))
        bf, bh, d, i = elements_from_arrays(bx, by, bz)
        if not np.all(np.isfinite(bf)) or np.any(bf == 0.0):
            raise DegenerateFieldError("zero or non-finite field vector")
        return np.stack([d, i, bh], axis=-1)


class IGRFField(FieldSource):
    """IGRF synthesis frozen at one epoch."""

    def __init__(self, coeffs: CoefficientSet, epoch: float = 2020.0):
        self.coeffs = coeffs
        self.epoch = float(epoch)
        self._g, self._h = coeffs.coefficients_at(self.epoch)

    def vectors(self, lat, lon, alt=0.0):
        return synthesize(self._g, self._h, lat, lon, alt)


class DipoleField(FieldSource):
    """Closed-form axial dipole with Gauss coefficient ``g10`` (nT)."""

    def __init__(self, g10: float = -29404.8):
        self.g10 = float(g10)

    def vectors(self, lat, lon, alt=0.0):
        lat = np.asarray(lat, dtype=float)
        theta = np.radians(90.0 - lat)
        r3 = (EARTH_RADIUS_KM / (EARTH_RADIUS_KM + np.asarray(alt, dtype=float))) ** 3
        bx = -self.g10 * r3 * np.sin(theta)
        bz = -2.0 * self.g10 * r3 * np.cos(theta)
        return bx, np.zeros_like(bx), bz


@dataclass(frozen=True)
class LinearField(FieldSource):
    """Synthetic field whose D, I and B_H vary linearly in local meters.

    ``origin`` holds (D, I, B_H) at the frame anchor; ``gradients`` is a
    3x2 array of per-meter (east, north) slopes.  The full element set is
    rebuilt consistently from the three parameters.
    """

    frame: LocalFrame
    origin: tuple[float, float, float] = (0.14, -0.37, 35000.0)
    gradients: np.ndarray = field(default_factory=lambda: np.array(
        [[4.0e-7, 1.0e-7], [0.5e-7, 1.6e-6], [-2.0e-3, 1.5e-3]]))

    def __post_init__(self):
        object.__setattr__(self, "gradients", np.asarray(self.gradients, dtype=float).reshape(3, 2))

    def params(self, lat, lon, alt=0.0) -> np.ndarray:
        x, y = self.frame.to_xy(lat, lon)
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        base = np.asarray(self.origin, dtype=float)
        return base + x[..., None] * self.gradients[:, 0] + y[..., None] * self.gradients[:, 1]

    def vectors(self, lat, lon, alt=0.0):
        p = self.params(lat, lon, alt)
        d, i, bh = p[..., 0], p[..., 1], p[..., 2]
        return bh * np.cos(d), bh * np.sin(d), bh * np.tan(i)


# ---------------------------------------------------------------------------
# gradients and grids


def _element_arrays(source: FieldSource, lat, lon, alt, name: str) -> np.ndarray:
    key = _ALIASES.get(name, name)
    if key in ("d", "i", "b_h"):
        return source.params(lat, lon, alt)[..., ("d", "i", "b_h").index(key)]
    bx, by, bz = (np.asarray(a) for a in source.vectors(lat, lon, alt))
    if key == "b_f":
        return np.sqrt(bx * bx + by * by + bz * bz)
    if key in ("bx", "by", "bz"):
        return {"bx": bx, "by": by, "bz": bz}[key]
    raise KeyError(f"unknown element {name!r}")


def gradient_field(source: FieldSource, lat, lon, alt=0.0, params: Sequence[str] = ("d", "i", "b_h"),
                   step: float = GRADIENT_STEP_M, frame: LocalFrame | None = None) -> np.ndarray:
    """Central-difference gradients, shape ``lat.shape + (len(params), 2)``.

    ``frame`` fixes the meters-per-degree conversion; by default the local
    factors at each evaluation latitude are used.
    """
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    dlat = step / METERS_PER_DEG_LAT
    if frame is None:
        dlon = step / (METERS_PER_DEG_LAT * np.cos(np.radians(lat)))
    else:
        dlon = step / frame.m_per_deg_lon * np.ones_like(lat)
    if np.any(np.abs(lat) + dlat >= 90.0):
        raise PoleError("gradient stencil crosses a pole")
    lats = np.stack([lat, lat, lat + dlat, lat - dlat])
    lons = np.stack([lon + dlon, lon - dlon, lon, lon])
    out = []
    for name in params:
        v = _element_arrays(source, lats, lons, alt, name)
        if _ALIASES.get(name, name) == "d":
            # declination may jump by 2pi across +-pi
            gx = np.angle(np.exp(1j * (v[0] - v[1]))) / (2 * step)
            gy = np.angle(np.exp(1j * (v[2] - v[3]))) / (2 * step)
        else:
            gx = (v[0] - v[1]) / (2 * step)
            gy = (v[2] - v[3]) / (2 * step)
        out.append(np.stack([gx, gy], axis=-1))
    return np.stack(out, axis=-2)


def gradient(source: FieldSource, pos: GeoPosition, param: str, step: float = GRADIENT_STEP_M,
             frame: LocalFrame | None = None) -> GradientVector:
    g = gradient_field(source, pos.latitude, pos.longitude, pos.altitude, (param,), step, frame)
    gx, gy = g[0]
    if not (math.isfinite(gx) and math.isfinite(gy)):
        raise DegenerateFieldError(f"non-finite gradient at {pos}")
    return GradientVector(float(gx), float(gy))


@dataclass(frozen=True)
class GridSample:
    lats: np.ndarray
    lons: np.ndarray
    elements: dict[str, np.ndarray]  # each shaped (n_lat, n_lon)


def sample_grid(source: FieldSource, lat_range: tuple[float, float], lon_range: tuple[float, float],
                resolution: int | tuple[int, int],
                params: Iterable[str] = ("d", "i", "b_h", "b_f")) -> GridSample:
    """Element values on a regular lat/lon grid.

    Rows run from the northern edge southward, columns west to east
    (row-major as exported).
    """
    n_lat, n_lon = (resolution, resolution) if np.isscalar(resolution) else resolution
    if n_lat < 2 or n_lon < 2:
        raise ValueError("resolution must be >= 2")
    lat0, lat1 = sorted(lat_range)
    lon0, lon1 = lon_range
    if lat0 == lat1 or lon0 == lon1:
        raise ValueError("empty region")
    if lat0 <= -90.0 or lat1 >= 90.0:
        raise PoleError("region touches a pole")
    lats = np.linspace(lat1, lat0, n_lat)
    lons = np.linspace(lon0, lon1, n_lon)
    LAT, LON = np.meshgrid(lats, lons, indexing="ij")
    bx, by, bz = (np.asarray(a, dtype=float) for a in source.vectors(LAT, LON))
    bf, bh, d, i = elements_from_arrays(bx, by, bz)
    table = {"b_f": bf, "b_h": bh, "bx": bx, "by": by, "bz": bz, "d": d, "i": i}
    return GridSample(lats, lons, {_ALIASES.get(p, p): table[_ALIASES.get(p, p)] for p in params})


def grid_to_csv(grid: GridSample) -> str:
    need = ("d", "i", "b_h", "b_f")
    missing = [p for p in need if p not in grid.elements]
    if missing:
        raise ValueError(f"grid lacks elements {missing} required for CSV export")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GRID_HEADER)
    e = grid.elements
    for a, lat in enumerate(grid.lats):
        for b, lon in enumerate(grid.lons):
            w.writerow([f"{lat:.6f}", f"{lon:.6f}", f"{math.degrees(e['d'][a, b]):.6f}",
                        f"{math.degrees(e['i'][a, b]):.6f}", f"{e['b_h'][a, b]:.6f}",
                        f"{e['b_f'][a, b]:.6f}"])
    return buf.getvalue()
