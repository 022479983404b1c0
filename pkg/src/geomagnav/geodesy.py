"""Local equirectangular mapping between lat/lon and east/north meters."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

METERS_PER_DEG_LAT = 111320.0


@dataclass(frozen=True)
class LocalFrame:
    """Flat east/north frame anchored at ``(lat0, lon0)``.

    One degree of latitude is 111 320 m everywhere; one degree of
    longitude is ``111 320 * cos(lat0)`` m, fixed by the anchor.
    """

    lat0: float
    lon0: float

    @property
    def m_per_deg_lon(self) -> float:
        return METERS_PER_DEG_LAT * math.cos(math.radians(self.lat0))

    def to_xy(self, lat, lon):
        return ((np.asarray(lon) - self.lon0) * self.m_per_deg_lon,
                (np.asarray(lat) - self.lat0) * METERS_PER_DEG_LAT)

    def to_latlon(self, x, y):
        return (self.lat0 + np.asarray(y) / METERS_PER_DEG_LAT,
                self.lon0 + np.asarray(x) / self.m_per_deg_lon)


@dataclass(frozen=True)
class Region:
    """Lat/lon rectangle with a local frame at its center."""

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if not (self.lat_min < self.lat_max and self.lon_min < self.lon_max):
            raise ValueError(f"empty region {self}")
        if self.lat_min <= -90.0 or self.lat_max >= 90.0:
            raise ValueError("region must not include a pole")

    @classmethod
    def from_center(cls, lat: float, lon: float, width_m: float, height_m: float) -> "Region":
        half_lat = height_m / 2 / METERS_PER_DEG_LAT
        half_lon = width_m / 2 / (METERS_PER_DEG_LAT * math.cos(math.radians(lat)))
        return cls(lat - half_lat, lat + half_lat, lon - half_lon, lon + half_lon)

    @property
    def center(self) -> tuple[float, float]:
        return (self.lat_min + self.lat_max) / 2, (self.lon_min + self.lon_max) / 2

    @property
    def frame(self) -> LocalFrame:
        return LocalFrame(*self.center)

    def contains(self, lat: float, lon: float) -> bool:
        return self.lat_min <= lat <= self.lat_max and self.lon_min <= lon <= self.lon_max

    def xy_bounds(self) -> tuple[float, float, float, float]:
        f = self.frame
        x0, y0 = f.to_xy(self.lat_min, self.lon_min)
        x1, y1 = f.to_xy(self.lat_max, self.lon_max)
        return float(x0), float(x1), float(y0), float(y1)


# 10S..0N, 160E..170E
FULL_REGION = Region(-10.0, 0.0, 160.0, 170.0)


def desk_region(width_m: float = 150_000.0) -> Region:
    """Square desk-scale region centered inside the full-scale region."""
    return Region.from_center(-5.0, 165.0, width_m, width_m)
