"""Geographic helpers: coordinates to grid cells, Gaussian focus masks,
channel addressing and pressure-layer bands."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from mpbench import kernels
from mpbench.errors import OutOfBounds, UnknownLevel, UnknownVariable, ValidationError
from mpbench.grid import GridSpec

_EPS = 1e-9


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float
    name: str | None = None

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise OutOfBounds(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise OutOfBounds(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 360.0:
            raise OutOfBounds(f"longitude {self.lon} outside [-180, 360]")


class Layer(str, enum.Enum):
    NEAR_SURFACE = "NearSurface"
    TROPOSPHERE = "Troposphere"
    STRATOSPHERE = "Stratosphere"


def in_bounds(p: GeoPoint, spec: GridSpec) -> bool:
    return (
        spec.lat_min - _EPS <= p.lat <= spec.lat_max + _EPS
        and spec.lon_min - _EPS <= p.lon <= spec.lon_max + _EPS
    )


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def latlon_to_grid(p: GeoPoint, spec: GridSpec) -> tuple[int, int]:
    """Nearest grid cell ``(row, col)``; rows count southward from ``lat_max``."""
    if not in_bounds(p, spec):
        raise OutOfBounds(
            f"({p.lat}, {p.lon}) outside grid lat [{spec.lat_min}, {spec.lat_max}] "
            f"lon [{spec.lon_min}, {spec.lon_max}]"
        )
    u = _round_half_up((spec.lat_max - p.lat) / spec.resolution)
    v = _round_half_up((p.lon - spec.lon_min) / spec.resolution)
    return min(max(u, 0), spec.H - 1), min(max(v, 0), spec.W - 1)


def grid_to_latlon(u: int, v: int, spec: GridSpec) -> tuple[float, float]:
    return spec.lat_max - u * spec.resolution, spec.lon_min + v * spec.resolution


def gaussian_mask(
    points: Iterable[GeoPoint],
    spec: GridSpec,
    sigma_g: float = 2.0,
    *,
    strict: bool = False,
    clamp: bool = True,
) -> np.ndarray:
    """Sum of isotropic Gaussians (width ``sigma_g`` grid cells) centred on
    each in-bounds point, clamped to 1.

    Out-of-bounds points are skipped unless ``strict`` is set. With
    ``clamp=False`` the raw sum is returned.
    """
    if not sigma_g > 0:
        raise ValidationError(f"sigma_g must be positive, got {sigma_g}")
    rows, cols = [], []
    for p in points:
        try:
            u, v = latlon_to_grid(p, spec)
        except OutOfBounds:
            if strict:
                raise
            continue
        rows.append(u)
        cols.append(v)
    m = kernels.gaussian_mask_sum(
        np.asarray(rows, dtype=np.float64),
        np.asarray(cols, dtype=np.float64),
        float(sigma_g),
        spec.H,
        spec.W,
    )
    return np.minimum(m, 1.0) if clamp else m


def channel_index(var: str, level: float, spec: GridSpec) -> int:
    try:
        vi = spec.variables.index(var)
    except ValueError:
        raise UnknownVariable(f"variable {var!r} not in {spec.variables}") from None
    try:
        li = spec.levels.index(level)
    except ValueError:
        raise UnknownLevel(f"level {level!r} hPa not in spec levels") from None
    return vi * len(spec.levels) + li


def channel_of(index: int, spec: GridSpec) -> tuple[str, float]:
    """Inverse of :func:`channel_index`."""
    if not 0 <= index < spec.n_channels:
        raise ValidationError(f"channel {index} outside [0, {spec.n_channels})")
    vi, li = divmod(index, len(spec.levels))
    return spec.variables[vi], spec.levels[li]


def layer_of_level(level: float) -> Layer:
    # 800 and 200 hPa edges belong to the lower (higher-pressure) band
    if not level > 0:
        raise ValidationError(f"pressure level must be positive, got {level}")
    if 800 <= level <= 1000:
        return Layer.NEAR_SURFACE
    if 200 <= level < 800:
        return Layer.TROPOSPHERE
    if level < 200:
        return Layer.STRATOSPHERE
    # above 1000 hPa only occurs below sea level; treat as surface
    return Layer.NEAR_SURFACE


def band_channels(var: str, band: Layer | str, spec: GridSpec) -> list[int]:
    """Channel indices of ``var`` whose level falls in ``band``."""
    band = Layer(band)
    return [
        channel_index(var, lev, spec) for lev in spec.levels if layer_of_level(lev) is band
    ]
