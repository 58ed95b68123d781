"""Seeded synthetic ERA5-shaped fields and warning fixtures.

Base fields are a sum of eight low-frequency sinusoidal modes per channel,
so they are smooth and cheap to generate. Localized events can be added on
top as Gaussian bumps that switch on at a given hour in the channels of one
variable within one pressure band.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Sequence

import numpy as np

from mpbench.errors import UnknownVariable, ValidationError
from mpbench.geo import GeoPoint, Layer, band_channels, latlon_to_grid
from mpbench.grid import Grid4D, GridSpec
from mpbench.records import ALLOWED_SEVERITIES, Event, WarningRecord

N_MODES = 8


@dataclass(frozen=True)
class EventProfile:
    center: GeoPoint
    onset_hour: int
    amplitude: float
    spatial_sigma: float
    variable: str
    band: Layer = Layer.NEAR_SURFACE

    def __post_init__(self):
        object.__setattr__(self, "band", Layer(self.band))
        if not np.isfinite(self.amplitude):
            raise ValidationError("amplitude must be finite")
        if not self.spatial_sigma > 0:
            raise ValidationError("spatial_sigma must be positive")
        if self.onset_hour < 0:
            raise ValidationError("onset_hour must be >= 0")

    def to_dict(self) -> dict:
        return {
            "amplitude": self.amplitude,
            "band": self.band.value,
            "lat": self.center.lat,
            "lon": self.center.lon,
            "name": self.center.name,
            "onset_hour": self.onset_hour,
            "spatial_sigma": self.spatial_sigma,
            "variable": self.variable,
        }

    @classmethod
    def from_dict(cls, d) -> "EventProfile":
        try:
            return cls(
                center=GeoPoint(float(d["lat"]), float(d["lon"]), d.get("name")),
                onset_hour=int(d["onset_hour"]),
                amplitude=float(d["amplitude"]),
                spatial_sigma=float(d["spatial_sigma"]),
                variable=str(d["variable"]),
                band=d.get("band", Layer.NEAR_SURFACE.value),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad event profile: {exc}") from exc


def load_profiles(text: str) -> list[EventProfile]:
    doc = json.loads(text)
    if isinstance(doc, dict):
        doc = doc.get("profiles", [])
    return [EventProfile.from_dict(d) for d in doc]


def base_field(spec: GridSpec, T: int, seed: int, base_scale: float = 1.0) -> np.ndarray:
    """Smooth noise with ``max |value| <= base_scale``; float64 ``(T, C, H, W)``."""
    if T < 1:
        raise ValidationError("T must be >= 1")
    rng = np.random.default_rng(seed)
    C = spec.n_channels
    amp = rng.uniform(0.0, 1.0, (C, N_MODES)) * (base_scale / N_MODES)
    kh = rng.uniform(0.0, 1.5, (C, N_MODES))  # cycles per domain
    kw = rng.uniform(0.0, 1.5, (C, N_MODES))
    kt = rng.uniform(0.0, 0.25, (C, N_MODES))  # cycles per 12 hours
    phase = rng.uniform(0.0, 2 * np.pi, (C, N_MODES))
    t = np.arange(T)[:, None, None] / 12.0
    h = np.arange(spec.H)[None, :, None] / spec.H
    w = np.arange(spec.W)[None, None, :] / spec.W
    out = np.zeros((T, C, spec.H, spec.W))
    for c in range(C):
        for k in range(N_MODES):
            arg = 2 * np.pi * (kh[c, k] * h + kw[c, k] * w + kt[c, k] * t) + phase[c, k]
            out[:, c] += amp[c, k] * np.sin(arg)
    return out


def anomaly_field(spec: GridSpec, T: int, profile: EventProfile) -> np.ndarray:
    """The bump a single profile adds: zero before ``onset_hour``, full after."""
    if profile.variable not in spec.variables:
        raise UnknownVariable(f"profile variable {profile.variable!r} not in {spec.variables}")
    u0, v0 = latlon_to_grid(profile.center, spec)
    hh, ww = np.meshgrid(np.arange(spec.H), np.arange(spec.W), indexing="ij")
    bump = profile.amplitude * np.exp(
        -((hh - u0) ** 2 + (ww - v0) ** 2) / (2.0 * profile.spatial_sigma ** 2)
    )
    ramp = (np.arange(T) >= profile.onset_hour).astype(np.float64)
    out = np.zeros((T, spec.n_channels, spec.H, spec.W))
    for c in band_channels(profile.variable, profile.band, spec):
        out[:, c] = ramp[:, None, None] * bump
    return out


def synth_fields(spec: GridSpec, T: int, seed: int,
                 profiles: Sequence[EventProfile] = (), base_scale: float = 1.0) -> Grid4D:
    """Base noise plus every profile's anomaly; identical arguments give identical bits."""
    field = base_field(spec, T, seed, base_scale)
    for p in profiles:
        if p.onset_hour >= T:
            raise ValidationError(f"onset hour {p.onset_hour} outside a {T}-hour window")
        field += anomaly_field(spec, T, p)
    return Grid4D(field, spec)


# -- warning fixtures -----------------------------------------------------------

DEFAULT_REGIONS = (
    GeoPoint(39.90, 116.40, "Beijing"),
    GeoPoint(34.00, 102.07, "Maqu County"),
    GeoPoint(26.08, 119.30, "Fuzhou City"),
    GeoPoint(38.04, 114.51, "Hebei"),
    GeoPoint(37.87, 112.55, "Shanxi"),
    GeoPoint(41.80, 123.50, "Liaoning"),
    GeoPoint(43.90, 125.33, "Jilin"),
    GeoPoint(45.76, 126.64, "Heilongjiang"),
)

# relative frequencies of the 2023 warning counts
_EVENT_WEIGHTS = {
    Event.GALE: 92939, Event.RAIN_STORM: 47470, Event.HEAT_WAVE: 20787,
    Event.COLD_WAVE: 11306, Event.FROST: 7171, Event.HAIL: 5794,
    Event.SNOW_STORM: 3204, Event.NORMAL: 24810,
}


def synth_warnings(n: int, seed: int, regions: Sequence[GeoPoint] = DEFAULT_REGIONS,
                   year: int = 2023, days: int = 3) -> list[WarningRecord]:
    """``n`` plausible warnings over the first ``days`` days of ``year``.

    Events follow the published class frequencies; severities are uniform
    over those allowed for the event. Output is sorted by issue time.
    """
    rng = np.random.default_rng(seed)
    events = list(_EVENT_WEIGHTS)
    weights = np.array([_EVENT_WEIGHTS[e] for e in events], dtype=np.float64)
    weights /= weights.sum()
    start = datetime(year, 1, 1, tzinfo=timezone.utc)
    seen = set()
    out = []
    attempts = 0
    while len(out) < n:
        attempts += 1
        if attempts > 100 * (n + 1):
            raise ValidationError("could not draw enough distinct warnings; widen days/regions")
        event = events[rng.choice(len(events), p=weights)]
        allowed = ALLOWED_SEVERITIES[event]
        sev = allowed[rng.integers(len(allowed))] if allowed else None
        region = regions[rng.integers(len(regions))]
        when = start + timedelta(hours=int(rng.integers(days * 24)))
        rec = WarningRecord(when, region.name, region, event, sev)
        if (region.name, when) in seen:
            continue
        seen.add((region.name, when))
        out.append(rec)
    out.sort(key=lambda r: (r.issue_time, r.region))
    return out
