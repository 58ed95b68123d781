"""Warning records: validation, cleaning, alignment windows, negative
sampling and corpus statistics."""
from __future__ import annotations

import calendar
import enum
import json
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Iterable, Mapping, Sequence

from mpbench.errors import InvalidRecord, OutOfBounds, PoolExhausted, ValidationError
from mpbench.geo import GeoPoint, in_bounds
from mpbench.grid import GridSpec

WINDOW_HOURS = 12


class Event(str, enum.Enum):
    RAIN_STORM = "RainStorm"
    SNOW_STORM = "SnowStorm"
    GALE = "Gale"
    COLD_WAVE = "ColdWave"
    HEAT_WAVE = "HeatWave"
    FROST = "Frost"
    HAIL = "Hail"
    NORMAL = "Normal"

    @property
    def label(self) -> str:
        return _LABELS[self]


class Severity(str, enum.Enum):
    BLUE = "Blue"
    YELLOW = "Yellow"
    ORANGE = "Orange"
    RED = "Red"


_LABELS = {
    Event.RAIN_STORM: "Rain Storm",
    Event.SNOW_STORM: "Snow Storm",
    Event.GALE: "Gale",
    Event.COLD_WAVE: "Cold Wave",
    Event.HEAT_WAVE: "Heat Wave",
    Event.FROST: "Frost",
    Event.HAIL: "Hail",
    Event.NORMAL: "Normal",
}

SEVERE_EVENTS = tuple(e for e in Event if e is not Event.NORMAL)

_ALL = (Severity.BLUE, Severity.YELLOW, Severity.ORANGE, Severity.RED)
ALLOWED_SEVERITIES: dict[Event, tuple[Severity, ...]] = {
    Event.RAIN_STORM: _ALL,
    Event.SNOW_STORM: _ALL,
    Event.GALE: _ALL,
    Event.COLD_WAVE: _ALL,
    Event.HEAT_WAVE: (Severity.YELLOW, Severity.ORANGE, Severity.RED),
    Event.FROST: (Severity.BLUE, Severity.YELLOW, Severity.ORANGE),
    Event.HAIL: (Severity.ORANGE, Severity.RED),
    Event.NORMAL: (),
}


def _squash(text: str) -> str:
    return "".join(ch for ch in text.casefold() if ch.isalnum())


_EVENT_ALIASES = {_squash(e.value): e for e in Event}
_EVENT_ALIASES.update({_squash(e.label): e for e in Event})
for _alias in ("normalweather", "normalconditions", "nosevereweather"):
    _EVENT_ALIASES[_alias] = Event.NORMAL


def parse_event(text) -> Event:
    if isinstance(text, Event):
        return text
    if not isinstance(text, str):
        raise ValidationError(f"event must be a string, got {text!r}")
    try:
        return _EVENT_ALIASES[_squash(text)]
    except KeyError:
        raise ValidationError(f"unknown event {text!r}") from None


def parse_severity(text) -> Severity | None:
    if text is None or isinstance(text, Severity):
        return text
    if not isinstance(text, str):
        raise ValidationError(f"severity must be a string, got {text!r}")
    key = _squash(text)
    if key.endswith("level"):
        key = key[: -len("level")]
    if key in ("", "none", "null"):
        return None
    for s in Severity:
        if key == s.value.casefold():
            return s
    raise ValidationError(f"unknown severity {text!r}")


def severity_allowed(event: Event, severity: Severity | None) -> bool:
    if event is Event.NORMAL:
        return severity is None
    return severity in ALLOWED_SEVERITIES[event]


def parse_time(value) -> datetime:
    """Parse an ISO-8601 timestamp to an aware UTC datetime truncated to the hour.

    Naive timestamps are taken as UTC.
    """
    if isinstance(value, datetime):
        dt = value
    elif isinstance(value, str):
        text = value.strip()
        if text.endswith(("Z", "z")):
            text = text[:-1] + "+00:00"
        try:
            dt = datetime.fromisoformat(text)
        except ValueError as exc:
            raise ValidationError(f"bad timestamp {value!r}") from exc
    else:
        raise ValidationError(f"bad timestamp {value!r}")
    dt = dt.replace(tzinfo=timezone.utc) if dt.tzinfo is None else dt.astimezone(timezone.utc)
    return dt.replace(minute=0, second=0, microsecond=0)


def format_time(dt: datetime) -> str:
    return dt.strftime("%Y-%m-%dT%H:00:00Z")


@dataclass(frozen=True)
class WarningRecord:
    issue_time: datetime
    region: str
    location: GeoPoint
    event: Event
    severity: Severity | None = None

    def __post_init__(self):
        object.__setattr__(self, "issue_time", parse_time(self.issue_time))
        object.__setattr__(self, "event", parse_event(self.event))
        object.__setattr__(self, "severity", parse_severity(self.severity))
        if not isinstance(self.region, str) or not self.region.strip():
            raise InvalidRecord("region name must be a non-empty string")
        if not severity_allowed(self.event, self.severity):
            sev = self.severity.value if self.severity else None
            raise InvalidRecord(f"severity {sev} not allowed for {self.event.value}")

    @property
    def dedup_key(self):
        return (self.region, self.event, self.severity, self.issue_time)

    def to_dict(self) -> dict:
        return {
            "event": self.event.value,
            "issue_time": format_time(self.issue_time),
            "lat": self.location.lat,
            "lon": self.location.lon,
            "region": self.region,
            "severity": self.severity.value if self.severity else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_dict(cls, d: Mapping) -> "WarningRecord":
        return cls(
            issue_time=d["issue_time"],
            region=d["region"],
            location=GeoPoint(float(d["lat"]), float(d["lon"]), d["region"]),
            event=d["event"],
            severity=d.get("severity"),
        )


# -- ingestion ----------------------------------------------------------------

class RejectReason(str, enum.Enum):
    MALFORMED_JSON = "MalformedJson"
    UNKNOWN_EVENT = "UnknownEvent"
    BAD_SEVERITY = "BadSeverityForEvent"
    BAD_TIMESTAMP = "BadTimestamp"
    OUT_OF_BOUNDS = "OutOfBounds"
    DUPLICATE = "Duplicate"


@dataclass(frozen=True)
class Reject:
    line: int
    reason: RejectReason
    detail: str
    raw: str

    def to_dict(self) -> dict:
        return {"detail": self.detail, "line": self.line, "raw": self.raw,
                "reason": self.reason.value}


@dataclass
class ParseResult:
    records: list[WarningRecord] = field(default_factory=list)
    rejects: list[Reject] = field(default_factory=list)

    def __iter__(self):
        return iter((self.records, self.rejects))


_REQUIRED = ("issue_time", "region", "lat", "lon", "event")


def _parse_line(raw: str, spec: GridSpec | None) -> WarningRecord:
    """Raises ``(RejectReason, detail)`` wrapped in a _Rejected."""
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise _Rejected(RejectReason.MALFORMED_JSON, str(exc)) from None
    if not isinstance(obj, dict):
        raise _Rejected(RejectReason.MALFORMED_JSON, "line is not a JSON object")
    missing = [k for k in _REQUIRED if k not in obj]
    if missing:
        raise _Rejected(RejectReason.MALFORMED_JSON, f"missing fields {missing}")
    region = obj["region"]
    if not isinstance(region, str) or not region.strip():
        raise _Rejected(RejectReason.MALFORMED_JSON, "region must be a non-empty string")
    try:
        event = parse_event(obj["event"])
    except ValidationError as exc:
        raise _Rejected(RejectReason.UNKNOWN_EVENT, str(exc)) from None
    try:
        when = parse_time(obj["issue_time"])
    except ValidationError as exc:
        raise _Rejected(RejectReason.BAD_TIMESTAMP, str(exc)) from None
    lat, lon = obj["lat"], obj["lon"]
    if isinstance(lat, bool) or isinstance(lon, bool) or not all(
        isinstance(c, (int, float)) for c in (lat, lon)
    ):
        raise _Rejected(RejectReason.MALFORMED_JSON, "lat/lon must be numbers")
    try:
        point = GeoPoint(float(lat), float(lon), region)
    except OutOfBounds as exc:
        raise _Rejected(RejectReason.OUT_OF_BOUNDS, str(exc)) from None
    if spec is not None and not in_bounds(point, spec):
        raise _Rejected(RejectReason.OUT_OF_BOUNDS, f"({lat}, {lon}) outside the grid")
    try:
        severity = parse_severity(obj.get("severity"))
    except ValidationError as exc:
        raise _Rejected(RejectReason.BAD_SEVERITY, str(exc)) from None
    if not severity_allowed(event, severity):
        sev = severity.value if severity else None
        raise _Rejected(RejectReason.BAD_SEVERITY, f"{event.value} cannot be {sev}")
    return WarningRecord(when, region, point, event, severity)


class _Rejected(Exception):
    def __init__(self, reason: RejectReason, detail: str):
        super().__init__(detail)
        self.reason = reason
        self.detail = detail


def parse_warnings(lines: Iterable[str], spec: GridSpec | None = None) -> ParseResult:
    """Validate a JSONL stream of warnings.

    Every input line ends up either as a record or as a reject (with its
    1-based line number), never both. Repeats of an accepted
    (region, event, severity, hour) are rejected as duplicates. When ``spec``
    is given, points outside its grid are rejected too.
    """
    result = ParseResult()
    seen = set()
    for n, line in enumerate(lines, start=1):
        raw = line.rstrip("\r\n")
        try:
            rec = _parse_line(raw, spec)
        except _Rejected as rej:
            result.rejects.append(Reject(n, rej.reason, rej.detail, raw))
            continue
        if rec.dedup_key in seen:
            result.rejects.append(Reject(n, RejectReason.DUPLICATE, "repeat of an earlier record", raw))
            continue
        seen.add(rec.dedup_key)
        result.records.append(rec)
    return result


def read_records(lines: Iterable[str]) -> list[WarningRecord]:
    """Load already-clean records; raises :class:`InvalidRecord` on bad input."""
    out = []
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            out.append(WarningRecord.from_dict(json.loads(line)))
        except (ValueError, KeyError, TypeError) as exc:
            raise InvalidRecord(f"line {n}: {exc}") from exc
    return out


# -- alignment ----------------------------------------------------------------

@dataclass(frozen=True)
class TimeWindow:
    start: datetime
    hours: tuple[datetime, ...]

    def to_dict(self) -> dict:
        return {"hours": [format_time(h) for h in self.hours], "start": format_time(self.start)}


def align_window(rec: WarningRecord) -> TimeWindow:
    """The hours ``[t, t + 11]`` following the warning issued at ``t``."""
    start = rec.issue_time
    return TimeWindow(start, tuple(start + timedelta(hours=k) for k in range(WINDOW_HOURS)))


# -- negative sampling --------------------------------------------------------

def _parse_month(m: str) -> tuple[int, int]:
    try:
        year, month = (int(part) for part in m.split("-"))
    except ValueError:
        raise ValidationError(f"month must look like YYYY-MM, got {m!r}") from None
    if not 1 <= month <= 12:
        raise ValidationError(f"month out of range in {m!r}")
    return year, month


def sample_normals(
    regions: Sequence[GeoPoint],
    months: Sequence[str],
    n: int,
    seed: int,
    existing: Iterable[WarningRecord] = (),
) -> list[WarningRecord]:
    """Draw ``n`` Normal records spread evenly over regions and months.

    Regions and months are dealt round-robin from seeded shuffles, so their
    counts differ by at most one. The hour inside the month is random; an
    hour already used by that region (by ``existing`` or an earlier draw) is
    skipped by probing forward through the month.
    """
    if n < 0:
        raise ValidationError("n must be >= 0")
    if n == 0:
        return []
    if not regions or not months:
        raise ValidationError("region and month pools must be non-empty")
    for r in regions:
        if not r.name:
            raise InvalidRecord("every pooled region needs a name")
    rng = random.Random(seed)
    region_order = list(regions)
    month_order = [_parse_month(m) for m in months]
    rng.shuffle(region_order)
    rng.shuffle(month_order)
    occupied = {(r.region, r.issue_time) for r in existing}
    out = []
    for i in range(n):
        region = region_order[i % len(region_order)]
        year, month = month_order[i % len(month_order)]
        first = datetime(year, month, 1, tzinfo=timezone.utc)
        span = calendar.monthrange(year, month)[1] * 24
        start = rng.randrange(span)
        for k in range(span):
            when = first + timedelta(hours=(start + k) % span)
            if (region.name, when) not in occupied:
                break
        else:
            raise PoolExhausted(f"no free hour left for {region.name} in {year}-{month:02d}")
        occupied.add((region.name, when))
        out.append(WarningRecord(when, region.name, region, Event.NORMAL, None))
    return out


# -- statistics -----------------------------------------------------------------

@dataclass
class CorpusStats:
    total: int
    counts: dict[str, int]
    ratios: dict[str, float]
    per_month: dict[str, int]
    per_year: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "counts": dict(self.counts),
            "per_month": dict(sorted(self.per_month.items())),
            "per_year": dict(sorted(self.per_year.items())),
            "ratios": dict(self.ratios),
            "total": self.total,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _ratios(counts: Mapping[str, int], total: int) -> dict[str, float]:
    if total == 0:
        return {k: 0.0 for k in counts}
    return {k: round(100.0 * v / total, 2) for k, v in counts.items()}


def stats_from_counts(counts: Mapping[str, int]) -> CorpusStats:
    """Statistics from bare per-event counts (no timing information)."""
    normalized = {}
    for key, value in counts.items():
        if isinstance(value, bool) or not isinstance(value, int) or value < 0:
            raise ValidationError(f"count for {key!r} must be a non-negative int")
        ev = parse_event(key).value
        normalized[ev] = normalized.get(ev, 0) + value
    ordered = {e.value: normalized.get(e.value, 0) for e in Event}
    total = sum(ordered.values())
    return CorpusStats(total, ordered, _ratios(ordered, total), {}, {})


def corpus_stats(records: Iterable[WarningRecord]) -> CorpusStats:
    """Per-event counts and percentage ratios (2 decimals), monthly and yearly histograms."""
    records = list(records)
    by_event = Counter(r.event.value for r in records)
    counts = {e.value: by_event.get(e.value, 0) for e in Event}
    per_month = Counter(r.issue_time.strftime("%Y-%m") for r in records)
    per_year = Counter(r.issue_time.strftime("%Y") for r in records)
    total = len(records)
    return CorpusStats(total, counts, _ratios(counts, total), dict(per_month), dict(per_year))


def ratios_sum(stats: CorpusStats) -> float:
    return math.fsum(stats.ratios.values())
