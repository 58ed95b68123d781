"""Question/answer generation for the four task types and parsing of free
text model answers back into structured form.

Task types:

* ``MC``  multiple choice over event type and severity (option codes A1..H1)
* ``TF``  does the region have severe weather (Yes/No)
* ``RSW`` which event type hits the region
* ``NSW`` list every warning issued nationwide on one day
"""
from __future__ import annotations

import enum
import hashlib
import json
import re
import unicodedata
from collections import OrderedDict
from dataclasses import dataclass, field
from datetime import date
from typing import Iterable, Sequence

from mpbench.errors import InvalidRecord, Unparseable, ValidationError
from mpbench.geo import GeoPoint
from mpbench.records import (
    ALLOWED_SEVERITIES,
    Event,
    SEVERE_EVENTS,
    Severity,
    WarningRecord,
    align_window,
    format_time,
    parse_event,
    parse_severity,
    severity_allowed,
)

NO_SEVERE_WEATHER = "no severe weather"


class QAType(str, enum.Enum):
    MC = "MC"
    TF = "TF"
    RSW = "RSW"
    NSW = "NSW"


# -- option codes -------------------------------------------------------------

_LETTERS = dict(zip(list(SEVERE_EVENTS) + [Event.NORMAL], "ABCDEFGH"))


def _build_codes() -> dict[str, tuple[Event, Severity | None]]:
    codes = {}
    for event, letter in _LETTERS.items():
        if event is Event.NORMAL:
            codes["H1"] = (Event.NORMAL, None)
            continue
        for i, sev in enumerate(ALLOWED_SEVERITIES[event], start=1):
            codes[f"{letter}{i}"] = (event, sev)
    return codes


MC_CODES: dict[str, tuple[Event, Severity | None]] = _build_codes()
_CODE_OF = {v: k for k, v in MC_CODES.items()}


def mc_code(event: Event, severity: Severity | None) -> str:
    try:
        return _CODE_OF[(event, severity)]
    except KeyError:
        sev = severity.value if severity else None
        raise InvalidRecord(f"no option code for {event.value}/{sev}") from None


def mc_letter(event: Event) -> str:
    return _LETTERS[event]


# -- prompt templates ---------------------------------------------------------

def _deg(value: float, pos: str, neg: str) -> str:
    return f"{abs(value):.2f}°{pos if value >= 0 else neg}"


def _coords(p: GeoPoint, spaced: bool) -> str:
    lat, lon = _deg(p.lat, "N", "S"), _deg(p.lon, "E", "W")
    return f"[{lat}, {lon}]" if spaced else f"[{lat},{lon}]"


def _mc_options() -> str:
    blocks = []
    for event, letter in _LETTERS.items():
        if event is Event.NORMAL:
            blocks.append("[Normal Conditions]\nH1: No warnings issued")
            continue
        opts = "    ".join(
            f"{letter}{i}: {sev.value}-level"
            for i, sev in enumerate(ALLOWED_SEVERITIES[event], start=1)
        )
        blocks.append(f"[{event.label}]\n{opts}")
    return "\n\n".join(blocks)


MC_TEMPLATE = (
    "As a professional meteorologist, please identify the severe weather events that "
    "occurred in {region} (Coordinates:{coords}) based on the input data. Please select "
    "only one applicable option from the following options:\n\n" + _mc_options()
)

TF_TEMPLATE = (
    "As a professional meteorologist, please analyze the provided ERA5 dataset and "
    "determine whether {region} (Coordinates: {coords}) is currently experiencing severe "
    'weather. Respond with either "Yes" or "No".'
)

RSW_TEMPLATE = (
    "As a professional meteorologist, please analyze the provided ERA5 data and assess "
    "the likelihood of severe weather events occurring in {region} (Coordinates: {coords}).\n"
    "Please identify which types of severe weather events may occur, selecting from the "
    "following categories:\n\n"
    + ", ".join(e.label for e in SEVERE_EVENTS) + "."
)

NSW_TEMPLATE = (
    "As a professional meteorologist, you are tasked with analyzing the provided dataset "
    "to identify and characterize any severe weather events that have occurred across "
    "China's administrative divisions.\n\n"
    "Please focus on the following regions with their respective coordinates:\n\n"
    "{regions}\n\n"
    "Determine what kind of severe weather occurred in each region. Output only the area "
    "where severe weather occurs For each detected event, use the following structured "
    "format: [Region Name] issues a [Event Type] [Severity Level].\n\n"
    "Definitions:\n\n"
    "1. Region Name (Administrative Divisions)\n\n"
    "2. Event Type (" + "/".join(e.label for e in SEVERE_EVENTS) + ")\n\n"
    "3. Severity Level (" + "/".join(s.value for s in Severity) + ")"
)


# -- data types -----------------------------------------------------------------

@dataclass(frozen=True)
class NswEntry:
    region: str
    event: Event
    severity: Severity

    def __post_init__(self):
        object.__setattr__(self, "event", parse_event(self.event))
        object.__setattr__(self, "severity", parse_severity(self.severity))
        if self.event is Event.NORMAL or not severity_allowed(self.event, self.severity):
            sev = self.severity.value if self.severity else None
            raise InvalidRecord(f"{self.event.value} cannot be {sev}")

    def render(self) -> str:
        return f"{self.region} issues a {self.event.label} {self.severity.value}"

    def to_dict(self) -> dict:
        return {"event": self.event.value, "region": self.region,
                "severity": self.severity.value}

    @classmethod
    def from_dict(cls, d) -> "NswEntry":
        return cls(d["region"], d["event"], d["severity"])


def render_nsw(entries: Iterable[NswEntry]) -> str:
    return ", ".join(e.render() for e in entries)


@dataclass
class QAPair:
    id: str
    qa_type: QAType
    prompt: str
    gold: object
    meta: dict = field(default_factory=dict)

    def gold_json(self):
        if self.qa_type is QAType.NSW:
            return [e.to_dict() for e in self.gold]
        return self.gold

    def to_dict(self) -> dict:
        return {"gold": self.gold_json(), "id": self.id, "meta": self.meta,
                "prompt": self.prompt, "type": self.qa_type.value}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_dict(cls, d) -> "QAPair":
        qa_type = QAType(d["type"])
        gold = d["gold"]
        if qa_type is QAType.NSW:
            gold = [NswEntry.from_dict(e) for e in gold]
        return cls(d["id"], qa_type, d["prompt"], gold, dict(d.get("meta", {})))

    def validate(self) -> None:
        """Raise :class:`InvalidRecord` unless ``gold`` fits the task type."""
        ok = {
            QAType.MC: lambda g: g in MC_CODES,
            QAType.TF: lambda g: g in ("Yes", "No"),
            QAType.RSW: lambda g: g in RSW_LABELS,
            QAType.NSW: lambda g: isinstance(g, list) and all(isinstance(e, NswEntry) for e in g),
        }[self.qa_type](self.gold)
        if not ok:
            raise InvalidRecord(f"{self.id}: gold {self.gold!r} is not a valid {self.qa_type.value} answer")


RSW_LABELS = tuple(e.label for e in SEVERE_EVENTS) + (NO_SEVERE_WEATHER,)


# -- generators ---------------------------------------------------------------

def _auto_id(prefix: str, payload: str) -> str:
    return f"{prefix}-{hashlib.sha1(payload.encode('utf-8')).hexdigest()[:12]}"


def _record_meta(rec: WarningRecord) -> dict:
    window = align_window(rec)
    return {
        "event": rec.event.value,
        "issue_time": format_time(rec.issue_time),
        "lat": rec.location.lat,
        "lon": rec.location.lon,
        "region": rec.region,
        "severity": rec.severity.value if rec.severity else None,
        "window_end": format_time(window.hours[-1]),
        "window_start": format_time(window.start),
    }


def _check(rec) -> WarningRecord:
    if not isinstance(rec, WarningRecord):
        raise InvalidRecord(f"expected a WarningRecord, got {type(rec).__name__}")
    return rec


def gen_mc(rec: WarningRecord, qid: str | None = None) -> QAPair:
    rec = _check(rec)
    prompt = MC_TEMPLATE.format(region=rec.region, coords=_coords(rec.location, spaced=False))
    return QAPair(qid or _auto_id("mc", rec.to_json()), QAType.MC, prompt,
                  mc_code(rec.event, rec.severity), _record_meta(rec))


def gen_tf(rec: WarningRecord, qid: str | None = None) -> QAPair:
    rec = _check(rec)
    prompt = TF_TEMPLATE.format(region=rec.region, coords=_coords(rec.location, spaced=True))
    gold = "No" if rec.event is Event.NORMAL else "Yes"
    return QAPair(qid or _auto_id("tf", rec.to_json()), QAType.TF, prompt, gold, _record_meta(rec))


def gen_rsw(rec: WarningRecord, qid: str | None = None) -> QAPair:
    rec = _check(rec)
    prompt = RSW_TEMPLATE.format(region=rec.region, coords=_coords(rec.location, spaced=True))
    gold = NO_SEVERE_WEATHER if rec.event is Event.NORMAL else rec.event.label
    return QAPair(qid or _auto_id("rsw", rec.to_json()), QAType.RSW, prompt, gold, _record_meta(rec))


def gen_nsw(day: date, records: Sequence[WarningRecord],
            region_pool: Sequence[GeoPoint] | None = None, qid: str | None = None) -> QAPair:
    """National question for one UTC day.

    The prompt lists ``region_pool`` when given, otherwise every region that
    appears in ``records`` (first-appearance order). Gold holds one entry per
    non-Normal record, in input order.
    """
    records = [_check(r) for r in records]
    for r in records:
        if r.issue_time.date() != day:
            raise ValidationError(f"record issued {r.issue_time.date()} does not belong to {day}")
    if region_pool is None:
        seen = OrderedDict()
        for r in records:
            seen.setdefault(r.region, r.location)
        listed = [(name, p) for name, p in seen.items()]
    else:
        listed = [(p.name, p) for p in region_pool]
    regions = ", ".join(f"{name}(Coordinates:{_coords(p, spaced=False)})" for name, p in listed)
    gold = [NswEntry(r.region, r.event, r.severity) for r in records if r.event is not Event.NORMAL]
    meta = {"date": day.isoformat(), "n_records": len(records),
            "regions": [name for name, _ in listed]}
    return QAPair(qid or f"nsw-{day.isoformat()}", QAType.NSW,
                  NSW_TEMPLATE.format(regions=regions), gold, meta)


def group_by_day(records: Iterable[WarningRecord]) -> "OrderedDict[date, list[WarningRecord]]":
    days: dict[date, list[WarningRecord]] = {}
    for r in records:
        days.setdefault(r.issue_time.date(), []).append(r)
    return OrderedDict(sorted(days.items()))


def generate_qa(records: Sequence[WarningRecord], types: Iterable[str] = ("MC", "TF", "RSW", "NSW"),
                region_pool: Sequence[GeoPoint] | None = None) -> list[QAPair]:
    """Every requested task type for every record (NSW: every day), with
    sequential ids such as ``mc-000003``."""
    wanted = [QAType(t.upper()) for t in types]
    out: list[QAPair] = []
    gens = {QAType.MC: gen_mc, QAType.TF: gen_tf, QAType.RSW: gen_rsw}
    for qa_type in (QAType.MC, QAType.TF, QAType.RSW):
        if qa_type in wanted:
            prefix = qa_type.value.lower()
            out += [gens[qa_type](r, f"{prefix}-{i:06d}") for i, r in enumerate(records)]
    if QAType.NSW in wanted:
        out += [gen_nsw(day, recs, region_pool) for day, recs in group_by_day(records).items()]
    return out


# -- answer parsing -----------------------------------------------------------

_MC_CODE_RE = re.compile(r"\b([A-H])\.?([0-9])\b", re.IGNORECASE)
_MC_LETTER_RE = re.compile(r"\b([A-H])\b")


def parse_mc_answer(text: str) -> str:
    """Extract an option code such as ``A3`` from free text.

    A letter+digit code anywhere wins over a bare capital letter. A bare
    ``H`` means ``H1``; other bare letters come back without a digit.
    """
    if not isinstance(text, str):
        raise Unparseable(f"not text: {text!r}")
    m = _MC_CODE_RE.search(text)
    if m:
        return m.group(1).upper() + m.group(2)
    m = _MC_LETTER_RE.search(text)
    if m:
        letter = m.group(1)
        return "H1" if letter == "H" else letter
    raise Unparseable(f"no option code in {text[:60]!r}")


@dataclass(frozen=True)
class Malformed:
    span: str
    reason: str


@dataclass
class NswParse:
    entries: list[NswEntry]
    malformed: list[Malformed]

    def __iter__(self):
        return iter((self.entries, self.malformed))


_LEVEL = r"(?P<{name}>blue|yellow|orange|red)(?:[\s-]*level)?"
_SPLIT_RE = re.compile(r"[,;\n]|\.(?=\s|$)")
_ISSUES_RE = re.compile(r"^\s*(?:and\s+)?(?P<region>.+?)\s+issues\s+(?:an?\s+)?(?P<rest>.+?)\s*$",
                        re.IGNORECASE)
_EVENT_LEVEL_RE = re.compile(
    r"^(?P<event>.+?)\s+" + _LEVEL.format(name="level") + r"(?:\s+warnings?)?$", re.IGNORECASE
)
_LEVEL_EVENT_RE = re.compile(
    r"^" + _LEVEL.format(name="level") + r"\s+(?P<event>.+?)(?:\s+warnings?)?$", re.IGNORECASE
)


def parse_nsw_answer(text: str) -> NswParse:
    """Pull every ``<region> issues a <event> <level>`` clause out of ``text``.

    Clauses are separated by commas, semicolons, newlines or sentence stops;
    ``<level> <event>`` order is accepted too. Clauses that mention
    ``issues`` but name an unknown event, a missing level, or an impossible
    event/level pair are returned in ``malformed``. Never raises.
    """
    entries: list[NswEntry] = []
    malformed: list[Malformed] = []
    if not isinstance(text, str):
        return NswParse(entries, malformed)
    for chunk in _SPLIT_RE.split(text.replace("[", " ").replace("]", " ")):
        chunk = " ".join(chunk.split())
        if not chunk:
            continue
        m = _ISSUES_RE.match(chunk)
        if not m:
            continue
        region, rest = m.group("region").strip(), m.group("rest").strip()
        lm = _EVENT_LEVEL_RE.match(rest) or _LEVEL_EVENT_RE.match(rest)
        if not lm:
            malformed.append(Malformed(chunk, "missing severity level"))
            continue
        try:
            event = parse_event(lm.group("event"))
        except ValidationError:
            malformed.append(Malformed(chunk, f"unrecognized event {lm.group('event')!r}"))
            continue
        severity = parse_severity(lm.group("level"))
        try:
            entries.append(NswEntry(region, event, severity))
        except InvalidRecord as exc:
            malformed.append(Malformed(chunk, str(exc)))
    return NswParse(entries, malformed)


def normalize_region(name: str) -> str:
    return unicodedata.normalize("NFC", name).casefold().strip()
