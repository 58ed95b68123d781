"""Deterministic scoring of model answers.

MC / TF / RSW are accuracies scaled to 0-100. NSW answers get an integer
0-5 from a rule-based rubric: regions are matched exactly (after NFC,
case folding and trimming), then category and level agreement over the
matched pairs select the score. The qualitative cut-offs are fixed at
``MOST = 0.7`` and ``SOME = 0.3`` and reported alongside every result.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from mpbench.errors import IdMismatch, Unparseable
from mpbench.qa import (
    NswEntry,
    QAPair,
    QAType,
    normalize_region,
    parse_mc_answer,
    parse_nsw_answer,
)

MOST = 0.7
SOME = 0.3


def _aligned(preds: Mapping[str, str], golds: Mapping[str, object]):
    if set(preds) != set(golds):
        missing = sorted(set(golds) - set(preds))[:5]
        extra = sorted(set(preds) - set(golds))[:5]
        raise IdMismatch(f"prediction ids differ from gold ids (missing {missing}, extra {extra})")
    return [(preds[k], golds[k]) for k in sorted(golds)]


def _accuracy(flags: Sequence[bool]) -> float | None:
    if not flags:
        return None
    return 100.0 * sum(flags) / len(flags)


def _fold(text) -> str:
    return " ".join(str(text).split()).casefold() if text is not None else ""


def mc_correct(pred: str, gold: str, mode: str = "main") -> bool:
    """``main`` checks the option letter (event type); ``sub`` the full code."""
    if mode not in ("main", "sub"):
        raise ValueError(f"mode must be 'main' or 'sub', got {mode!r}")
    try:
        code = parse_mc_answer(pred)
    except Unparseable:
        return False
    return code[0] == gold[0] if mode == "main" else code == gold


def label_correct(pred: str, gold: str) -> bool:
    return bool(_fold(pred)) and _fold(pred) == _fold(gold)


def score_mc(preds: Mapping[str, str], golds: Mapping[str, str], mode: str = "main") -> float | None:
    return _accuracy([mc_correct(p, g, mode) for p, g in _aligned(preds, golds)])


def score_tf(preds: Mapping[str, str], golds: Mapping[str, str]) -> float | None:
    return _accuracy([label_correct(p, g) for p, g in _aligned(preds, golds)])


def score_rsw(preds: Mapping[str, str], golds: Mapping[str, str]) -> float | None:
    return _accuracy([label_correct(p, g) for p, g in _aligned(preds, golds)])


@dataclass(frozen=True)
class NswScore:
    score: int
    location_match: float
    category_match: float
    level_match: float
    extras: int
    matched: int
    gold_count: int

    def to_dict(self) -> dict:
        return {
            "category_match": self.category_match,
            "extras": self.extras,
            "gold_count": self.gold_count,
            "level_match": self.level_match,
            "location_match": self.location_match,
            "matched": self.matched,
            "score": self.score,
        }


def _pair(pred: Sequence[NswEntry], gold: Sequence[NswEntry]):
    """Greedy one-to-one pairing of gold entries with same-region predictions,
    preferring full matches, then category matches."""
    used = [False] * len(pred)
    pairs = []
    for g in gold:
        key = normalize_region(g.region)
        best, best_rank = None, -1
        for i, p in enumerate(pred):
            if used[i] or normalize_region(p.region) != key:
                continue
            rank = 2 * (p.event == g.event) + (p.severity == g.severity)
            if rank > best_rank:
                best, best_rank = i, rank
        if best is not None:
            used[best] = True
            pairs.append((pred[best], g))
    return pairs


def score_nsw(pred: Sequence[NswEntry], gold: Sequence[NswEntry]) -> NswScore:
    """Rubric score in 0..5; first matching rule from the top wins.

    5: every gold region matched, no extra regions, categories and levels all right
    4: as 5 but some levels wrong
    3: at least MOST of the regions matched and at least half the categories right
    2: SOME..MOST of the regions matched, or MOST matched with categories under half
    1: fewer than SOME (but not zero) regions matched
    0: no region matched
    """
    pred, gold = list(pred), list(gold)
    gold_regions = {normalize_region(g.region) for g in gold}
    extras = sum(1 for p in pred if normalize_region(p.region) not in gold_regions)
    pairs = _pair(pred, gold)
    if not gold:
        lm = 1.0 if not pred else 0.0
    else:
        lm = len(pairs) / len(gold)
    if pairs:
        cm = sum(p.event == g.event for p, g in pairs) / len(pairs)
        vm = sum(p.severity == g.severity for p, g in pairs) / len(pairs)
    else:
        cm = vm = 1.0 if (not gold and not pred) else 0.0

    if lm == 1.0 and extras == 0 and cm == 1.0 and vm == 1.0:
        score = 5
    elif lm == 1.0 and extras == 0 and cm == 1.0:
        score = 4
    elif lm >= MOST and cm >= 0.5:
        score = 3
    elif SOME <= lm < MOST or (lm >= MOST and cm < 0.5):
        score = 2
    elif 0.0 < lm < SOME:
        score = 1
    else:
        score = 0
    return NswScore(score, lm, cm, vm, extras, len(pairs), len(gold))


def score_nsw_text(pred_text: str, gold: Sequence[NswEntry]) -> NswScore:
    return score_nsw(parse_nsw_answer(pred_text).entries, gold)


# -- report -------------------------------------------------------------------

@dataclass
class ItemScore:
    id: str
    qa_type: str
    event: str | None
    correct: dict = field(default_factory=dict)
    nsw: NswScore | None = None

    def to_dict(self) -> dict:
        d = {"correct": self.correct, "event": self.event, "id": self.id, "type": self.qa_type}
        if self.nsw is not None:
            d["nsw"] = self.nsw.to_dict()
        return d


@dataclass
class ScoreReport:
    mc_main: float | None
    mc_sub: float | None
    tf: float | None
    rsw: float | None
    nsw_mean: float | None
    per_event: dict
    counts: dict
    thresholds: dict = field(default_factory=lambda: {"most": MOST, "some": SOME})

    def to_dict(self) -> dict:
        return {
            "counts": self.counts,
            "mc_main": self.mc_main,
            "mc_sub": self.mc_sub,
            "nsw_mean": self.nsw_mean,
            "per_event": self.per_event,
            "rsw": self.rsw,
            "tf": self.tf,
            "thresholds": self.thresholds,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def score_item(qa: QAPair, text: str) -> ItemScore:
    event = qa.meta.get("event")
    if qa.qa_type is QAType.MC:
        return ItemScore(qa.id, "MC", event, {"main": mc_correct(text, qa.gold, "main"),
                                               "sub": mc_correct(text, qa.gold, "sub")})
    if qa.qa_type in (QAType.TF, QAType.RSW):
        return ItemScore(qa.id, qa.qa_type.value, event, {"label": label_correct(text, qa.gold)})
    return ItemScore(qa.id, "NSW", None, nsw=score_nsw_text(text, qa.gold))


def aggregate_report(items: Iterable[ItemScore]) -> ScoreReport:
    """Overall and per-event accuracies; absent tasks report ``None``."""
    items = list(items)
    buckets = {"mc_main": [], "mc_sub": [], "tf": [], "rsw": []}
    per_event_flags: dict[str, dict[str, list[bool]]] = {}
    nsw_scores = []
    counts = {"MC": 0, "TF": 0, "RSW": 0, "NSW": 0}
    for it in items:
        counts[it.qa_type] += 1
        if it.qa_type == "NSW":
            nsw_scores.append(it.nsw.score)
            continue
        if it.qa_type == "MC":
            flags = {"mc_main": it.correct["main"], "mc_sub": it.correct["sub"]}
        else:
            flags = {it.qa_type.lower(): it.correct["label"]}
        ev = per_event_flags.setdefault(it.event or "unknown", {})
        for key, ok in flags.items():
            buckets[key].append(ok)
            ev.setdefault(key, []).append(ok)
    per_event = {
        event: {key: _accuracy(flags) for key, flags in sorted(tasks.items())}
        for event, tasks in sorted(per_event_flags.items())
    }
    nsw_mean = sum(nsw_scores) / len(nsw_scores) if nsw_scores else None
    return ScoreReport(
        mc_main=_accuracy(buckets["mc_main"]),
        mc_sub=_accuracy(buckets["mc_sub"]),
        tf=_accuracy(buckets["tf"]),
        rsw=_accuracy(buckets["rsw"]),
        nsw_mean=nsw_mean,
        per_event=per_event,
        counts=counts,
    )


def evaluate(qa_pairs: Sequence[QAPair], predictions: Mapping[str, str]):
    """Score every QA pair against ``predictions`` (id -> raw model text).

    Returns ``(report, item_scores)``; ids must match exactly.
    """
    golds = {q.id: q for q in qa_pairs}
    if len(golds) != len(qa_pairs):
        raise IdMismatch("duplicate ids among QA pairs")
    _aligned(predictions, golds)
    items = [score_item(q, predictions[q.id]) for q in qa_pairs]
    return aggregate_report(items), items
