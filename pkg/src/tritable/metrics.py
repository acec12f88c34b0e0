"""Triple matching, micro precision/recall/F1, and report breakdowns.

Scores are micro-averaged: predicted/gold/correct counts are summed over the
whole test set before the ratios are taken.  Reports additionally slice the
corpus by entity-overlap pattern and by gold-triple count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .schema import Dataset, Triple


class MatchMode(Enum):
    EXACT = "exact"        # full spans plus relation must match
    HEAD_ONLY = "head"     # each entity compared by its final token only


class OverlapPattern(Enum):
    NORMAL = "Normal"
    SEO = "SEO"   # two triples share exactly one entity
    EPO = "EPO"   # two triples share both entities


class EvalError(ValueError):
    pass


def triple_key(triple: Triple, mode: MatchMode) -> tuple:
    if mode is MatchMode.EXACT:
        return (triple.relation, triple.subject.span(), triple.object.span())
    return (triple.relation, triple.subject.tail, triple.object.tail)


def match_count(pred: Iterable[Triple], gold: Iterable[Triple],
                mode: MatchMode = MatchMode.EXACT) -> int:
    """Size of the set intersection under the mode's equality; each gold
    triple is credited at most once."""
    pred_keys = {triple_key(t, mode) for t in pred}
    gold_keys = {triple_key(t, mode) for t in gold}
    return len(pred_keys & gold_keys)


def micro_prf(predicted: int, gold: int, correct: int) -> tuple[float, float, float]:
    """Micro precision/recall/F1 from corpus-wide totals; divisions by zero
    yield zero."""
    if correct > min(predicted, gold):
        raise EvalError(f"correct={correct} exceeds predicted={predicted} or gold={gold}")
    p = correct / predicted if predicted else 0.0
    r = correct / gold if gold else 0.0
    f1 = 2.0 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def overlap_category(triples: Sequence[Triple]) -> OverlapPattern:
    """Classify a sentence's gold triples by entity overlap.

    EPO when some pair of triples connects the same two entities (as an
    unordered pair of spans); otherwise SEO when some pair shares at least
    one entity; otherwise Normal.  Entities compare by exact span.
    """
    if not triples:
        raise EvalError("overlap category is undefined for an empty triple set")
    pairs = [frozenset((t.subject.span(), t.object.span())) for t in triples]
    spans = [(t.subject.span(), t.object.span()) for t in triples]
    shares_one = False
    for a in range(len(triples)):
        for b in range(a + 1, len(triples)):
            if pairs[a] == pairs[b]:
                return OverlapPattern.EPO
            if set(spans[a]) & set(spans[b]):
                shares_one = True
    return OverlapPattern.SEO if shares_one else OverlapPattern.NORMAL


@dataclass
class Scores:
    predicted: int = 0
    gold: int = 0
    correct: int = 0

    def add(self, predicted: int, gold: int, correct: int) -> None:
        self.predicted += predicted
        self.gold += gold
        self.correct += correct

    def prf(self) -> tuple[float, float, float]:
        return micro_prf(self.predicted, self.gold, self.correct)

    def to_dict(self) -> dict:
        p, r, f1 = self.prf()
        return {"predicted": self.predicted, "gold": self.gold,
                "correct": self.correct, "precision": p, "recall": r, "f1": f1}


@dataclass
class EvalReport:
    mode: MatchMode
    overall: Scores = field(default_factory=Scores)
    by_pattern: dict[str, Scores] = field(default_factory=dict)
    by_count: dict[str, Scores] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "match": self.mode.value,
            "overall": self.overall.to_dict(),
            "by_pattern": {k: v.to_dict() for k, v in self.by_pattern.items()},
            "by_triple_count": {k: v.to_dict() for k, v in self.by_count.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def render_text(self) -> str:
        rows = [("overall", self.overall)]
        rows += [(f"pattern {k}", v) for k, v in self.by_pattern.items()]
        rows += [(f"triples {k}", v) for k, v in self.by_count.items()]
        lines = [f"{'slice':<14} {'pred':>6} {'gold':>6} {'corr':>6}"
                 f" {'P':>7} {'R':>7} {'F1':>7}"]
        for name, sc in rows:
            p, r, f1 = sc.prf()
            lines.append(f"{name:<14} {sc.predicted:>6} {sc.gold:>6} {sc.correct:>6}"
                         f" {100 * p:>7.2f} {100 * r:>7.2f} {100 * f1:>7.2f}")
        return "\n".join(lines)


def _count_bucket(count: int, buckets: Sequence[int]) -> str:
    top = max(buckets)
    return f"T={count}" if count <= top else f"T>={top + 1}"


def build_report(dataset: Dataset, predictions: Mapping[str, Sequence[Triple]],
                 mode: MatchMode = MatchMode.EXACT,
                 buckets: Sequence[int] = (1, 2, 3, 4)) -> EvalReport:
    """Score predictions against a corpus, sliced by overlap pattern and by
    gold-triple count.

    ``predictions`` maps sentence id to predicted triples; every corpus
    sentence must be present and no extra ids are allowed.  Sentences without
    gold triples contribute to the overall totals only (the pattern and
    count slices are partitions of sentences that carry triples).
    """
    extra = set(predictions) - {s.id for s in dataset.sentences}
    if extra:
        raise EvalError(f"predictions for unknown sentence ids: {sorted(extra)[:3]}")
    report = EvalReport(mode=mode)
    for pattern in OverlapPattern:
        report.by_pattern[pattern.value] = Scores()
    for b in buckets:
        report.by_count[f"T={b}"] = Scores()
    report.by_count[f"T>={max(buckets) + 1}"] = Scores()

    for sentence in dataset.sentences:
        if sentence.id not in predictions:
            raise EvalError(f"no predictions for sentence id {sentence.id!r}")
        pred = list(predictions[sentence.id])
        gold = sentence.triples
        counted = (len({triple_key(t, mode) for t in pred}),
                   len({triple_key(t, mode) for t in gold}),
                   match_count(pred, gold, mode))
        report.overall.add(*counted)
        if gold:
            pattern = overlap_category(gold)
            report.by_pattern[pattern.value].add(*counted)
            report.by_count[_count_bucket(len(gold), buckets)].add(*counted)
    return report
