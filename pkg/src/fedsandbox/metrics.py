"""Instance- and token-level precision/recall/F1 for span annotations."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

from .schema import TextAnnotation, category_name

# letters and digits only: \w minus underscore
_TOKEN = re.compile(r"[^\W_]+")


@dataclass(frozen=True, order=True)
class TokenSpan:
    noteId: str
    start: int
    length: int


@dataclass(frozen=True)
class MatchCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "MatchCounts") -> "MatchCounts":
        return MatchCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class LevelReport:
    metrics: Metrics
    counts: MatchCounts

    def to_json(self) -> dict[str, Any]:
        return {
            "precision": self.metrics.precision,
            "recall": self.metrics.recall,
            "f1": self.metrics.f1,
            "tp": self.counts.tp,
            "fp": self.counts.fp,
            "fn": self.counts.fn,
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "LevelReport":
        return cls(
            Metrics(data["precision"], data["recall"], data["f1"]),
            MatchCounts(data["tp"], data["fp"], data["fn"]),
        )


@dataclass(frozen=True)
class CategoryReport:
    category: str
    instance: LevelReport
    token: LevelReport
    noData: bool = False

    def to_json(self) -> dict[str, Any]:
        return {
            "category": self.category,
            "instance": self.instance.to_json(),
            "token": self.token.to_json(),
            "noData": self.noData,
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "CategoryReport":
        return cls(
            data["category"],
            LevelReport.from_json(data["instance"]),
            LevelReport.from_json(data["token"]),
            bool(data.get("noData", False)),
        )


class MixedCategoryError(ValueError):
    pass


def tokenize_annotation(ann: TextAnnotation) -> list[TokenSpan]:
    return [
        TokenSpan(ann.noteId, ann.start + m.start(), m.end() - m.start())
        for m in _TOKEN.finditer(ann.text)
    ]


def _single_category(*groups: Iterable[TextAnnotation]) -> str | None:
    seen = {a.category for g in groups for a in g}
    if len(seen) > 1:
        raise MixedCategoryError(f"annotations span several categories: {sorted(seen)}")
    return next(iter(seen), None)


def match_instances(gold: Sequence[TextAnnotation], pred: Sequence[TextAnnotation]) -> MatchCounts:
    """Exact (noteId, start, length) matching; each gold absorbs one prediction."""
    _single_category(gold, pred)
    unmatched = {a.key for a in gold}
    tp = 0
    for p in pred:
        if p.key in unmatched:
            unmatched.remove(p.key)
            tp += 1
    return MatchCounts(tp=tp, fp=len(pred) - tp, fn=len(gold) - tp)


def token_set(anns: Iterable[TextAnnotation]) -> set[TokenSpan]:
    return {t for a in anns for t in tokenize_annotation(a)}


def match_tokens(gold: Sequence[TextAnnotation], pred: Sequence[TextAnnotation]) -> MatchCounts:
    _single_category(gold, pred)
    g, p = token_set(gold), token_set(pred)
    return MatchCounts(tp=len(g & p), fp=len(p - g), fn=len(g - p))


def compute_prf(counts: MatchCounts) -> Metrics:
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    return Metrics(precision, recall, f1_score(precision, recall))


def f1_score(precision: float, recall: float) -> float:
    if precision + recall <= 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def evaluate_category(
    gold: Sequence[TextAnnotation], pred: Sequence[TextAnnotation], category: str
) -> CategoryReport:
    """Micro-averaged report for one category: counts are pooled over all notes."""
    name = category_name(category)
    found = _single_category(gold, pred)
    if found is not None and found != name:
        raise MixedCategoryError(f"annotations are {found!r}, expected {name!r}")
    inst = match_instances(gold, pred)
    tok = match_tokens(gold, pred)
    return CategoryReport(
        category=name,
        instance=LevelReport(compute_prf(inst), inst),
        token=LevelReport(compute_prf(tok), tok),
        noData=not gold and not pred,
    )


def false_positives(gold: Sequence[TextAnnotation], pred: Sequence[TextAnnotation]) -> list[TextAnnotation]:
    """Instance-level predictions not absorbed by a gold span, in input order."""
    unmatched = {a.key for a in gold}
    out = []
    for p in pred:
        if p.key in unmatched:
            unmatched.remove(p.key)
        else:
            out.append(p)
    return out


def false_negatives(gold: Sequence[TextAnnotation], pred: Sequence[TextAnnotation]) -> list[TextAnnotation]:
    keys = {p.key for p in pred}
    return [g for g in gold if g.key not in keys]


def format_table(reports: Iterable[CategoryReport], title: str | None = None) -> str:
    rows = [("category", "level", "P", "R", "F1", "TP", "FP", "FN")]
    for r in reports:
        for level, lr in (("instance", r.instance), ("token", r.token)):
            m, c = lr.metrics, lr.counts
            rows.append((r.category, level, f"{m.precision:.2f}", f"{m.recall:.2f}", f"{m.f1:.2f}",
                         str(c.tp), str(c.fp), str(c.fn)))
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = [title] if title else []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)
