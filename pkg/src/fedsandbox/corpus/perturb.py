"""Corrupt gold annotations in controlled ways to get predictions whose scores are known in advance."""

from __future__ import annotations

import math
from dataclasses import replace
from enum import Enum
from fractions import Fraction
from typing import Mapping, Sequence

from ..metrics import tokenize_annotation
from ..schema import ClinicalNote, PhiCategory, TextAnnotation
from .rng import SplitMix64


class PerturbMode(str, Enum):
    DROP = "DROP"
    SHIFT = "SHIFT"
    SPLIT = "SPLIT"
    DUPLICATE = "DUPLICATE"
    RETYPE = "RETYPE"


_CYCLE = [c.value for c in PhiCategory]


def affected_count(rate: float, n: int) -> int:
    """floor(rate * n), evaluated on the decimal value of ``rate``."""
    return math.floor(Fraction(str(rate)) * n)


def _select(count: int, k: int, rng: SplitMix64) -> set[int]:
    order = list(range(count))
    rng.shuffle(order)
    return set(order[:k])


def perturb_predictions(
    gold: Sequence[TextAnnotation],
    mode: PerturbMode | str,
    rate: float,
    seed: int = 0,
    notes: Mapping[str, ClinicalNote] | None = None,
) -> list[TextAnnotation]:
    """Return predictions derived from ``gold``.

    DROP removes floor(rate*n) annotations, SHIFT moves that many starts by
    +1, DUPLICATE appends exact copies of that many, RETYPE files that many
    under the next built-in category. SPLIT picks floor(rate*m) of the m
    multi-token annotations and keeps only their first token. With
    ``notes`` given, SHIFT re-slices text from the note when it still fits.
    """
    try:
        mode = PerturbMode(mode)
    except ValueError:
        raise ValueError(f"unknown perturbation mode {mode!r}") from None
    if isinstance(rate, bool) or not isinstance(rate, (int, float)) or not 0 <= rate <= 1:
        raise ValueError("rate must be a number in [0, 1]")
    rng = SplitMix64(seed)
    gold = list(gold)

    if mode is PerturbMode.SPLIT:
        multi = [i for i, a in enumerate(gold) if len(tokenize_annotation(a)) > 1]
        chosen = {multi[j] for j in _select(len(multi), affected_count(rate, len(multi)), rng)}
    else:
        chosen = _select(len(gold), affected_count(rate, len(gold)), rng)

    out: list[TextAnnotation] = []
    extra: list[TextAnnotation] = []
    for i, ann in enumerate(gold):
        if i not in chosen:
            out.append(ann)
        elif mode is PerturbMode.DROP:
            continue
        elif mode is PerturbMode.SHIFT:
            text = ann.text
            note = notes.get(ann.noteId) if notes else None
            if note is not None and ann.end + 1 <= len(note.text):
                text = note.text[ann.start + 1 : ann.end + 1]
            out.append(replace(ann, start=ann.start + 1, text=text))
        elif mode is PerturbMode.SPLIT:
            first = tokenize_annotation(ann)[0]
            offset = first.start - ann.start
            out.append(replace(ann, start=first.start, length=first.length,
                               text=ann.text[offset : offset + first.length]))
        elif mode is PerturbMode.DUPLICATE:
            out.append(ann)
            extra.append(ann)
        elif mode is PerturbMode.RETYPE:
            nxt = _CYCLE[(_CYCLE.index(ann.category) + 1) % len(_CYCLE)] if ann.category in _CYCLE else _CYCLE[0]
            out.append(replace(ann, category=nxt))
    return out + extra
