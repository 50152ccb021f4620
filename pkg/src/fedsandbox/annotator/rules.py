"""Deterministic rule-based PHI detection.

Each task collects candidate spans from its rules, then keeps the longest
non-overlapping ones (ties go to the earlier rule, then the earlier start).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Callable, Iterable

from ..schema import ClinicalNote, PhiCategory, TextAnnotation

PATTERN_CONFIDENCE = 95.5
LEXICON_CONFIDENCE = 85.0


@dataclass(frozen=True)
class Candidate:
    start: int
    end: int
    priority: int
    confidence: float
    attributes: tuple[tuple[str, str], ...] = ()


def resolve(candidates: Iterable[Candidate]) -> list[Candidate]:
    """Longest-match-wins selection of non-overlapping candidates, ordered by start."""
    chosen: list[Candidate] = []
    for c in sorted(candidates, key=lambda c: (-(c.end - c.start), c.priority, c.start)):
        if all(c.end <= k.start or c.start >= k.end for k in chosen):
            chosen.append(c)
    return sorted(chosen, key=lambda c: c.start)


def _to_annotations(note: ClinicalNote, category: PhiCategory, cands: Iterable[Candidate]) -> list[TextAnnotation]:
    return [
        TextAnnotation(
            noteId=note.identifier,
            start=c.start,
            length=c.end - c.start,
            text=note.text[c.start : c.end],
            category=category.value,
            confidence=c.confidence,
            attributes=c.attributes,
        )
        for c in resolve(cands)
    ]


@lru_cache(maxsize=None)
def load_lexicon(name: str) -> frozenset[str]:
    raw = resources.files(__package__).joinpath("data", f"{name}.txt").read_text(encoding="utf-8")
    return frozenset(
        line.strip() for line in raw.splitlines() if line.strip() and not line.lstrip().startswith("#")
    )


# --------------------------------------------------------------------------
# dates

_MONTHS_FULL = ("January February March April May June July August September October November December").split()
_MONTHS_ABBR = [m[:3] for m in _MONTHS_FULL]
_MONTH_RE = "|".join(_MONTHS_FULL + _MONTHS_ABBR)

_ISO = re.compile(r"(?<![\d-])(\d{4})-(\d{1,2})-(\d{1,2})(?![\d-])")
_SLASH = re.compile(r"(?<![\d/])(\d{1,2})/(\d{1,2})/(\d{4}|\d{2})(?![\d/])")
_DASH = re.compile(r"(?<![\d-])(\d{1,2})-(\d{1,2})-(\d{4})(?![\d-])")
_MONTH_DAY_YEAR = re.compile(rf"\b({_MONTH_RE})(\.?) (\d{{1,2}})(?:st|nd|rd|th)?, (\d{{4}})\b")
_DAY_MONTH_YEAR = re.compile(rf"\b(\d{{1,2}}) ({_MONTH_RE})(\.?) (\d{{4}})\b")
_MONTH_YEAR = re.compile(rf"\b({_MONTH_RE}) (\d{{4}})\b")
_YEAR = re.compile(r"(?<![\w/-])((?:19|20)\d{2})(?![\w/-])")
_YEAR_CONTEXT = frozenset("in since year from until by during of circa before after".split())
_PREV_WORD = re.compile(r"([A-Za-z]+)\W{0,2}$")


def _digits_format(part: str, letter: str) -> str:
    return letter * 2 if len(part) == 2 else letter


def _year_format(part: str) -> str:
    return "YYYY" if len(part) == 4 else "YY"


def _month_format(token: str) -> str:
    return "MMMM" if token in _MONTHS_FULL and len(token) > 3 else "MMM"


def _valid_md(month: str, day: str) -> bool:
    return 1 <= int(month) <= 12 and 1 <= int(day) <= 31


def date_candidates(text: str) -> list[Candidate]:
    out: list[Candidate] = []

    def add(m: re.Match[str], priority: int, fmt: str) -> None:
        out.append(Candidate(m.start(), m.end(), priority, PATTERN_CONFIDENCE, (("dateFormat", fmt),)))

    for m in _ISO.finditer(text):
        y, mo, d = m.groups()
        if _valid_md(mo, d):
            add(m, 0, f"YYYY-{_digits_format(mo, 'M')}-{_digits_format(d, 'D')}")
    for m in _SLASH.finditer(text):
        mo, d, y = m.groups()
        if _valid_md(mo, d):
            add(m, 0, f"{_digits_format(mo, 'M')}/{_digits_format(d, 'D')}/{_year_format(y)}")
    for m in _DASH.finditer(text):
        mo, d, y = m.groups()
        if _valid_md(mo, d):
            add(m, 0, f"{_digits_format(mo, 'M')}-{_digits_format(d, 'D')}-YYYY")
    for m in _MONTH_DAY_YEAR.finditer(text):
        mon, dot, d, _ = m.groups()
        if 1 <= int(d) <= 31:
            add(m, 1, f"{_month_format(mon)}{dot} {_digits_format(d, 'D')}, YYYY")
    for m in _DAY_MONTH_YEAR.finditer(text):
        d, mon, dot, _ = m.groups()
        if 1 <= int(d) <= 31:
            add(m, 1, f"{_digits_format(d, 'D')} {_month_format(mon)}{dot} YYYY")
    for m in _MONTH_YEAR.finditer(text):
        add(m, 1, f"{_month_format(m.group(1))} YYYY")
    for m in _YEAR.finditer(text):
        prev = _PREV_WORD.search(text, 0, m.start())
        if prev and prev.group(1).lower() in _YEAR_CONTEXT:
            add(m, 2, "YYYY")
    return out


def annotate_date(note: ClinicalNote) -> list[TextAnnotation]:
    return _to_annotations(note, PhiCategory.DATE, date_candidates(note.text))


# --------------------------------------------------------------------------
# person names

_WORD = re.compile(r"[^\W\d_]+(?:['’-][^\W\d_]+)*")
HONORIFICS = frozenset({"Mr", "Mrs", "Ms", "Dr", "Miss", "Mx"})
_MAX_NAME_TOKENS = 3


def _capitalized(token: str) -> bool:
    return token[0].isupper() and any(c.islower() for c in token[1:])


def person_name_candidates(text: str) -> list[Candidate]:
    given, family = load_lexicon("given_names"), load_lexicon("family_names")
    tokens = list(_WORD.finditer(text))
    flagged: dict[int, float] = {}

    for i, tok in enumerate(tokens):
        word = tok.group()
        if _capitalized(word) and (word in given or word in family):
            flagged[i] = max(flagged.get(i, 0.0), LEXICON_CONFIDENCE)
        if word not in HONORIFICS:
            continue
        # honorific, optional period, then capitalized tokens separated by single spaces
        pos = tok.end() + (1 if text[tok.end() : tok.end() + 1] == "." else 0)
        j = i + 1
        while j < len(tokens) and j - i <= _MAX_NAME_TOKENS:
            nxt = tokens[j]
            gap = text[pos : nxt.start()]
            if not _capitalized(nxt.group()) or gap not in (" ",) or nxt.group() in HONORIFICS:
                break
            flagged[j] = PATTERN_CONFIDENCE
            pos = nxt.end()
            j += 1

    out: list[Candidate] = []
    run: list[int] = []
    for i in sorted(flagged):
        if run and i == run[-1] + 1 and text[tokens[run[-1]].end() : tokens[i].start()] == " ":
            run.append(i)
            continue
        if run:
            out.append(_name_span(tokens, run, flagged))
        run = [i]
    if run:
        out.append(_name_span(tokens, run, flagged))
    return out


def _name_span(tokens: list[re.Match[str]], run: list[int], flagged: dict[int, float]) -> Candidate:
    return Candidate(tokens[run[0]].start(), tokens[run[-1]].end(), 0, max(flagged[i] for i in run))


def annotate_person_name(note: ClinicalNote) -> list[TextAnnotation]:
    return _to_annotations(note, PhiCategory.PERSON_NAME, person_name_candidates(note.text))


# --------------------------------------------------------------------------
# identifiers, contacts, locations

_DIGIT_RUN = re.compile(r"(?<!\d)\d{5,}(?!\d)")
_CODE = re.compile(r"(?<![A-Za-z0-9])[A-Z]{1,3}-?\d{4,}(?!\d)")
_PHONE = re.compile(r"(?<![\d(])\d{3}[-. ]\d{3}[-. ]\d{4}(?!\d)")
_PHONE_PAREN = re.compile(r"\(\d{3}\) ?\d{3}[-. ]\d{4}(?!\d)")
_EMAIL = re.compile(r"(?<![\w.%+-])[A-Za-z0-9._%+-]+@[A-Za-z0-9-]+(?:\.[A-Za-z0-9-]+)*\.[A-Za-z]{2,}\b")
_ROAD = "Street|St|Avenue|Ave|Road|Rd|Boulevard|Blvd|Drive|Lane|Ln|Way|Court|Ct|Place|Pl"
_STREET = re.compile(rf"(?<!\d)\d{{1,5}}(?: [A-Z][a-z]+){{1,3}} (?:{_ROAD})\b")


def _regex_candidates(text: str, patterns: list[re.Pattern[str]], confidence: float = PATTERN_CONFIDENCE) -> list[Candidate]:
    return [
        Candidate(m.start(), m.end(), prio, confidence)
        for prio, pat in enumerate(patterns)
        for m in pat.finditer(text)
    ]


def annotate_id(note: ClinicalNote) -> list[TextAnnotation]:
    return _to_annotations(note, PhiCategory.ID, _regex_candidates(note.text, [_CODE, _DIGIT_RUN]))


def annotate_contact(note: ClinicalNote) -> list[TextAnnotation]:
    cands = _regex_candidates(note.text, [_PHONE_PAREN, _PHONE, _EMAIL])
    return _to_annotations(note, PhiCategory.CONTACT, cands)


@lru_cache(maxsize=None)
def _location_lexicon_re() -> re.Pattern[str]:
    entries = sorted(load_lexicon("locations"), key=lambda e: (-len(e), e))
    return re.compile(r"(?<!\w)(?:" + "|".join(re.escape(e) for e in entries) + r")(?!\w)")


def annotate_location(note: ClinicalNote) -> list[TextAnnotation]:
    cands = _regex_candidates(note.text, [_STREET])
    cands += [Candidate(m.start(), m.end(), 1, LEXICON_CONFIDENCE) for m in _location_lexicon_re().finditer(note.text)]
    return _to_annotations(note, PhiCategory.LOCATION, cands)


RULES: dict[str, Callable[[ClinicalNote], list[TextAnnotation]]] = {
    PhiCategory.DATE.value: annotate_date,
    PhiCategory.PERSON_NAME.value: annotate_person_name,
    PhiCategory.ID.value: annotate_id,
    PhiCategory.CONTACT.value: annotate_contact,
    PhiCategory.LOCATION.value: annotate_location,
}
