"""Seeded synthetic clinical notes with exact gold spans.

Notes are sentences drawn from templates; each template holds at most one
typed placeholder, and the filled surrogate's position is recorded as gold.
All randomness flows through one :class:`SplitMix64` in a fixed order, so
a config always produces the same bundle.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from ..schema import TASKS, ClinicalNote, DatasetBundle, PhiCategory, TextAnnotation
from .rng import SplitMix64

_MONTHS = ["January", "February", "March", "April", "May", "June", "July", "August",
           "September", "October", "November", "December"]


class CorpusConfigError(ValueError):
    pass


def _load_data(name: str, override: str | os.PathLike[str] | None) -> dict[str, Any]:
    if override is not None:
        return json.loads(Path(override).read_text(encoding="utf-8"))
    return json.loads(resources.files(__package__).joinpath("data", name).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class CorpusConfig:
    seed: int = 42
    noteCount: int = 20
    noteTypes: tuple[str, ...] = ("loinc:LP29684-5",)
    categoryDensity: Mapping[str, float] = field(
        default_factory=lambda: {"DATE": 3.0, "PERSON_NAME": 2.0, "ID": 0.6, "CONTACT": 0.5, "LOCATION": 1.2}
    )
    datasetId: str = "synthetic"
    idPrefix: str = "note"
    templates: str | None = None
    pools: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "noteTypes", tuple(self.noteTypes))
        object.__setattr__(self, "categoryDensity", {str(getattr(k, "value", k)): v for k, v in self.categoryDensity.items()})
        self.validate()

    def validate(self) -> None:
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise CorpusConfigError("seed must be an integer")
        if not isinstance(self.noteCount, int) or self.noteCount < 1:
            raise CorpusConfigError("noteCount must be an integer >= 1")
        if not self.noteTypes or not all(isinstance(t, str) and t for t in self.noteTypes):
            raise CorpusConfigError("noteTypes must be a non-empty list of codes")
        for name, density in self.categoryDensity.items():
            if name not in TASKS:
                raise CorpusConfigError(f"unknown category {name!r} in categoryDensity")
            if name not in PhiCategory.__members__:
                raise CorpusConfigError(f"no surrogate generator for category {name!r}")
            if not isinstance(density, (int, float)) or isinstance(density, bool) or density < 0 or math.isnan(density):
                raise CorpusConfigError(f"density for {name} must be a number >= 0")

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "CorpusConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise CorpusConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**dict(data))

    @classmethod
    def load(cls, path: str | os.PathLike[str]) -> "CorpusConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise CorpusConfigError(f"{path}: {exc}") from None
        if not isinstance(data, dict):
            raise CorpusConfigError(f"{path}: config must be a JSON object")
        base = Path(path).parent
        for key in ("templates", "pools"):
            if isinstance(data.get(key), str):
                data[key] = str(base / data[key])
        return cls.from_json(data)


class _Surrogates:
    def __init__(self, pools: Mapping[str, Any], rng: SplitMix64) -> None:
        self.p = pools
        self.rng = rng

    def pick(self, key: str) -> Any:
        return self.rng.choice(self.p[key])

    def date(self) -> tuple[str, dict[str, str]]:
        fmt = self.pick("dateFormats")
        lo, hi = self.p["yearRange"]
        year = lo + self.rng.below(hi - lo + 1)
        month = 1 + self.rng.below(12)
        day = 1 + self.rng.below(28)
        text = {
            "MM/DD/YYYY": f"{month:02d}/{day:02d}/{year}",
            "M/D/YYYY": f"{month}/{day}/{year}",
            "M/D/YY": f"{month}/{day}/{year % 100:02d}",
            "YYYY-MM-DD": f"{year}-{month:02d}-{day:02d}",
            "MM-DD-YYYY": f"{month:02d}-{day:02d}-{year}",
            "MMMM D, YYYY": f"{_MONTHS[month - 1]} {day}, {year}",
            "D MMM YYYY": f"{day} {_MONTHS[month - 1][:3]} {year}",
        }[fmt]
        return text, {"dateFormat": fmt}

    def person_name(self) -> tuple[str, dict[str, str]]:
        style = self.pick("nameStyles")
        given, family = self.pick("given"), self.pick("family")
        return {"full": f"{given} {family}", "family": family, "given": given}[style], {}

    def id(self) -> tuple[str, dict[str, str]]:
        style = self.pick("idStyles")
        if style == "digits7":
            return f"{self.rng.below(10**7):07d}", {}
        if style == "digits9":
            return f"{self.rng.below(10**9):09d}", {}
        letters = "".join(chr(65 + self.rng.below(26)) for _ in range(2))
        return f"{letters}-{self.rng.below(10**6):06d}", {}

    def contact(self) -> tuple[str, dict[str, str]]:
        style = self.pick("phoneStyles")
        if style == "email":
            given = self.rng.choice([g for g in self.p["given"] if g.isascii()]).lower()
            family = self.rng.choice([f for f in self.p["family"] if f.isascii()]).lower()
            return f"{given}.{family}@{self.pick('emailDomains')}", {}
        a, b, c = 200 + self.rng.below(800), self.rng.below(1000), self.rng.below(10000)
        sep = {"dash": "-", "dot": "."}.get(style)
        if sep is None:
            return f"({a}) {b:03d}-{c:04d}", {}
        return f"{a}{sep}{b:03d}{sep}{c:04d}", {}

    def location(self) -> tuple[str, dict[str, str]]:
        style = self.pick("locationStyles")
        if style == "street":
            number = 1 + self.rng.below(9999)
            return f"{number} {self.pick('streets')} {self.pick('roads')}", {}
        return self.pick({"city": "cities", "state": "states", "facility": "facilities"}[style]), {}


def generate_corpus(config: CorpusConfig) -> DatasetBundle:
    templates = _load_data("templates.json", config.templates)
    pools = _load_data("pools.json", config.pools)
    rng = SplitMix64(config.seed)
    surrogates = _Surrogates(pools, rng)
    makers = {
        "DATE": surrogates.date,
        "PERSON_NAME": surrogates.person_name,
        "ID": surrogates.id,
        "CONTACT": surrogates.contact,
        "LOCATION": surrogates.location,
    }
    # registry order, not config key order, keeps output independent of JSON key order
    categories = [c for c in TASKS.names() if c in config.categoryDensity]
    patient_count = max(1, (config.noteCount + 1) // 2)
    width = max(4, len(str(config.noteCount)))

    notes: list[ClinicalNote] = []
    gold: dict[str, list[TextAnnotation]] = {c: [] for c in categories}
    for i in range(config.noteCount):
        note_id = f"{config.idPrefix}-{i + 1:0{width}d}"
        note_type = rng.choice(config.noteTypes)
        patient_id = f"patient-{1 + rng.below(patient_count):0{width}d}"

        slots: list[str | None] = []
        for category in categories:
            density = float(config.categoryDensity[category])
            whole = math.floor(density)
            extra = 1 if rng.random() < density - whole else 0
            slots.extend([category] * (whole + extra))
        slots.extend([None] * (1 + rng.below(3)))
        rng.shuffle(slots)

        parts: list[str] = []
        pos = 0
        for slot in slots:
            if parts:
                parts.append(" ")
                pos += 1
            if slot is None:
                sentence = rng.choice(templates["filler"])
                parts.append(sentence)
                pos += len(sentence)
                continue
            template = rng.choice(templates["sentences"][slot])
            prefix, suffix = template.split("{" + slot + "}")
            value, attrs = makers[slot]()
            start = pos + len(prefix)
            gold[slot].append(TextAnnotation(note_id, start, len(value), value, slot, attributes=attrs))
            sentence = prefix + value + suffix
            parts.append(sentence)
            pos += len(sentence)
        notes.append(ClinicalNote(note_id, patient_id, "".join(parts), note_type))
    return DatasetBundle(config.datasetId, tuple(notes), {c: tuple(v) for c, v in gold.items()})


def category_table(bundle: DatasetBundle) -> list[dict[str, Any]]:
    """Per-category counts in the layout of a dataset summary table."""
    total = sum(len(v) for v in bundle.gold.values())
    n_notes = len(bundle.notes)
    rows = []
    for category, anns in bundle.gold.items():
        with_cat = len({a.noteId for a in anns})
        rows.append({
            "category": category,
            "annotations": len(anns),
            "annotationPct": 100.0 * len(anns) / total if total else 0.0,
            "notes": with_cat,
            "notePct": 100.0 * with_cat / n_notes if n_notes else 0.0,
        })
    return rows


def format_category_table(bundle: DatasetBundle) -> str:
    rows = category_table(bundle)
    total = sum(r["annotations"] for r in rows)
    lines = [
        f"Total no. of notes        {len(bundle.notes)}",
        f"Total no. of annotations  {total}",
        f"{'category':<14}{'annotations (%)':>20}{'notes (%)':>20}",
    ]
    for r in rows:
        lines.append(
            f"{r['category']:<14}{r['annotations']:>10} ({r['annotationPct']:6.2f}%){r['notes']:>10} ({r['notePct']:6.2f}%)"
        )
    return "\n".join(lines)
