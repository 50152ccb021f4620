"""Shared domain types, JSON wire format, validation and dataset bundles.

Offsets (``start``/``length``) count Unicode code points, which is what
Python ``str`` indexing already does.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping


class PhiCategory(str, Enum):
    DATE = "DATE"
    PERSON_NAME = "PERSON_NAME"
    ID = "ID"
    CONTACT = "CONTACT"
    LOCATION = "LOCATION"


@dataclass(frozen=True)
class TaskType:
    """An annotation task: a name plus the JSON keys used to carry its lists.

    ``list_key`` names gold files (``TextPersonNameAnnotations``),
    ``endpoint`` names the tool route and response key
    (``textPersonNameAnnotations``), ``stem`` names the bundle file.
    """

    name: str
    list_key: str
    endpoint: str
    stem: str


class TaskRegistry:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._tasks: dict[str, TaskType] = {}

    def register(self, task: TaskType) -> TaskType:
        with self._lock:
            existing = self._tasks.get(task.name)
            if existing is not None and existing != task:
                raise ValueError(f"task {task.name!r} already registered differently")
            self._tasks[task.name] = task
        return task

    def get(self, name: str) -> TaskType:
        try:
            return self._tasks[str(name.value if isinstance(name, Enum) else name)]
        except KeyError:
            raise UnknownTaskError(name) from None

    def __contains__(self, name: object) -> bool:
        if isinstance(name, Enum):
            name = name.value
        return name in self._tasks

    def names(self) -> list[str]:
        return list(self._tasks)

    def by_list_key(self, key: str) -> TaskType:
        for task in self._tasks.values():
            if task.list_key == key:
                return task
        raise UnknownTaskError(key)

    def by_stem(self, stem: str) -> TaskType:
        for task in self._tasks.values():
            if task.stem == stem:
                return task
        raise UnknownTaskError(stem)


class UnknownTaskError(KeyError):
    pass


TASKS = TaskRegistry()
for _name, _camel, _stem in [
    ("DATE", "Date", "date"),
    ("PERSON_NAME", "PersonName", "person_name"),
    ("ID", "Id", "id"),
    ("CONTACT", "Contact", "contact"),
    ("LOCATION", "Location", "location"),
]:
    TASKS.register(TaskType(_name, f"Text{_camel}Annotations", f"text{_camel}Annotations", _stem))

COVID_SYMPTOM = TaskType(
    "COVID_SYMPTOM", "TextCovidSymptomAnnotations", "textCovidSymptomAnnotations", "covid_symptom"
)


def register_covid_symptom_task() -> TaskType:
    return TASKS.register(COVID_SYMPTOM)


def category_name(category: str | Enum) -> str:
    return category.value if isinstance(category, Enum) else str(category)


# --------------------------------------------------------------------------
# values


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class ClinicalNote:
    identifier: str
    patientId: str
    text: str
    type: str

    def to_json(self) -> dict[str, Any]:
        return {
            "identifier": self.identifier,
            "patientId": self.patientId,
            "text": self.text,
            "type": self.type,
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "ClinicalNote":
        try:
            return cls(
                identifier=_req_str(data, "identifier"),
                patientId=_req_str(data, "patientId"),
                text=_req_str(data, "text"),
                type=_req_str(data, "type"),
            )
        except (TypeError, AttributeError) as exc:
            raise SchemaError(f"malformed note: {exc}") from None

    def violations(self) -> list[str]:
        out = []
        for name in ("identifier", "patientId"):
            value = getattr(self, name)
            if not value:
                out.append(f"{name} must be non-empty")
            elif any(ch.isspace() for ch in value):
                out.append(f"{name} must not contain whitespace")
        if len(self.text) == 0:
            out.append("text must be non-empty")
        return out


_ANNOTATION_CORE = {"noteId", "start", "length", "text", "category", "confidence"}


@dataclass(frozen=True)
class TextAnnotation:
    noteId: str
    start: int
    length: int
    text: str
    category: str
    confidence: float | None = None
    attributes: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        if isinstance(self.category, Enum):
            object.__setattr__(self, "category", self.category.value)
        if isinstance(self.attributes, Mapping):
            object.__setattr__(self, "attributes", tuple(sorted(self.attributes.items())))

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.noteId, self.start, self.length)

    @property
    def end(self) -> int:
        return self.start + self.length

    def attr(self, name: str, default: str | None = None) -> str | None:
        return dict(self.attributes).get(name, default)

    def to_json(self, *, category: bool = True, note_id: bool = True) -> dict[str, Any]:
        # attributes travel as flat keys, e.g. "dateFormat"
        out: dict[str, Any] = dict(self.attributes)
        if note_id:
            out["noteId"] = self.noteId
        out["start"] = self.start
        out["length"] = self.length
        out["text"] = self.text
        if category:
            out["category"] = self.category
        if self.confidence is not None:
            out["confidence"] = self.confidence
        return out

    @classmethod
    def from_json(
        cls,
        data: Mapping[str, Any],
        *,
        category: str | Enum | None = None,
        note_id: str | None = None,
    ) -> "TextAnnotation":
        if not isinstance(data, Mapping):
            raise SchemaError("annotation must be a JSON object")
        cat = data.get("category", category_name(category) if category is not None else None)
        if category is not None and cat != category_name(category):
            raise SchemaError(f"category {cat!r} does not match {category_name(category)!r}")
        if cat is None:
            raise SchemaError("annotation category missing")
        nid = data.get("noteId", note_id)
        if not isinstance(nid, str):
            raise SchemaError("noteId must be a string")
        start, length = data.get("start"), data.get("length")
        for name, value in (("start", start), ("length", length)):
            if not isinstance(value, int) or isinstance(value, bool):
                raise SchemaError(f"{name} must be an integer")
        text = data.get("text")
        if not isinstance(text, str):
            raise SchemaError("text must be a string")
        conf = data.get("confidence")
        if conf is not None and (not isinstance(conf, (int, float)) or isinstance(conf, bool)):
            raise SchemaError("confidence must be a number")
        attrs = {}
        for k, v in data.items():
            if k in _ANNOTATION_CORE:
                continue
            if not isinstance(v, str):
                raise SchemaError(f"attribute {k!r} must be a string")
            attrs[k] = v
        return cls(
            noteId=nid,
            start=start,
            length=length,
            text=text,
            category=str(cat),
            confidence=conf,
            attributes=tuple(sorted(attrs.items())),
        )


@dataclass(frozen=True)
class Dataset:
    id: str
    fhirStoreIds: tuple[str, ...] = ()
    annotationStoreIds: tuple[str, ...] = ()

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "fhirStoreIds": list(self.fhirStoreIds),
            "annotationStoreIds": list(self.annotationStoreIds),
        }


@dataclass(frozen=True)
class AnnotationStoreRef:
    datasetId: str
    annotationStoreId: str

    def __post_init__(self) -> None:
        if not self.datasetId or not self.annotationStoreId:
            raise SchemaError("annotation store reference needs both ids")

    def to_json(self) -> dict[str, str]:
        return {"datasetId": self.datasetId, "annotationStoreId": self.annotationStoreId}

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "AnnotationStoreRef":
        return cls(str(data.get("datasetId", "")), str(data.get("annotationStoreId", "")))


def _req_str(data: Mapping[str, Any], key: str) -> str:
    value = data[key] if key in data else None
    if not isinstance(value, str):
        raise SchemaError(f"{key} must be a string")
    return value


# --------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Validation:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def span_violations(ann: TextAnnotation, text_length: int | None = None) -> list[str]:
    """Checks that need at most the note's length, not its text."""
    out = []
    if ann.start < 0:
        out.append("start must be >= 0")
    if ann.length < 1:
        out.append("length must be >= 1")
    elif len(ann.text) != ann.length:
        out.append("text length does not equal length")
    if text_length is not None and ann.start >= 0 and ann.start + max(ann.length, 0) > text_length:
        out.append("span out of bounds")
    if ann.confidence is not None and not (0 <= ann.confidence <= 100):
        out.append("confidence must lie in [0, 100]")
    return out


def validate_annotation(ann: TextAnnotation, note: ClinicalNote) -> Validation:
    out = []
    if ann.noteId != note.identifier:
        out.append(f"wrong note: annotation references {ann.noteId!r}, not {note.identifier!r}")
    out.extend(span_violations(ann, len(note.text)))
    if ann.start >= 0 and ann.length >= 1 and ann.end <= len(note.text):
        if note.text[ann.start : ann.end] != ann.text:
            out.append("text mismatch")
    return Validation(tuple(out))


# --------------------------------------------------------------------------
# canonical JSON


def canonical_json(value: Any) -> str:
    return json.dumps(value, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def canonical_bytes(value: Any) -> bytes:
    return canonical_json(value).encode("utf-8")


# --------------------------------------------------------------------------
# bundles


@dataclass(frozen=True)
class DatasetBundle:
    datasetId: str
    notes: tuple[ClinicalNote, ...]
    gold: Mapping[str, tuple[TextAnnotation, ...]] = field(default_factory=dict)
    noteCount: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "notes", tuple(self.notes))
        object.__setattr__(
            self, "gold", {category_name(k): tuple(v) for k, v in self.gold.items()}
        )
        if self.noteCount is None:
            object.__setattr__(self, "noteCount", len(self.notes))

    @property
    def categories(self) -> list[str]:
        return list(self.gold)

    def manifest(self) -> dict[str, Any]:
        return {"datasetId": self.datasetId, "noteCount": self.noteCount, "categories": self.categories}

    def note_map(self) -> dict[str, ClinicalNote]:
        return {n.identifier: n for n in self.notes}

    def to_json(self) -> dict[str, Any]:
        """Whole bundle as one JSON value; used for canonical comparisons."""
        return {
            "manifest": self.manifest(),
            "notes": [n.to_json() for n in self.notes],
            "gold": {
                TASKS.get(c).list_key: [a.to_json(category=False) for a in anns]
                for c, anns in self.gold.items()
            },
        }

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DatasetBundle):
            return NotImplemented
        return canonical_json(self.to_json()) == canonical_json(other.to_json())

    __hash__ = None  # type: ignore[assignment]


def validate_bundle(bundle: DatasetBundle) -> Validation:
    out: list[str] = []
    if bundle.noteCount != len(bundle.notes):
        out.append(f"manifest noteCount {bundle.noteCount} != {len(bundle.notes)} notes")
    notes: dict[str, ClinicalNote] = {}
    for note in bundle.notes:
        for v in note.violations():
            out.append(f"note {note.identifier!r}: {v}")
        if note.identifier in notes:
            out.append(f"duplicate note identifier {note.identifier!r}")
        notes[note.identifier] = note
    for category, anns in bundle.gold.items():
        if category not in TASKS:
            out.append(f"unknown category {category!r}")
        seen: set[tuple[str, int, int]] = set()
        for ann in anns:
            where = f"{category} {ann.noteId}@{ann.start}+{ann.length}"
            if ann.category != category:
                out.append(f"{where}: category {ann.category!r} filed under {category!r}")
            note = notes.get(ann.noteId)
            if note is None:
                out.append(f"{where}: dangling noteId {ann.noteId!r}")
            else:
                out.extend(f"{where}: {v}" for v in validate_annotation(ann, note).violations)
            if ann.key in seen:
                out.append(f"{where}: duplicate gold annotation")
            seen.add(ann.key)
    return Validation(tuple(out))


class BundleParseError(ValueError):
    def __init__(self, path: Path, message: str, line: int | None = None, column: int | None = None):
        self.path, self.line, self.column = path, line, column
        where = f"{path}" + (f":{line}:{column}" if line is not None else "")
        super().__init__(f"{where}: {message}")


class BundleValidationError(ValueError):
    def __init__(self, violations: Iterable[str]):
        self.violations = tuple(violations)
        head = "; ".join(self.violations[:5])
        more = f" (+{len(self.violations) - 5} more)" if len(self.violations) > 5 else ""
        super().__init__(f"invalid bundle: {head}{more}")


def _load_json(path: Path) -> Any:
    try:
        raw = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise BundleParseError(path, "file missing") from None
    except UnicodeDecodeError as exc:
        raise BundleParseError(path, f"not UTF-8 ({exc.reason} at byte {exc.start})") from None
    try:
        return json.loads(raw)
    except json.JSONDecodeError as exc:
        raise BundleParseError(path, exc.msg, exc.lineno, exc.colno) from None


def read_bundle(path: str | os.PathLike[str], *, validate: bool = True) -> DatasetBundle:
    root = Path(path)
    manifest = _load_json(root / "manifest.json")
    notes_doc = _load_json(root / "notes.json")
    try:
        dataset_id = manifest["datasetId"]
        note_count = manifest["noteCount"]
        categories = list(manifest["categories"])
        notes = [ClinicalNote.from_json(n) for n in notes_doc["notes"]]
    except (KeyError, TypeError, SchemaError) as exc:
        raise BundleParseError(root, f"malformed manifest or notes: {exc}") from None
    gold: dict[str, tuple[TextAnnotation, ...]] = {}
    for category in categories:
        try:
            task = TASKS.get(category)
        except UnknownTaskError:
            raise BundleValidationError([f"unknown category {category!r}"]) from None
        file = root / "gold" / f"{task.stem}.json"
        doc = _load_json(file)
        if not isinstance(doc, dict) or list(doc) != [task.list_key]:
            raise BundleParseError(file, f"expected a single key {task.list_key!r}")
        try:
            gold[task.name] = tuple(TextAnnotation.from_json(a, category=task.name) for a in doc[task.list_key])
        except SchemaError as exc:
            raise BundleParseError(file, str(exc)) from None
    bundle = DatasetBundle(dataset_id, tuple(notes), gold, noteCount=note_count)
    if validate:
        result = validate_bundle(bundle)
        if not result.ok:
            raise BundleValidationError(result.violations)
    return bundle


def write_bundle(bundle: DatasetBundle, path: str | os.PathLike[str]) -> Path:
    root = Path(path)
    (root / "gold").mkdir(parents=True, exist_ok=True)
    (root / "manifest.json").write_bytes(canonical_bytes(bundle.manifest()))
    (root / "notes.json").write_bytes(canonical_bytes({"notes": [n.to_json() for n in bundle.notes]}))
    for category, anns in bundle.gold.items():
        task = TASKS.get(category)
        doc = {task.list_key: [a.to_json(category=False) for a in anns]}
        (root / "gold" / f"{task.stem}.json").write_bytes(canonical_bytes(doc))
    return root
