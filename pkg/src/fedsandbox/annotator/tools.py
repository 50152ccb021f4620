"""Built-in annotator tools.

A tool is anything with ``metadata``, a set of ``tasks`` and an
``annotate(task, note)`` method; :func:`create_tool_app` turns it into the
HTTP contract every submitted tool must honour.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Protocol

from .. import __version__
from ..schema import ClinicalNote, DatasetBundle, TextAnnotation, category_name
from .rules import RULES

API_VERSION = "1.2.0"


@dataclass(frozen=True)
class ToolMetadata:
    name: str
    version: str
    description: str
    author: str
    apiVersion: str = API_VERSION

    def to_json(self) -> dict[str, str]:
        return {
            "name": self.name,
            "version": self.version,
            "description": self.description,
            "author": self.author,
            "apiVersion": self.apiVersion,
        }

    @classmethod
    def from_json(cls, data: Mapping[str, object]) -> "ToolMetadata":
        fields = {}
        for key in ("name", "version", "description", "author", "apiVersion"):
            value = data.get(key)
            if not isinstance(value, str):
                raise ValueError(f"tool metadata field {key!r} must be a string")
            fields[key] = value
        return cls(**fields)


class Annotator(Protocol):
    metadata: ToolMetadata
    tasks: frozenset[str]

    def annotate(self, task: str, note: ClinicalNote) -> list[TextAnnotation]: ...


class ReferenceAnnotator:
    metadata = ToolMetadata(
        name="reference-phi-annotator",
        version=__version__,
        description="Rule-based PHI annotator: regular expressions plus bundled lexicons",
        author="fedsandbox",
    )
    tasks = frozenset(RULES)

    def annotate(self, task: str, note: ClinicalNote) -> list[TextAnnotation]:
        return RULES[category_name(task)](note)


class GoldEchoAnnotator:
    """Returns the gold annotations for whichever note it is asked about.

    Only meaningful as a perfect-score fixture.
    """

    metadata = ToolMetadata(
        name="gold-echo",
        version=__version__,
        description="Test fixture that echoes gold annotations",
        author="fedsandbox",
    )

    def __init__(self, gold: Iterable[TextAnnotation]) -> None:
        self._gold: dict[tuple[str, str], list[TextAnnotation]] = defaultdict(list)
        for ann in gold:
            self._gold[(ann.category, ann.noteId)].append(ann)
        self.tasks = frozenset(c for c, _ in self._gold) | frozenset(RULES)

    @classmethod
    def from_bundle(cls, bundle: DatasetBundle) -> "GoldEchoAnnotator":
        return cls(a for anns in bundle.gold.values() for a in anns)

    @classmethod
    def from_data_node(cls, endpoint: str, dataset_id: str) -> "GoldEchoAnnotator":
        from ..datanode.client import DataNodeClient, export_bundle

        with DataNodeClient(endpoint) as client:
            return cls.from_bundle(export_bundle(client, dataset_id))

    def annotate(self, task: str, note: ClinicalNote) -> list[TextAnnotation]:
        return list(self._gold.get((category_name(task), note.identifier), ()))
