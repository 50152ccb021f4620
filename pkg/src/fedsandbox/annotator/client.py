"""Calling a running annotator tool and checking what it returns."""

from __future__ import annotations

import time
from typing import Any

import httpx

from ..schema import TASKS, ClinicalNote, SchemaError, TextAnnotation, validate_annotation
from .tools import ToolMetadata


class ToolError(Exception):
    """Transport-level failure: unreachable, timed out, or non-2xx."""


class ToolTimeout(ToolError):
    pass


class ProtocolViolation(Exception):
    """The tool answered, but the answer breaks the annotation contract."""

    def __init__(self, note_id: str, problems: list[str]):
        super().__init__(f"note {note_id}: " + "; ".join(problems))
        self.note_id = note_id
        self.problems = problems


class ToolClient:
    def __init__(self, endpoint: str, timeout: float = 30.0) -> None:
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self._http = httpx.Client(timeout=timeout, trust_env=False)

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "ToolClient":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()

    def get(self, path: str, follow: bool = False) -> httpx.Response:
        try:
            return self._http.get(self.endpoint + path, follow_redirects=follow)
        except httpx.TimeoutException as exc:
            raise ToolTimeout(f"GET {path} timed out") from exc
        except httpx.HTTPError as exc:
            raise ToolError(f"GET {path}: {type(exc).__name__}") from exc

    def metadata(self) -> ToolMetadata:
        resp = self.get("/api/v1/tool")
        if resp.status_code != 200:
            raise ToolError(f"GET /api/v1/tool returned {resp.status_code}")
        return ToolMetadata.from_json(resp.json())

    def wait_ready(self, deadline: float, interval: float = 0.05) -> None:
        """Poll the metadata resource until it answers or ``deadline`` (monotonic) passes."""
        while True:
            try:
                if self._http.get(self.endpoint + "/api/v1/tool", timeout=1.0).status_code == 200:
                    return
            except httpx.HTTPError:
                pass
            if time.monotonic() >= deadline:
                raise ToolTimeout("tool did not become ready")
            time.sleep(interval)

    def raw_annotate(self, task: str, note: ClinicalNote, timeout: float | None = None) -> Any:
        endpoint = TASKS.get(task).endpoint
        try:
            resp = self._http.post(
                f"{self.endpoint}/api/v1/{endpoint}",
                json={"note": note.to_json()},
                timeout=self.timeout if timeout is None else timeout,
            )
        except httpx.TimeoutException as exc:
            raise ToolTimeout(f"annotation request timed out for note {note.identifier}") from exc
        except httpx.HTTPError as exc:
            raise ToolError(f"{type(exc).__name__} calling {endpoint}") from exc
        if resp.status_code != 200:
            raise ProtocolViolation(note.identifier, [f"HTTP {resp.status_code} from {endpoint}"])
        try:
            return resp.json()
        except ValueError:
            raise ProtocolViolation(note.identifier, ["response is not JSON"]) from None

    def annotate(self, task: str, note: ClinicalNote, timeout: float | None = None) -> list[TextAnnotation]:
        return parse_response(task, note, self.raw_annotate(task, note, timeout))


def parse_response(task: str, note: ClinicalNote, body: Any) -> list[TextAnnotation]:
    """Turn a task response into annotations, raising on any contract breach."""
    key = TASKS.get(task).endpoint
    if not isinstance(body, dict) or not isinstance(body.get(key), list):
        raise ProtocolViolation(note.identifier, [f"response must be an object with list {key!r}"])
    out, problems = [], []
    for i, item in enumerate(body[key]):
        try:
            ann = TextAnnotation.from_json(item, category=TASKS.get(task).name, note_id=note.identifier)
        except SchemaError as exc:
            problems.append(f"item {i}: {exc}")
            continue
        check = validate_annotation(ann, note)
        if not check.ok:
            problems.append(f"item {i} at {ann.start}+{ann.length}: " + ", ".join(check.violations))
            continue
        out.append(ann)
    if problems:
        raise ProtocolViolation(note.identifier, problems)
    return out
