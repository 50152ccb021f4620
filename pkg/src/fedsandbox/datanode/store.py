"""Data node state with a pluggable, append-only journal.

The default journal keeps one JSON-lines file per resource kind. Every
record carries a global sequence number so the files can be merged back
into commit order on startup.
"""

from __future__ import annotations

import json
import os
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Protocol

from ..schema import ClinicalNote, TextAnnotation, SchemaError, span_violations, validate_annotation

KINDS = ("dataset", "fhirStore", "patient", "note", "annotationStore", "annotation")
MAX_LIMIT = 1000
DEFAULT_LIMIT = 100


class StoreError(Exception):
    status = 400
    title = "Bad Request"

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class NotFound(StoreError):
    status, title = 404, "Not Found"


class Conflict(StoreError):
    status, title = 409, "Conflict"


class Invalid(StoreError):
    pass


class Journal(Protocol):
    def append(self, record: dict[str, Any]) -> None: ...

    def replay(self) -> Iterator[dict[str, Any]]: ...

    def close(self) -> None: ...


class MemoryJournal:
    def __init__(self) -> None:
        self.records: list[dict[str, Any]] = []

    def append(self, record: dict[str, Any]) -> None:
        self.records.append(record)

    def replay(self) -> Iterator[dict[str, Any]]:
        return iter(list(self.records))

    def close(self) -> None:
        pass


class FileJournal:
    def __init__(self, directory: str | os.PathLike[str], fsync: bool = True) -> None:
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.fsync = fsync
        self._files = {k: open(self.directory / f"{k}.jsonl", "a", encoding="utf-8") for k in KINDS}

    def append(self, record: dict[str, Any]) -> None:
        fh = self._files[record["kind"]]
        fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
        fh.flush()
        if self.fsync:
            os.fsync(fh.fileno())

    def replay(self) -> Iterator[dict[str, Any]]:
        records = []
        for kind in KINDS:
            path = self.directory / f"{kind}.jsonl"
            if not path.exists():
                continue
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    try:
                        records.append(json.loads(line))
                    except json.JSONDecodeError:
                        # torn tail from a crash mid-append
                        continue
        records.sort(key=lambda r: r["seq"])
        return iter(records)

    def close(self) -> None:
        for fh in self._files.values():
            fh.close()


class RWLock:
    """Many readers or one writer."""

    def __init__(self) -> None:
        self._cond = threading.Condition()
        self._readers = 0
        self._writing = False

    @contextmanager
    def read(self) -> Iterator[None]:
        with self._cond:
            while self._writing:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                if not self._readers:
                    self._cond.notify_all()

    @contextmanager
    def write(self) -> Iterator[None]:
        with self._cond:
            while self._writing or self._readers:
                self._cond.wait()
            self._writing = True
        try:
            yield
        finally:
            with self._cond:
                self._writing = False
                self._cond.notify_all()


@dataclass
class _FhirStore:
    patients: dict[str, dict[str, Any]] = field(default_factory=dict)
    notes: dict[str, dict[str, Any]] = field(default_factory=dict)


@dataclass
class _AnnotationStore:
    next_id: int = 1
    annotations: dict[str, dict[str, Any]] = field(default_factory=dict)


@dataclass
class _Dataset:
    fhir: dict[str, _FhirStore] = field(default_factory=dict)
    ann: dict[str, _AnnotationStore] = field(default_factory=dict)


@dataclass(frozen=True)
class Page:
    items: list[Any]
    offset: int
    limit: int
    totalCount: int

    def to_json(self) -> dict[str, Any]:
        return {"items": self.items, "offset": self.offset, "limit": self.limit, "totalCount": self.totalCount}


def paginate(items: list[Any], offset: int = 0, limit: int = DEFAULT_LIMIT) -> Page:
    if offset < 0:
        raise Invalid("offset must be >= 0")
    if not 1 <= limit <= MAX_LIMIT:
        raise Invalid(f"limit must be in 1..{MAX_LIMIT}")
    return Page(items[offset : offset + limit], offset, limit, len(items))


def _check_id(value: Any, what: str) -> str:
    if not isinstance(value, str) or not value or any(c.isspace() or c == "/" for c in value):
        raise Invalid(f"{what} must be a non-empty string without whitespace or '/'")
    return value


class DataNodeStore:
    def __init__(self, journal: Journal | None = None) -> None:
        self.journal: Journal = journal if journal is not None else MemoryJournal()
        self._lock = RWLock()
        self._seq = 0
        self._datasets: dict[str, _Dataset] = {}
        for record in self.journal.replay():
            self._apply(record)
            self._seq = max(self._seq, record["seq"])

    @classmethod
    def open(cls, data_dir: str | os.PathLike[str] | None, fsync: bool = True) -> "DataNodeStore":
        return cls(FileJournal(data_dir, fsync) if data_dir else MemoryJournal())

    def close(self) -> None:
        self.journal.close()

    # -- journal ----------------------------------------------------------

    def _commit(self, op: str, kind: str, key: list[str], value: Any = None) -> None:
        self._seq += 1
        record = {"seq": self._seq, "op": op, "kind": kind, "key": key}
        if value is not None:
            record["value"] = value
        self.journal.append(record)
        self._apply(record)

    def _apply(self, r: dict[str, Any]) -> None:
        op, kind, key = r["op"], r["kind"], r["key"]
        put = op == "put"
        if kind == "dataset":
            if put:
                self._datasets[key[0]] = _Dataset()
            else:
                self._datasets.pop(key[0], None)
            return
        ds = self._datasets[key[0]]
        if kind == "fhirStore":
            if put:
                ds.fhir[key[1]] = _FhirStore()
            else:
                ds.fhir.pop(key[1], None)
        elif kind == "annotationStore":
            if put:
                ds.ann[key[1]] = _AnnotationStore()
            else:
                ds.ann.pop(key[1], None)
        elif kind == "patient":
            target = ds.fhir[key[1]].patients
            if put:
                target[key[2]] = r["value"]
            else:
                target.pop(key[2], None)
        elif kind == "note":
            target = ds.fhir[key[1]].notes
            if put:
                target[key[2]] = r["value"]
            else:
                target.pop(key[2], None)
        elif kind == "annotation":
            store = ds.ann[key[1]]
            if put:
                store.annotations[key[2]] = r["value"]
                store.next_id = max(store.next_id, int(key[2]) + 1)
            else:
                store.annotations.pop(key[2], None)

    # -- lookups (caller holds a lock) -----------------------------------

    def _dataset(self, ds: str) -> _Dataset:
        try:
            return self._datasets[ds]
        except KeyError:
            raise NotFound(f"dataset {ds!r} not found") from None

    def _fhir(self, ds: str, fs: str) -> _FhirStore:
        try:
            return self._dataset(ds).fhir[fs]
        except KeyError:
            raise NotFound(f"FHIR store {ds}/{fs} not found") from None

    def _annstore(self, ds: str, st: str) -> _AnnotationStore:
        try:
            return self._dataset(ds).ann[st]
        except KeyError:
            raise NotFound(f"annotation store {ds}/{st} not found") from None

    # -- datasets ---------------------------------------------------------

    def _dataset_json(self, ds: str) -> dict[str, Any]:
        d = self._datasets[ds]
        return {"id": ds, "fhirStoreIds": list(d.fhir), "annotationStoreIds": list(d.ann)}

    def create_dataset(self, ds: str) -> dict[str, Any]:
        _check_id(ds, "datasetId")
        with self._lock.write():
            if ds in self._datasets:
                raise Conflict(f"dataset {ds!r} already exists")
            self._commit("put", "dataset", [ds])
            return self._dataset_json(ds)

    def get_dataset(self, ds: str) -> dict[str, Any]:
        with self._lock.read():
            self._dataset(ds)
            return self._dataset_json(ds)

    def list_datasets(self, offset: int = 0, limit: int = DEFAULT_LIMIT) -> Page:
        with self._lock.read():
            return paginate([self._dataset_json(d) for d in self._datasets], offset, limit)

    def delete_dataset(self, ds: str) -> None:
        with self._lock.write():
            d = self._dataset(ds)
            for fs in list(d.fhir):
                self._delete_fhir_store(ds, fs)
            for st in list(d.ann):
                self._delete_annotation_store(ds, st)
            self._commit("del", "dataset", [ds])

    # -- FHIR stores, patients, notes ------------------------------------

    def create_fhir_store(self, ds: str, fs: str) -> dict[str, Any]:
        _check_id(fs, "fhirStoreId")
        with self._lock.write():
            if fs in self._dataset(ds).fhir:
                raise Conflict(f"FHIR store {ds}/{fs} already exists")
            self._commit("put", "fhirStore", [ds, fs])
            return {"id": fs, "datasetId": ds}

    def get_fhir_store(self, ds: str, fs: str) -> dict[str, Any]:
        with self._lock.read():
            self._fhir(ds, fs)
            return {"id": fs, "datasetId": ds}

    def list_fhir_stores(self, ds: str, offset: int = 0, limit: int = DEFAULT_LIMIT) -> Page:
        with self._lock.read():
            return paginate([{"id": f, "datasetId": ds} for f in self._dataset(ds).fhir], offset, limit)

    def _delete_fhir_store(self, ds: str, fs: str) -> None:
        store = self._fhir(ds, fs)
        for nid in list(store.notes):
            self._commit("del", "note", [ds, fs, nid])
        for pid in list(store.patients):
            self._commit("del", "patient", [ds, fs, pid])
        self._commit("del", "fhirStore", [ds, fs])

    def delete_fhir_store(self, ds: str, fs: str) -> None:
        with self._lock.write():
            self._delete_fhir_store(ds, fs)

    def create_patient(self, ds: str, fs: str, body: Any) -> dict[str, Any]:
        if not isinstance(body, dict):
            raise Invalid("patient must be a JSON object")
        pid = _check_id(body.get("identifier"), "identifier")
        record = {"identifier": pid}
        with self._lock.write():
            store = self._fhir(ds, fs)
            if pid in store.patients:
                raise Conflict(f"patient {pid!r} already exists")
            self._commit("put", "patient", [ds, fs, pid], record)
            return record

    def get_patient(self, ds: str, fs: str, pid: str) -> dict[str, Any]:
        with self._lock.read():
            try:
                return self._fhir(ds, fs).patients[pid]
            except KeyError:
                raise NotFound(f"patient {pid!r} not found") from None

    def list_patients(self, ds: str, fs: str, offset: int = 0, limit: int = DEFAULT_LIMIT) -> Page:
        with self._lock.read():
            return paginate(list(self._fhir(ds, fs).patients.values()), offset, limit)

    def delete_patient(self, ds: str, fs: str, pid: str) -> None:
        with self._lock.write():
            store = self._fhir(ds, fs)
            if pid not in store.patients:
                raise NotFound(f"patient {pid!r} not found")
            if any(n["patientId"] == pid for n in store.notes.values()):
                raise Conflict(f"patient {pid!r} still has notes")
            self._commit("del", "patient", [ds, fs, pid])

    def create_note(self, ds: str, fs: str, body: Any) -> dict[str, Any]:
        try:
            note = ClinicalNote.from_json(body if isinstance(body, dict) else {})
        except SchemaError as exc:
            raise Invalid(str(exc)) from None
        problems = note.violations()
        if problems:
            raise Invalid("; ".join(problems))
        record = note.to_json()
        with self._lock.write():
            store = self._fhir(ds, fs)
            if note.patientId not in store.patients:
                raise Invalid(f"patient {note.patientId!r} is not stored")
            if note.identifier in store.notes:
                raise Conflict(f"note {note.identifier!r} already exists")
            self._commit("put", "note", [ds, fs, note.identifier], record)
            return record

    def get_note(self, ds: str, fs: str, nid: str) -> dict[str, Any]:
        with self._lock.read():
            try:
                return self._fhir(ds, fs).notes[nid]
            except KeyError:
                raise NotFound(f"note {nid!r} not found") from None

    def list_notes(self, ds: str, fs: str, offset: int = 0, limit: int = DEFAULT_LIMIT) -> Page:
        with self._lock.read():
            return paginate(list(self._fhir(ds, fs).notes.values()), offset, limit)

    def delete_note(self, ds: str, fs: str, nid: str) -> None:
        with self._lock.write():
            if nid not in self._fhir(ds, fs).notes:
                raise NotFound(f"note {nid!r} not found")
            self._commit("del", "note", [ds, fs, nid])

    # -- annotation stores and annotations -------------------------------

    def create_annotation_store(self, ds: str, st: str) -> dict[str, Any]:
        _check_id(st, "annotationStoreId")
        with self._lock.write():
            if st in self._dataset(ds).ann:
                raise Conflict(f"annotation store {ds}/{st} already exists")
            self._commit("put", "annotationStore", [ds, st])
            return {"id": st, "datasetId": ds}

    def get_annotation_store(self, ds: str, st: str) -> dict[str, Any]:
        with self._lock.read():
            self._annstore(ds, st)
            return {"id": st, "datasetId": ds}

    def list_annotation_stores(self, ds: str, offset: int = 0, limit: int = DEFAULT_LIMIT) -> Page:
        with self._lock.read():
            return paginate([{"id": s, "datasetId": ds} for s in self._dataset(ds).ann], offset, limit)

    def _delete_annotation_store(self, ds: str, st: str) -> None:
        store = self._annstore(ds, st)
        for aid in list(store.annotations):
            self._commit("del", "annotation", [ds, st, aid])
        self._commit("del", "annotationStore", [ds, st])

    def delete_annotation_store(self, ds: str, st: str) -> None:
        with self._lock.write():
            self._delete_annotation_store(ds, st)

    def _resident_note(self, ds: str, note_id: str) -> ClinicalNote | None:
        for fs in self._datasets[ds].fhir.values():
            if note_id in fs.notes:
                return ClinicalNote.from_json(fs.notes[note_id])
        return None

    def create_annotation(self, ds: str, st: str, body: Any) -> dict[str, Any]:
        try:
            ann = TextAnnotation.from_json(body if isinstance(body, dict) else {})
        except SchemaError as exc:
            raise Invalid(str(exc)) from None
        record = ann.to_json()
        with self._lock.write():
            store = self._annstore(ds, st)
            note = self._resident_note(ds, ann.noteId)
            problems = validate_annotation(ann, note).violations if note else tuple(span_violations(ann))
            if problems:
                raise Invalid("; ".join(problems))
            aid = f"{store.next_id:08d}"
            self._commit("put", "annotation", [ds, st, aid], record)
            return {"annotationId": aid, "annotation": record}

    def get_annotation(self, ds: str, st: str, aid: str) -> dict[str, Any]:
        with self._lock.read():
            try:
                return {"annotationId": aid, "annotation": self._annstore(ds, st).annotations[aid]}
            except KeyError:
                raise NotFound(f"annotation {aid!r} not found") from None

    def list_annotations(self, ds: str, st: str, offset: int = 0, limit: int = DEFAULT_LIMIT) -> Page:
        with self._lock.read():
            anns = self._annstore(ds, st).annotations
            ids = paginate(sorted(anns), offset, limit)
            items = [{"annotationId": aid, "annotation": anns[aid]} for aid in ids.items]
        return Page(items, ids.offset, ids.limit, ids.totalCount)

    def delete_annotation(self, ds: str, st: str, aid: str) -> None:
        with self._lock.write():
            if aid not in self._annstore(ds, st).annotations:
                raise NotFound(f"annotation {aid!r} not found")
            self._commit("del", "annotation", [ds, st, aid])
