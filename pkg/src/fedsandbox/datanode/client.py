"""Client for the data node API plus bundle ingest/export on top of it."""

from __future__ import annotations

import logging
from typing import Any, Iterator

import httpx

from ..schema import (
    TASKS,
    AnnotationStoreRef,
    BundleValidationError,
    ClinicalNote,
    DatasetBundle,
    TextAnnotation,
    UnknownTaskError,
    validate_bundle,
)

log = logging.getLogger(__name__)

NOTE_STORE_ID = "fhir"


def gold_store_id(category: str) -> str:
    return f"gold-{TASKS.get(category).stem}"


class DataNodeError(Exception):
    def __init__(self, status: int, title: str, detail: str = ""):
        super().__init__(f"{status} {title}: {detail}")
        self.status, self.title, self.detail = status, title, detail


class SiteUnavailable(DataNodeError):
    def __init__(self, detail: str):
        super().__init__(0, "site unavailable", detail)


class DataNodeClient:
    def __init__(self, endpoint: str, timeout: float = 30.0, client: httpx.Client | None = None) -> None:
        self.endpoint = endpoint.rstrip("/")
        self.base = self.endpoint + "/api/v1"
        self._http = client or httpx.Client(timeout=timeout, trust_env=False)

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "DataNodeClient":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()

    def _call(self, method: str, path: str, **kwargs: Any) -> Any:
        try:
            resp = self._http.request(method, self.base + path, **kwargs)
        except httpx.HTTPError as exc:
            raise SiteUnavailable(f"{type(exc).__name__} contacting {self.endpoint}") from None
        if resp.status_code >= 400:
            try:
                body = resp.json()
            except ValueError:
                body = {}
            if not isinstance(body, dict):
                body = {}
            raise DataNodeError(resp.status_code, body.get("title", resp.reason_phrase), body.get("detail", ""))
        return resp.json() if resp.content else None

    def service_info(self) -> dict[str, Any]:
        return self._call("GET", "/service")

    def _pages(self, path: str, limit: int) -> Iterator[Any]:
        offset = 0
        while True:
            page = self._call("GET", path, params={"offset": offset, "limit": limit})
            yield from page["items"]
            offset += len(page["items"])
            if not page["items"] or offset >= page["totalCount"]:
                return

    # datasets / stores
    def create_dataset(self, ds: str) -> dict[str, Any]:
        return self._call("POST", "/datasets", params={"datasetId": ds})

    def get_dataset(self, ds: str) -> dict[str, Any]:
        return self._call("GET", f"/datasets/{ds}")

    def list_datasets(self, offset: int = 0, limit: int = 100) -> dict[str, Any]:
        return self._call("GET", "/datasets", params={"offset": offset, "limit": limit})

    def delete_dataset(self, ds: str) -> None:
        self._call("DELETE", f"/datasets/{ds}")

    def create_fhir_store(self, ds: str, fs: str) -> dict[str, Any]:
        return self._call("POST", f"/datasets/{ds}/fhirStores", params={"fhirStoreId": fs})

    def list_fhir_stores(self, ds: str) -> list[dict[str, Any]]:
        return list(self._pages(f"/datasets/{ds}/fhirStores", 1000))

    def create_annotation_store(self, ds: str, st: str) -> dict[str, Any]:
        return self._call("POST", f"/datasets/{ds}/annotationStores", params={"annotationStoreId": st})

    def get_annotation_store(self, ref: AnnotationStoreRef) -> dict[str, Any]:
        return self._call("GET", f"/datasets/{ref.datasetId}/annotationStores/{ref.annotationStoreId}")

    def list_annotation_stores(self, ds: str, offset: int = 0, limit: int = 100) -> dict[str, Any]:
        return self._call("GET", f"/datasets/{ds}/annotationStores", params={"offset": offset, "limit": limit})

    # patients / notes
    def create_patient(self, ds: str, fs: str, patient_id: str) -> dict[str, Any]:
        return self._call("POST", f"/datasets/{ds}/fhirStores/{fs}/fhir/Patient", json={"identifier": patient_id})

    def create_note(self, ds: str, fs: str, note: ClinicalNote) -> dict[str, Any]:
        return self._call("POST", f"/datasets/{ds}/fhirStores/{fs}/fhir/Note", json=note.to_json())

    def get_note(self, ds: str, fs: str, note_id: str) -> ClinicalNote:
        return ClinicalNote.from_json(self._call("GET", f"/datasets/{ds}/fhirStores/{fs}/fhir/Note/{note_id}"))

    def list_notes(self, ds: str, fs: str, offset: int = 0, limit: int = 100) -> dict[str, Any]:
        return self._call("GET", f"/datasets/{ds}/fhirStores/{fs}/fhir/Note", params={"offset": offset, "limit": limit})

    def iter_notes(self, ds: str, fs: str, page_size: int = 100) -> Iterator[ClinicalNote]:
        for item in self._pages(f"/datasets/{ds}/fhirStores/{fs}/fhir/Note", page_size):
            yield ClinicalNote.from_json(item)

    # annotations
    def _ann_path(self, ref: AnnotationStoreRef) -> str:
        return f"/datasets/{ref.datasetId}/annotationStores/{ref.annotationStoreId}/annotations"

    def create_annotation(self, ref: AnnotationStoreRef, ann: TextAnnotation) -> dict[str, Any]:
        return self._call("POST", self._ann_path(ref), json=ann.to_json())

    def get_annotation(self, ref: AnnotationStoreRef, annotation_id: str) -> dict[str, Any]:
        return self._call("GET", f"{self._ann_path(ref)}/{annotation_id}")

    def delete_annotation(self, ref: AnnotationStoreRef, annotation_id: str) -> None:
        self._call("DELETE", f"{self._ann_path(ref)}/{annotation_id}")

    def list_annotations(self, ref: AnnotationStoreRef, offset: int = 0, limit: int = 100) -> dict[str, Any]:
        return self._call("GET", self._ann_path(ref), params={"offset": offset, "limit": limit})

    def iter_annotations(self, ref: AnnotationStoreRef, page_size: int = 1000) -> Iterator[TextAnnotation]:
        for item in self._pages(self._ann_path(ref), page_size):
            yield TextAnnotation.from_json(item["annotation"])


def ingest_bundle(client: DataNodeClient, bundle: DatasetBundle, dataset_id: str | None = None) -> dict[str, Any]:
    """Push a validated bundle into a fresh dataset; rolls the dataset back on failure."""
    result = validate_bundle(bundle)
    if not result.ok:
        raise BundleValidationError(result.violations)
    ds = dataset_id or bundle.datasetId
    client.create_dataset(ds)
    try:
        client.create_fhir_store(ds, NOTE_STORE_ID)
        patients = list(dict.fromkeys(n.patientId for n in bundle.notes))
        for pid in patients:
            client.create_patient(ds, NOTE_STORE_ID, pid)
        for note in bundle.notes:
            client.create_note(ds, NOTE_STORE_ID, note)
        counts: dict[str, int] = {}
        for category, anns in bundle.gold.items():
            ref = AnnotationStoreRef(ds, gold_store_id(category))
            client.create_annotation_store(ds, ref.annotationStoreId)
            for ann in anns:
                client.create_annotation(ref, ann)
            counts[category] = len(anns)
    except Exception:
        log.warning("ingest of %s failed; removing partial dataset", ds)
        try:
            client.delete_dataset(ds)
        except DataNodeError:
            pass
        raise
    return {
        "datasetId": ds,
        "notes": len(bundle.notes),
        "patients": len(patients),
        "stores": len(bundle.gold),
        "annotations": counts,
    }


def export_bundle(client: DataNodeClient, dataset_id: str, fhir_store_id: str = NOTE_STORE_ID) -> DatasetBundle:
    notes = list(client.iter_notes(dataset_id, fhir_store_id))
    gold: dict[str, tuple[TextAnnotation, ...]] = {}
    stores = client._pages(f"/datasets/{dataset_id}/annotationStores", 1000)
    for store in stores:
        ref = AnnotationStoreRef(dataset_id, store["id"])
        anns = tuple(client.iter_annotations(ref))
        category = None
        if store["id"].startswith("gold-"):
            try:
                category = TASKS.by_stem(store["id"][5:]).name
            except UnknownTaskError:
                pass
        if category is None and anns:
            category = anns[0].category
        if category is None:
            continue
        gold[category] = anns
    return DatasetBundle(dataset_id, tuple(notes), gold)
