"""HTTP/JSON surface of the data node, mounted under ``/api/v1``."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .. import __version__
from ..httpserv import App, HTTPError, Request, Response, redirect
from .store import DEFAULT_LIMIT, MAX_LIMIT, DataNodeStore, StoreError

BASE = "/api/v1"

_DOCS = """<!doctype html>
<html><head><meta charset="utf-8"><title>Data Node API</title></head>
<body><h1>Data Node API</h1>
<p>Machine-readable description: <a href="{base}/openapi.json">{base}/openapi.json</a></p>
<ul>{rows}</ul></body></html>
"""


@dataclass
class DataNodeConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    data_dir: str | None = None
    fsync: bool = True

    @classmethod
    def load(cls, path: str | os.PathLike[str] | None = None, env: dict[str, str] | None = None) -> "DataNodeConfig":
        """Config file values, then ``SANDBOX_*`` environment overrides."""
        env = os.environ if env is None else env
        values: dict[str, Any] = {}
        if path is not None:
            values = json.loads(Path(path).read_text(encoding="utf-8"))
            if not isinstance(values, dict):
                raise ValueError(f"{path}: config must be a JSON object")
        cfg = cls(
            host=values.get("host", cls.host),
            port=int(values.get("port", cls.port)),
            data_dir=values.get("dataDir", values.get("data_dir")),
            fsync=bool(values.get("fsync", True)),
        )
        if "SANDBOX_HOST" in env:
            cfg.host = env["SANDBOX_HOST"]
        if "SANDBOX_PORT" in env:
            cfg.port = int(env["SANDBOX_PORT"])
        if "SANDBOX_DATA_DIR" in env:
            cfg.data_dir = env["SANDBOX_DATA_DIR"]
        return cfg


def _wrap(fn: Callable[[Request], Response]) -> Callable[[Request], Response]:
    def handler(req: Request) -> Response:
        try:
            return fn(req)
        except StoreError as exc:
            raise HTTPError(exc.status, exc.title, exc.detail) from None

    return handler


def _page_args(req: Request) -> tuple[int, int]:
    return req.int_param("offset", 0, 0), req.int_param("limit", DEFAULT_LIMIT, 1, MAX_LIMIT)


def _id_from(req: Request, query_key: str) -> str:
    if query_key in req.query:
        return req.query[query_key]
    body = req.json() if req.body else {}
    value = body.get("id", body.get(query_key)) if isinstance(body, dict) else None
    if not isinstance(value, str):
        raise HTTPError(400, "Bad Request", f"{query_key} required (query parameter or body 'id')")
    return value


def create_app(store: DataNodeStore) -> App:
    app = App("data-node")
    routes: list[tuple[str, str, str]] = []

    def route(method: str, path: str, summary: str):
        routes.append((method, BASE + path, summary))

        def deco(fn: Callable[[Request], Response]) -> Callable[[Request], Response]:
            return app.route(method, BASE + path)(_wrap(fn))

        return deco

    @app.route("GET", "/")
    def root(req: Request) -> Response:
        return redirect(f"{BASE}/ui")

    @app.route("GET", "/api")
    def api(req: Request) -> Response:
        return redirect(f"{BASE}/ui")

    @route("GET", "/ui", "Human-readable API documentation")
    def ui(req: Request) -> Response:
        rows = "".join(f"<li><code>{m} {p}</code> {s}</li>" for m, p, s in routes)
        return Response(200, _DOCS.format(base=BASE, rows=rows), content_type="text/html")

    @route("GET", "/openapi.json", "API description")
    def openapi(req: Request) -> Response:
        paths: dict[str, dict[str, Any]] = {}
        for m, p, s in routes:
            paths.setdefault(p[len(BASE):], {})[m.lower()] = {"summary": s}
        return Response(200, {
            "openapi": "3.0.3",
            "info": {"title": "Data Node API", "version": __version__},
            "servers": [{"url": BASE}],
            "paths": paths,
        })

    @route("GET", "/service", "Service information")
    def service(req: Request) -> Response:
        return Response(200, {"name": "fedsandbox-data-node", "version": __version__, "apiBasePath": BASE})

    # datasets
    @route("GET", "/datasets", "List datasets")
    def list_datasets(req: Request) -> Response:
        return Response(200, store.list_datasets(*_page_args(req)).to_json())

    @route("POST", "/datasets", "Create a dataset")
    def create_dataset(req: Request) -> Response:
        return Response(201, store.create_dataset(_id_from(req, "datasetId")))

    @route("GET", "/datasets/{ds}", "Get a dataset")
    def get_dataset(req: Request) -> Response:
        return Response(200, store.get_dataset(req.params["ds"]))

    @route("DELETE", "/datasets/{ds}", "Delete a dataset and everything in it")
    def delete_dataset(req: Request) -> Response:
        store.delete_dataset(req.params["ds"])
        return Response(200, {})

    # FHIR stores
    fhir = "/datasets/{ds}/fhirStores"

    @route("GET", fhir, "List FHIR stores")
    def list_fhir(req: Request) -> Response:
        return Response(200, store.list_fhir_stores(req.params["ds"], *_page_args(req)).to_json())

    @route("POST", fhir, "Create a FHIR store")
    def create_fhir(req: Request) -> Response:
        return Response(201, store.create_fhir_store(req.params["ds"], _id_from(req, "fhirStoreId")))

    @route("GET", fhir + "/{fs}", "Get a FHIR store")
    def get_fhir(req: Request) -> Response:
        return Response(200, store.get_fhir_store(req.params["ds"], req.params["fs"]))

    @route("DELETE", fhir + "/{fs}", "Delete a FHIR store")
    def delete_fhir(req: Request) -> Response:
        store.delete_fhir_store(req.params["ds"], req.params["fs"])
        return Response(200, {})

    patient = fhir + "/{fs}/fhir/Patient"

    @route("GET", patient, "List patients")
    def list_patients(req: Request) -> Response:
        p = req.params
        return Response(200, store.list_patients(p["ds"], p["fs"], *_page_args(req)).to_json())

    @route("POST", patient, "Create a patient")
    def create_patient(req: Request) -> Response:
        p = req.params
        return Response(201, store.create_patient(p["ds"], p["fs"], req.json()))

    @route("GET", patient + "/{pid}", "Get a patient")
    def get_patient(req: Request) -> Response:
        p = req.params
        return Response(200, store.get_patient(p["ds"], p["fs"], p["pid"]))

    @route("DELETE", patient + "/{pid}", "Delete a patient")
    def delete_patient(req: Request) -> Response:
        p = req.params
        store.delete_patient(p["ds"], p["fs"], p["pid"])
        return Response(200, {})

    note = fhir + "/{fs}/fhir/Note"

    @route("GET", note, "List clinical notes")
    def list_notes(req: Request) -> Response:
        p = req.params
        return Response(200, store.list_notes(p["ds"], p["fs"], *_page_args(req)).to_json())

    @route("POST", note, "Create a clinical note")
    def create_note(req: Request) -> Response:
        p = req.params
        return Response(201, store.create_note(p["ds"], p["fs"], req.json()))

    @route("GET", note + "/{nid}", "Get a clinical note")
    def get_note(req: Request) -> Response:
        p = req.params
        return Response(200, store.get_note(p["ds"], p["fs"], p["nid"]))

    @route("DELETE", note + "/{nid}", "Delete a clinical note")
    def delete_note(req: Request) -> Response:
        p = req.params
        store.delete_note(p["ds"], p["fs"], p["nid"])
        return Response(200, {})

    # annotation stores
    ann_stores = "/datasets/{ds}/annotationStores"

    @route("GET", ann_stores, "List annotation stores")
    def list_stores(req: Request) -> Response:
        return Response(200, store.list_annotation_stores(req.params["ds"], *_page_args(req)).to_json())

    @route("POST", ann_stores, "Create an annotation store")
    def create_store(req: Request) -> Response:
        return Response(201, store.create_annotation_store(req.params["ds"], _id_from(req, "annotationStoreId")))

    @route("GET", ann_stores + "/{st}", "Get an annotation store")
    def get_store(req: Request) -> Response:
        return Response(200, store.get_annotation_store(req.params["ds"], req.params["st"]))

    @route("DELETE", ann_stores + "/{st}", "Delete an annotation store")
    def delete_store(req: Request) -> Response:
        store.delete_annotation_store(req.params["ds"], req.params["st"])
        return Response(200, {})

    anns = ann_stores + "/{st}/annotations"

    @route("GET", anns, "List the annotations in an annotation store")
    def list_anns(req: Request) -> Response:
        p = req.params
        return Response(200, store.list_annotations(p["ds"], p["st"], *_page_args(req)).to_json())

    @route("POST", anns, "Create an annotation")
    def create_ann(req: Request) -> Response:
        p = req.params
        return Response(201, store.create_annotation(p["ds"], p["st"], req.json()))

    @route("GET", anns + "/{aid}", "Get an annotation")
    def get_ann(req: Request) -> Response:
        p = req.params
        return Response(200, store.get_annotation(p["ds"], p["st"], p["aid"]))

    @route("DELETE", anns + "/{aid}", "Delete an annotation")
    def delete_ann(req: Request) -> Response:
        p = req.params
        store.delete_annotation(p["ds"], p["st"], p["aid"])
        return Response(200, {})

    return app
