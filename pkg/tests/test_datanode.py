from concurrent.futures import ThreadPoolExecutor

import httpx
import pytest

from fedsandbox.corpus import CorpusConfig, generate_corpus
from fedsandbox.datanode import DataNodeClient, DataNodeStore, export_bundle, ingest_bundle
from fedsandbox.datanode.client import DataNodeError, SiteUnavailable
from fedsandbox.datanode.service import DataNodeConfig, create_app
from fedsandbox.httpserv import serve
from fedsandbox.schema import AnnotationStoreRef, ClinicalNote, TextAnnotation, canonical_json

CLINIC_NOTE = ClinicalNote(
    "awesome-note", "awesome-patient",
    "On 12/26/2020, Ms. Chloe Price met with Dr. Prescott in Seattle.", "loinc:LP29684-5",
)


@pytest.fixture
def client(data_node):
    with DataNodeClient(data_node.url) as c:
        yield c


def seed_note_store(c, ds="ds", note=CLINIC_NOTE):
    c.create_dataset(ds)
    c.create_fhir_store(ds, "fhir")
    c.create_patient(ds, "fhir", note.patientId)
    c.create_note(ds, "fhir", note)


def test_dataset_lifecycle(client):
    client.create_dataset("i2b2-test")
    assert client.get_dataset("i2b2-test")["id"] == "i2b2-test"
    with pytest.raises(DataNodeError) as err:
        client.create_dataset("i2b2-test")
    assert err.value.status == 409
    client.create_annotation_store("i2b2-test", "gold-date")
    client.delete_dataset("i2b2-test")
    assert client.list_datasets()["totalCount"] == 0
    with pytest.raises(DataNodeError) as err:
        client.get_annotation_store(AnnotationStoreRef("i2b2-test", "gold-date"))
    assert err.value.status == 404


def test_store_under_unknown_dataset(client):
    with pytest.raises(DataNodeError) as err:
        client.create_annotation_store("nope", "gold-date")
    assert err.value.status == 404


def test_store_pagination(client):
    client.create_dataset("ds")
    for i in range(5):
        client.create_annotation_store("ds", f"s{i}")
    pages = [client.list_annotation_stores("ds", offset=o, limit=2) for o in (0, 2, 4)]
    assert [len(p["items"]) for p in pages] == [2, 2, 1]
    assert {p["totalCount"] for p in pages} == {5}


def test_note_round_trip_is_byte_identical(client):
    seed_note_store(client)
    assert client.get_note("ds", "fhir", "awesome-note") == CLINIC_NOTE


def test_note_needs_known_patient(client):
    client.create_dataset("ds")
    client.create_fhir_store("ds", "fhir")
    with pytest.raises(DataNodeError) as err:
        client.create_note("ds", "fhir", CLINIC_NOTE)
    assert err.value.status == 400


def test_duplicate_note_conflicts(client):
    seed_note_store(client)
    with pytest.raises(DataNodeError) as err:
        client.create_note("ds", "fhir", CLINIC_NOTE)
    assert err.value.status == 409


def test_annotation_create_get_delete(client):
    text = "x" * 60 + "David Smith" + "."
    seed_note_store(client, note=ClinicalNote("110-01", "p", text, "t"))
    client.create_annotation_store("ds", "gold-person_name")
    ref = AnnotationStoreRef("ds", "gold-person_name")
    created = client.create_annotation(ref, TextAnnotation("110-01", 60, 11, "David Smith", "PERSON_NAME"))
    aid = created["annotationId"]
    assert client.get_annotation(ref, aid)["annotation"]["text"] == "David Smith"
    with pytest.raises(DataNodeError) as err:
        client.create_annotation(ref, TextAnnotation("110-01", 70, 11, "David Smith", "PERSON_NAME"))
    assert err.value.status == 400
    client.delete_annotation(ref, aid)
    with pytest.raises(DataNodeError) as err:
        client.get_annotation(ref, aid)
    assert err.value.status == 404


def test_annotation_status_codes(data_node):
    with DataNodeClient(data_node.url) as c:
        seed_note_store(c)
        c.create_annotation_store("ds", "s")
    base = data_node.url + "/api/v1/datasets/ds/annotationStores/s/annotations"
    body = {"noteId": "awesome-note", "start": 3, "length": 10, "text": "12/26/2020", "category": "DATE"}
    with httpx.Client(trust_env=False) as h:
        r = h.post(base, json=body)
        assert r.status_code == 201
        r = h.get(base, params={"limit": 0})
        assert r.status_code == 400 and set(r.json()) == {"status", "title", "detail"}
        assert h.get(data_node.url + "/api/v1/nowhere").status_code == 404


def test_annotation_pagination(client):
    note = ClinicalNote("n", "p", "a" * 300, "t")
    seed_note_store(client, note=note)
    client.create_annotation_store("ds", "s")
    ref = AnnotationStoreRef("ds", "s")
    for i in range(250):
        client.create_annotation(ref, TextAnnotation("n", i, 1, "a", "ID"))
    sizes = [len(client.list_annotations(ref, offset=o, limit=100)["items"]) for o in (0, 100, 200)]
    assert sizes == [100, 100, 50]
    tail = client.list_annotations(ref, offset=400, limit=100)
    assert tail["items"] == [] and tail["totalCount"] == 250
    ids = [item["annotationId"] for item in client._pages("/datasets/ds/annotationStores/s/annotations", 100)]
    assert ids == sorted(ids) and len(set(ids)) == 250


def test_empty_store_page(client):
    client.create_dataset("ds")
    client.create_annotation_store("ds", "s")
    page = client.list_annotations(AnnotationStoreRef("ds", "s"))
    assert page["items"] == [] and page["totalCount"] == 0


def test_956_notes_make_ten_pages():
    store = DataNodeStore()
    store.create_dataset("uw")
    store.create_fhir_store("uw", "fhir")
    store.create_patient("uw", "fhir", {"identifier": "p"})
    for i in range(956):
        store.create_note("uw", "fhir", {"identifier": f"n{i:04d}", "patientId": "p", "text": "t", "type": "t"})
    pages, offset = 0, 0
    while True:
        page = store.list_notes("uw", "fhir", offset=offset, limit=100)
        if not page.items:
            break
        pages += 1
        offset += len(page.items)
    assert pages == 10 and offset == 956


def test_concurrent_writers(data_node):
    with DataNodeClient(data_node.url) as c:
        seed_note_store(c, note=ClinicalNote("n", "p", "b" * 200, "t"))
        c.create_annotation_store("ds", "s")
    ref = AnnotationStoreRef("ds", "s")

    def writer(w):
        with DataNodeClient(data_node.url) as c:
            return [c.create_annotation(ref, TextAnnotation("n", w * 20 + i % 20, 1, "b", "ID"))["annotationId"]
                    for i in range(100)]

    with ThreadPoolExecutor(8) as pool:
        ids = [i for batch in pool.map(writer, range(8)) for i in batch]
    assert len(ids) == len(set(ids)) == 800
    with DataNodeClient(data_node.url) as c:
        assert c.list_annotations(ref, limit=1)["totalCount"] == 800


def test_restart_recovers_everything(tmp_path):
    bundle = generate_corpus(CorpusConfig(seed=3, noteCount=15, datasetId="durable"))
    store = DataNodeStore.open(tmp_path / "data")
    handle = serve(create_app(store))
    with DataNodeClient(handle.url) as c:
        ingest_bundle(c, bundle)
        c.create_annotation_store("durable", "scratch")
        ref = AnnotationStoreRef("durable", "scratch")
        c.create_annotation(ref, bundle.gold["DATE"][0])
        doomed = c.create_annotation(ref, bundle.gold["DATE"][1])["annotationId"]
        c.delete_annotation(ref, doomed)
        before = canonical_json(export_bundle(c, "durable").to_json())
    handle.stop()
    store.close()

    store = DataNodeStore.open(tmp_path / "data")
    handle = serve(create_app(store))
    try:
        with DataNodeClient(handle.url) as c:
            assert canonical_json(export_bundle(c, "durable").to_json()) == before
            assert c.list_annotations(ref)["totalCount"] == 1
            # the id counter survives too: new ids never collide with old ones
            new = c.create_annotation(ref, bundle.gold["DATE"][2])["annotationId"]
            assert new not in {doomed} and new > doomed
    finally:
        handle.stop()
        store.close()


def test_torn_journal_tail_is_ignored(tmp_path):
    store = DataNodeStore.open(tmp_path)
    store.create_dataset("a")
    store.close()
    with open(tmp_path / "datasets.jsonl", "a") as fh:
        fh.write('{"kind": "datasets", "op": "put", "se')
    store = DataNodeStore.open(tmp_path)
    assert [d["id"] for d in store.list_datasets().items] == ["a"]
    store.close()


def test_datasets_are_isolated(data_node):
    b1 = generate_corpus(CorpusConfig(seed=1, noteCount=6, datasetId="one"))
    b2 = generate_corpus(CorpusConfig(seed=2, noteCount=6, datasetId="two"))
    with DataNodeClient(data_node.url) as c:
        ingest_bundle(c, b1)
        ingest_bundle(c, b2)
        e1, e2 = export_bundle(c, "one"), export_bundle(c, "two")
    assert e1 == b1 and e2 == b2
    texts1 = {n.text for n in e1.notes}
    assert not texts1 & {n.text for n in e2.notes}


def test_ingest_export_identity_and_conflict(data_node):
    bundle = generate_corpus(CorpusConfig(seed=42, noteCount=20, datasetId="s42"))
    with DataNodeClient(data_node.url) as c:
        summary = ingest_bundle(c, bundle)
        assert (summary["notes"], summary["stores"]) == (20, 5)
        assert canonical_json(export_bundle(c, "s42").to_json()) == canonical_json(bundle.to_json())
        with pytest.raises(DataNodeError) as err:
            ingest_bundle(c, bundle)
        assert err.value.status == 409
        assert export_bundle(c, "s42") == bundle


def test_service_info_and_redirect(data_node):
    with httpx.Client(trust_env=False) as h:
        info = h.get(data_node.url + "/api/v1/service").json()
        assert set(info) >= {"name", "version", "apiBasePath"} and info["apiBasePath"] == "/api/v1"
        root = h.get(data_node.url + "/")
        assert root.status_code in (301, 302, 307, 308) and root.headers["location"].endswith("/api/v1/ui")


def test_unreachable_node_is_site_unavailable():
    with DataNodeClient("http://127.0.0.1:9", timeout=1) as c:
        with pytest.raises(SiteUnavailable):
            c.service_info()


def test_config_env_overrides(tmp_path):
    path = tmp_path / "node.json"
    path.write_text('{"port": 9000, "dataDir": "/srv/a"}')
    cfg = DataNodeConfig.load(path, env={"SANDBOX_PORT": "9100"})
    assert (cfg.port, cfg.data_dir) == (9100, "/srv/a")
