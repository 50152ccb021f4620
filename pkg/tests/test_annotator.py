import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedsandbox.annotator import GoldEchoAnnotator, ReferenceAnnotator, ToolClient, tool_contract_check
from fedsandbox.annotator.client import ProtocolViolation, parse_response
from fedsandbox.annotator.service import create_tool_app
from fedsandbox.corpus import CorpusConfig, generate_corpus
from fedsandbox.httpserv import serve
from fedsandbox.orchestrator.launcher import free_port
from fedsandbox.schema import ClinicalNote, validate_annotation
from helpers import FIXTURE_TOOL

REF = ReferenceAnnotator()
CLINIC_NOTE = ClinicalNote("awesome-note", "awesome-patient",
                          "On 12/26/2020, Ms. Chloe Price met with Dr. Prescott in Seattle.", "loinc:LP29684-5")


def note(text, ident="n1"):
    return ClinicalNote(ident, "p1", text, "loinc:LP29684-5")


def found(task, text):
    return [(a.start, a.length, a.text) for a in REF.annotate(task, note(text))]


def test_slash_date_with_format():
    (d,) = [a for a in REF.annotate("DATE", CLINIC_NOTE) if a.text == "12/26/2020"]
    assert (d.start, d.length, d.attr("dateFormat"), d.confidence) == (3, 10, "MM/DD/YYYY", 95.5)


def test_dates():
    assert found("DATE", "no dates here") == []
    # "Seen " is 5 chars; "2020-01-05 and " puts the second date at 5 + 10 + 5 = 20
    assert found("DATE", "Seen 2020-01-05 and 1/5/20.") == [(5, 10, "2020-01-05"), (20, 6, "1/5/20")]
    assert found("DATE", "Admitted December 26, 2020 after 26 Dec 2020.") == [
        (9, 17, "December 26, 2020"), (33, 11, "26 Dec 2020")]
    assert found("DATE", "Diagnosed in 1998, stable.") == [(13, 4, "1998")]
    assert found("DATE", "Room 1998 is free.") == []


def test_date_formats_recorded():
    anns = REF.annotate("DATE", note("12-26-2020 and 2020-12-26 and 1/5/20"))
    assert [a.attr("dateFormat") for a in anns] == ["MM-DD-YYYY", "YYYY-MM-DD", "M/D/YY"]


def test_person_names():
    assert found("PERSON_NAME", CLINIC_NOTE.text) == [(19, 11, "Chloe Price"), (44, 8, "Prescott")]
    assert found("PERSON_NAME", "met with dr. smith") == []
    assert found("PERSON_NAME", "David Smith called.") == [(0, 11, "David Smith")]


def test_id_contact_location():
    assert found("ID", "MRN 0012345") == [(4, 7, "0012345")]
    assert found("ID", "Ref AB-12345 noted") == [(4, 8, "AB-12345")]
    assert found("CONTACT", "call 206-555-0100 or jane@uw.edu") == [(5, 12, "206-555-0100"), (21, 11, "jane@uw.edu")]
    assert found("CONTACT", "Phone (206) 555-0100.") == [(6, 14, "(206) 555-0100")]
    assert found("LOCATION", CLINIC_NOTE.text) == [(56, 7, "Seattle")]
    assert found("LOCATION", "Lives at 42 Lake Washington Boulevard now") == [(9, 28, "42 Lake Washington Boulevard")]


CORPUS = generate_corpus(CorpusConfig(seed=9, noteCount=40))


@pytest.mark.parametrize("task", ["DATE", "PERSON_NAME", "ID", "CONTACT", "LOCATION"])
def test_outputs_valid_and_non_overlapping(task):
    for n in CORPUS.notes:
        anns = REF.annotate(task, n)
        for a in anns:
            assert validate_annotation(a, n).ok
        for prev, nxt in zip(anns, anns[1:]):
            assert prev.end <= nxt.start


@settings(max_examples=150)
@given(st.text(alphabet=st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=120))
def test_reference_never_breaks_contract(text):
    n = note(text)
    for task in ("DATE", "PERSON_NAME", "ID", "CONTACT", "LOCATION"):
        anns = REF.annotate(task, n)
        assert all(validate_annotation(a, n).ok for a in anns)
        assert all(p.end <= q.start for p, q in zip(anns, anns[1:]))


def test_stateless_under_concurrency():
    tasks = [(t, n) for n in CORPUS.notes for t in ("DATE", "PERSON_NAME", "LOCATION")]
    sequential = [REF.annotate(t, n) for t, n in tasks]
    with ThreadPoolExecutor(8) as pool:
        concurrent = list(pool.map(lambda tn: REF.annotate(*tn), reversed(tasks)))
    assert concurrent[::-1] == sequential


def test_gold_echo_returns_gold():
    echo = GoldEchoAnnotator.from_bundle(CORPUS)
    for cat, golds in CORPUS.gold.items():
        for n in CORPUS.notes:
            assert echo.annotate(cat, n) == [g for g in golds if g.noteId == n.identifier]


@pytest.fixture(scope="module")
def reference_tool():
    handle = serve(create_tool_app(REF))
    yield handle
    handle.stop()


def test_http_contract(reference_tool):
    with httpx.Client(trust_env=False) as h:
        root = h.get(reference_tool.url + "/")
        assert root.status_code == 302 and root.headers["location"] == "/api/v1/tool"
        docs = h.get(reference_tool.url + "/api", follow_redirects=True)
        assert docs.status_code == 200 and "text/html" in docs.headers["content-type"]
        body = h.post(reference_tool.url + "/api/v1/textDateAnnotations", json={"note": CLINIC_NOTE.to_json()}).json()
        first = body["textDateAnnotations"][0]
        assert first == {"start": 3, "length": 10, "text": "12/26/2020", "dateFormat": "MM/DD/YYYY", "confidence": 95.5}
        assert h.post(reference_tool.url + "/api/v1/textDateAnnotations", json={"nope": 1}).status_code == 400
    meta = ToolClient(reference_tool.url).metadata()
    assert meta.name == "reference-phi-annotator"


def test_five_endpoints_answer(reference_tool):
    with ToolClient(reference_tool.url) as tc:
        for task in ("DATE", "PERSON_NAME", "ID", "CONTACT", "LOCATION"):
            assert isinstance(tc.annotate(task, CLINIC_NOTE), list)


def test_parse_response_rejects_bad_spans():
    with pytest.raises(ProtocolViolation) as err:
        parse_response("DATE", CLINIC_NOTE, {"textDateAnnotations": [{"start": 60, "length": 10, "text": "x" * 10}]})
    assert "span out of bounds" in str(err.value)
    with pytest.raises(ProtocolViolation):
        parse_response("DATE", CLINIC_NOTE, {"wrong": []})


def test_contract_passes_for_reference(reference_tool):
    report = tool_contract_check(reference_tool.url, ["DATE", "PERSON_NAME", "ID", "CONTACT", "LOCATION"])
    assert report.passed, report.reasons
    assert report.metadata.name == "reference-phi-annotator"


@pytest.fixture
def fixture_tool():
    procs = []

    def start(mode):
        port = free_port()
        proc = subprocess.Popen([sys.executable, FIXTURE_TOOL, "--port", str(port), "--mode", mode],
                                stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
        procs.append(proc)
        url = f"http://127.0.0.1:{port}"
        with ToolClient(url) as tc:
            tc.wait_ready(time.monotonic() + 20)
        return url

    yield start
    for p in procs:
        p.kill()
        p.wait()


def test_contract_flags_random_confidence(fixture_tool):
    report = tool_contract_check(fixture_tool("random-confidence"))
    assert not report.passed
    assert any(r.startswith("non-reproducible") for r in report.reasons)


def test_contract_flags_missing_root_redirect(fixture_tool):
    report = tool_contract_check(fixture_tool("no-root"))
    assert any(r.startswith("root redirect missing") for r in report.reasons)


def test_contract_unreachable_under_isolation():
    report = tool_contract_check(f"http://127.0.0.1:{free_port()}", isolated=True, timeout=2)
    assert report.reasons[0].startswith("tool unreachable under network-isolated launcher")
