"""Shared builders for data-node topologies and tool references."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from fedsandbox.corpus import CorpusConfig, generate_corpus
from fedsandbox.datanode import DataNodeClient, DataNodeStore, ingest_bundle
from fedsandbox.datanode.client import gold_store_id
from fedsandbox.datanode.service import create_app
from fedsandbox.httpserv import ServiceHandle, serve
from fedsandbox.orchestrator import Orchestrator, OrchestratorConfig, ToolRef
from fedsandbox.schema import DatasetBundle

TOOLS = Path(__file__).parent / "tools"
FIXTURE_TOOL = str(TOOLS / "fixture_tool.py")

REFERENCE_CMD = ("{python}", "-m", "fedsandbox.annotator", "--port", "{port}", "--tool", "reference")
GOLD_ECHO_CMD = ("{python}", "-m", "fedsandbox.annotator", "--port", "{port}", "--tool", "gold-echo",
                 "--endpoint", "{data_node}", "--dataset", "{dataset_id}")


def fixture_ref(mode: str, *extra: str) -> ToolRef:
    return ToolRef.command_ref("{python}", FIXTURE_TOOL, "--port", "{port}", "--mode", mode, *extra)


@dataclass
class Site:
    site_id: str
    role: str
    handle: ServiceHandle
    bundle: DatasetBundle

    @property
    def url(self) -> str:
        return self.handle.url

    def config(self, wall_clock: float = 60.0, per_note: float = 30.0) -> dict[str, Any]:
        ds = self.bundle.datasetId
        return {
            "siteId": self.site_id,
            "dataNodeEndpoint": self.url,
            "noteStoreRef": {"datasetId": ds, "fhirStoreId": "fhir"},
            "goldRefs": {c: {"datasetId": ds, "annotationStoreId": gold_store_id(c)} for c in self.bundle.gold},
            "role": self.role,
            "budget": {"wallClock": wall_clock, "perNoteTimeout": per_note},
        }


@dataclass
class Topology:
    sites: list[Site]
    handles: list[ServiceHandle] = field(default_factory=list)

    @property
    def test(self) -> Site:
        return next(s for s in self.sites if s.role == "TEST")

    @property
    def federated(self) -> list[Site]:
        return [s for s in self.sites if s.role == "FEDERATED"]

    def config(self, state_dir: Path, *, test_budget: float = 60.0, per_note: float = 30.0,
               fixed_clock: str | None = "2024-01-01T00:00:00Z", **launcher: Any) -> OrchestratorConfig:
        data = {
            "stateDir": str(state_dir),
            "sites": [s.config(test_budget if s.role == "TEST" else 60.0, per_note) for s in self.sites],
            "fixedClock": fixed_clock,
            "contractTimeout": 10,
        }
        if launcher:
            data["launcher"] = launcher
        return OrchestratorConfig.from_json(data)

    def orchestrator(self, state_dir: Path, **kw: Any) -> Orchestrator:
        return Orchestrator(self.config(state_dir, **kw))

    def clear_logs(self) -> None:
        for s in self.sites:
            s.handle.app.request_log.clear()

    def stop(self) -> None:
        for s in self.sites:
            s.handle.stop()


def start_site(site_id: str, role: str, seed: int, notes: int) -> Site:
    bundle = generate_corpus(CorpusConfig(seed=seed, noteCount=notes, datasetId=site_id))
    handle = serve(create_app(DataNodeStore()))
    with DataNodeClient(handle.url) as client:
        ingest_bundle(client, bundle)
    handle.app.request_log.clear()
    return Site(site_id, role, handle, bundle)


def build_topology(notes: int = 20, seeds: tuple[int, int, int] = (11, 22, 33)) -> Topology:
    roles = [("test-site", "TEST"), ("site-a", "FEDERATED"), ("site-b", "FEDERATED")]
    return Topology([start_site(sid, role, seed, notes) for (sid, role), seed in zip(roles, seeds)])


ACCEPTANCE_LINES: list[str] = []  # filled by test_acceptance, printed by conftest's summary hook
