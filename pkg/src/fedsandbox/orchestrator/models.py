"""Submissions, site topology and leaderboard records."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

from ..metrics import CategoryReport
from ..schema import TASKS, AnnotationStoreRef, SchemaError

DEFAULT_WALL_CLOCK = 7200.0
DEFAULT_PER_NOTE_TIMEOUT = 30.0


class ConfigError(ValueError):
    pass


class SubmissionState(str, Enum):
    RECEIVED = "RECEIVED"
    VALIDATING = "VALIDATING"
    TEST_SCORING = "TEST_SCORING"
    FEDERATED_SCORING = "FEDERATED_SCORING"
    COMPLETE = "COMPLETE"
    FAILED = "FAILED"

    @property
    def terminal(self) -> bool:
        return self in (SubmissionState.COMPLETE, SubmissionState.FAILED)


_NEXT = {
    SubmissionState.RECEIVED: SubmissionState.VALIDATING,
    SubmissionState.VALIDATING: SubmissionState.TEST_SCORING,
    SubmissionState.TEST_SCORING: SubmissionState.FEDERATED_SCORING,
    SubmissionState.FEDERATED_SCORING: SubmissionState.COMPLETE,
}


def check_transition(current: SubmissionState, target: SubmissionState) -> None:
    if current.terminal:
        raise ValueError(f"submission is {current.value}; no further transitions")
    if target is SubmissionState.FAILED or _NEXT[current] is target:
        return
    raise ValueError(f"illegal transition {current.value} -> {target.value}")


class SiteRole(str, Enum):
    TEST = "TEST"
    FEDERATED = "FEDERATED"


@dataclass(frozen=True)
class Budget:
    wallClock: float = DEFAULT_WALL_CLOCK
    perNoteTimeout: float = DEFAULT_PER_NOTE_TIMEOUT

    def __post_init__(self) -> None:
        if self.wallClock <= 0 or self.perNoteTimeout <= 0:
            raise ConfigError("budgets must be positive")


@dataclass(frozen=True)
class SiteConfig:
    siteId: str
    dataNodeEndpoint: str
    datasetId: str
    fhirStoreId: str
    goldRefs: Mapping[str, AnnotationStoreRef]
    role: SiteRole = SiteRole.FEDERATED
    budget: Budget = field(default_factory=Budget)

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "SiteConfig":
        try:
            notes = data["noteStoreRef"]
            gold = {}
            for name, ref in data.get("goldRefs", {}).items():
                if name not in TASKS:
                    raise ConfigError(f"site {data['siteId']}: unknown task {name!r} in goldRefs")
                gold[name] = AnnotationStoreRef.from_json(ref)
            budget = data.get("budget", {})
            return cls(
                siteId=data["siteId"],
                dataNodeEndpoint=data["dataNodeEndpoint"],
                datasetId=notes["datasetId"],
                fhirStoreId=notes["fhirStoreId"],
                goldRefs=gold,
                role=SiteRole(data.get("role", "FEDERATED")),
                budget=Budget(
                    float(budget.get("wallClock", DEFAULT_WALL_CLOCK)),
                    float(budget.get("perNoteTimeout", DEFAULT_PER_NOTE_TIMEOUT)),
                ),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed site config: missing {exc}") from None
        except (SchemaError, ValueError) as exc:
            raise ConfigError(f"malformed site config: {exc}") from None

    def to_json(self) -> dict[str, Any]:
        return {
            "siteId": self.siteId,
            "dataNodeEndpoint": self.dataNodeEndpoint,
            "noteStoreRef": {"datasetId": self.datasetId, "fhirStoreId": self.fhirStoreId},
            "goldRefs": {k: v.to_json() for k, v in self.goldRefs.items()},
            "role": self.role.value,
            "budget": {"wallClock": self.budget.wallClock, "perNoteTimeout": self.budget.perNoteTimeout},
        }


@dataclass(frozen=True)
class LauncherConfig:
    """Resource limits handed to the launcher; enforcement is adapter-specific."""

    memoryMB: int | None = 7168
    cpus: int | None = 4
    isolateNetwork: bool = True
    startupTimeout: float = 30.0


@dataclass(frozen=True)
class OrchestratorConfig:
    stateDir: str
    sites: tuple[SiteConfig, ...]
    launcher: LauncherConfig = field(default_factory=LauncherConfig)
    contractTimeout: float = 30.0
    # ISO timestamp; when set, timestamps come from a stepping clock (reproducible runs)
    fixedClock: str | None = None

    def __post_init__(self) -> None:
        tests = [s for s in self.sites if s.role is SiteRole.TEST]
        if len(tests) != 1:
            raise ConfigError(f"exactly one TEST site required, found {len(tests)}")
        ids = [s.siteId for s in self.sites]
        if len(set(ids)) != len(ids):
            raise ConfigError("site ids must be unique")

    @property
    def test_site(self) -> SiteConfig:
        return next(s for s in self.sites if s.role is SiteRole.TEST)

    @property
    def federated_sites(self) -> list[SiteConfig]:
        return [s for s in self.sites if s.role is SiteRole.FEDERATED]

    @classmethod
    def from_json(cls, data: Mapping[str, Any], base: Path | None = None) -> "OrchestratorConfig":
        if not isinstance(data, Mapping) or "sites" not in data or "stateDir" not in data:
            raise ConfigError("orchestrator config needs 'stateDir' and 'sites'")
        state_dir = Path(data["stateDir"])
        if base is not None and not state_dir.is_absolute():
            state_dir = base / state_dir
        launcher = data.get("launcher", {})
        try:
            lc = LauncherConfig(**launcher)
        except TypeError as exc:
            raise ConfigError(f"launcher: {exc}") from None
        return cls(
            stateDir=str(state_dir),
            sites=tuple(SiteConfig.from_json(s) for s in data["sites"]),
            launcher=lc,
            contractTimeout=float(data.get("contractTimeout", 30.0)),
            fixedClock=data.get("fixedClock"),
        )

    @classmethod
    def load(cls, path: str | os.PathLike[str]) -> "OrchestratorConfig":
        p = Path(path)
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        # SANDBOX_STATE_DIR overrides the file
        if "SANDBOX_STATE_DIR" in os.environ and isinstance(data, dict):
            data["stateDir"] = os.environ["SANDBOX_STATE_DIR"]
        return cls.from_json(data, base=p.parent)

    def to_json(self) -> dict[str, Any]:
        return {
            "stateDir": self.stateDir,
            "sites": [s.to_json() for s in self.sites],
            "launcher": self.launcher.__dict__.copy(),
            "contractTimeout": self.contractTimeout,
            "fixedClock": self.fixedClock,
        }


@dataclass(frozen=True)
class ToolRef:
    """How to obtain a running tool.

    ``kind="command"``: argv with ``{port}``, ``{python}``, ``{site_id}``,
    ``{data_node}`` and ``{dataset_id}`` placeholders, started per stage.
    ``kind="endpoint"``: a tool that is already running at ``url``.
    """

    kind: str
    command: tuple[str, ...] = ()
    url: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "command", tuple(self.command))
        if self.kind == "command" and not self.command:
            raise ConfigError("command tool reference needs a command")
        if self.kind == "endpoint" and not self.url:
            raise ConfigError("endpoint tool reference needs a url")
        if self.kind not in ("command", "endpoint"):
            raise ConfigError(f"unknown tool reference kind {self.kind!r}")

    @classmethod
    def command_ref(cls, *argv: str) -> "ToolRef":
        return cls("command", tuple(argv))

    @classmethod
    def endpoint_ref(cls, url: str) -> "ToolRef":
        return cls("endpoint", url=url)

    def to_json(self) -> dict[str, Any]:
        if self.kind == "command":
            return {"kind": "command", "command": list(self.command)}
        return {"kind": "endpoint", "url": self.url}

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "ToolRef":
        return cls(data.get("kind", ""), tuple(data.get("command", ())), data.get("url"))


@dataclass
class Failure:
    reason: str
    stage: str
    details: list[str] = field(default_factory=list)

    def to_json(self) -> dict[str, Any]:
        return {"reason": self.reason, "failedStage": self.stage, "details": list(self.details)}

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "Failure":
        return cls(data["reason"], data["failedStage"], list(data.get("details", [])))


@dataclass
class Submission:
    id: str
    toolRef: ToolRef
    queue: str
    createdAt: str
    state: SubmissionState = SubmissionState.RECEIVED
    failure: Failure | None = None
    stages: dict[str, dict[str, Any]] = field(default_factory=dict)
    toolMetadata: dict[str, Any] | None = None

    def advance(self, target: SubmissionState) -> None:
        check_transition(self.state, target)
        self.state = target

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "toolRef": self.toolRef.to_json(),
            "queue": self.queue,
            "createdAt": self.createdAt,
            "state": self.state.value,
            "failure": self.failure.to_json() if self.failure else None,
            "stages": self.stages,
            "toolMetadata": self.toolMetadata,
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "Submission":
        return cls(
            id=data["id"],
            toolRef=ToolRef.from_json(data["toolRef"]),
            queue=data["queue"],
            createdAt=data["createdAt"],
            state=SubmissionState(data["state"]),
            failure=Failure.from_json(data["failure"]) if data.get("failure") else None,
            stages=dict(data.get("stages", {})),
            toolMetadata=data.get("toolMetadata"),
        )

    def public_json(self) -> dict[str, Any]:
        """Status view safe to hand to the tool's developer."""
        out = self.to_json()
        out.pop("toolRef")
        return out


@dataclass(frozen=True)
class LeaderboardRecord:
    submissionId: str
    queue: str
    siteReports: Mapping[str, CategoryReport]
    toolMetadata: Mapping[str, Any]
    completedAt: str

    def to_json(self) -> dict[str, Any]:
        return {
            "submissionId": self.submissionId,
            "queue": self.queue,
            "siteReports": {k: v.to_json() for k, v in self.siteReports.items()},
            "toolMetadata": dict(self.toolMetadata),
            "completedAt": self.completedAt,
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "LeaderboardRecord":
        return cls(
            data["submissionId"],
            data["queue"],
            {k: CategoryReport.from_json(v) for k, v in data["siteReports"].items()},
            dict(data["toolMetadata"]),
            data["completedAt"],
        )
