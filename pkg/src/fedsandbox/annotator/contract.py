"""Benchmarking requirements every submitted tool must pass before scoring."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from ..schema import ClinicalNote, PhiCategory, category_name
from .client import ProtocolViolation, ToolClient, ToolError, parse_response
from .tools import ToolMetadata

PROBE_NOTES = (
    ClinicalNote(
        "probe-1",
        "probe-patient",
        "On 12/26/2020, Ms. Chloe Price met with Dr. Prescott in Seattle.",
        "loinc:LP29684-5",
    ),
    ClinicalNote(
        "probe-2",
        "probe-patient",
        "Follow-up with Dr. David Smith on 2021-03-04. MRN 0012345. Call 206-555-0100 or jane@uw.edu.",
        "loinc:LP29684-5",
    ),
    ClinicalNote(
        "probe-3",
        "probe-patient",
        "Patient moved to 42 Lake Washington Boulevard, Boise in March 2019 and is doing well.",
        "loinc:LP29684-5",
    ),
)


@dataclass
class ContractReport:
    reasons: list[str] = field(default_factory=list)
    metadata: ToolMetadata | None = None

    @property
    def passed(self) -> bool:
        return not self.reasons

    def to_json(self) -> dict[str, object]:
        return {
            "passed": self.passed,
            "reasons": list(self.reasons),
            "metadata": self.metadata.to_json() if self.metadata else None,
        }


def tool_contract_check(
    endpoint: str,
    tasks: Iterable[str] = (PhiCategory.DATE,),
    *,
    timeout: float = 30.0,
    isolated: bool = False,
) -> ContractReport:
    """Probe a running tool; every failed requirement is listed.

    ``isolated`` marks a tool started by the network-isolated launcher, in
    which case an unreachable tool is reported as such.
    """
    report = ContractReport()
    with ToolClient(endpoint, timeout=timeout) as client:
        try:
            root = client.get("/")
        except ToolError as exc:
            reason = "tool unreachable under network-isolated launcher" if isolated else "tool unreachable"
            report.reasons.append(f"{reason}: {exc}")
            return report
        location = root.headers.get("location", "")
        if not (300 <= root.status_code < 400 and location.rstrip("/").endswith("/api/v1/tool")):
            report.reasons.append(f"root redirect missing (GET / returned {root.status_code})")

        try:
            docs = client.get("/api", follow=True)
            if docs.status_code != 200 or "html" not in docs.headers.get("content-type", ""):
                report.reasons.append(f"API docs missing (GET /api returned {docs.status_code})")
        except ToolError as exc:
            report.reasons.append(f"API docs missing: {exc}")

        try:
            report.metadata = client.metadata()
        except (ToolError, ValueError) as exc:
            report.reasons.append(f"metadata malformed: {exc}")

        for task in tasks:
            name = category_name(task)
            for note in PROBE_NOTES:
                try:
                    first = client.raw_annotate(name, note)
                    second = client.raw_annotate(name, note)
                    parse_response(name, note, first)
                except ProtocolViolation as exc:
                    report.reasons.append(f"invalid response for {name} on {note.identifier}: {'; '.join(exc.problems[:3])}")
                    continue
                except ToolError as exc:
                    report.reasons.append(f"task {name} failed on {note.identifier}: {exc}")
                    continue
                if first != second:
                    report.reasons.append(f"non-reproducible: {name} output differs between identical requests")
    report.reasons = list(dict.fromkeys(report.reasons))
    return report
