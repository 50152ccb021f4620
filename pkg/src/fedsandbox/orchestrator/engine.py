"""The two-stage evaluation: gate on the TEST site, then fan out to FEDERATED sites.

Only aggregate reports cross a FEDERATED site boundary. Tool logs, error
spans and per-note problems from those sites stay inside :meth:`run_stage`;
what leaves it is a status, a reason, and counts.
"""

from __future__ import annotations

import fcntl
import json
import logging
import math
import threading
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Any, Callable, Iterable

from ..annotator.client import ProtocolViolation, ToolClient, ToolError, ToolTimeout
from ..annotator.contract import tool_contract_check
from ..datanode.client import DataNodeClient, DataNodeError
from ..datanode.store import Page, paginate
from ..metrics import CategoryReport, evaluate_category, false_negatives, false_positives
from ..schema import TASKS, ClinicalNote, TextAnnotation, UnknownTaskError
from .launcher import EndpointLauncher, LaunchContext, LaunchError, Launcher, SubprocessLauncher, ToolHandle
from .models import (
    Failure,
    LeaderboardRecord,
    OrchestratorConfig,
    SiteConfig,
    SiteRole,
    Submission,
    SubmissionState,
    ToolRef,
)
from .state import StateStore

log = logging.getLogger(__name__)

MAX_REPORTED_VIOLATIONS = 5


class SubmissionRejected(ValueError):
    pass


class UnknownSubmission(LookupError):
    pass


class RunnerBusy(RuntimeError):
    pass


class PolicyError(PermissionError):
    """The request would move federated-site detail across the site boundary."""


class StageFailed(Exception):
    def __init__(self, reason: str, details: Iterable[str] = ()):
        super().__init__(reason)
        self.reason = reason
        self.details = list(details)
        self.logs = ""


Clock = Callable[[], datetime]


def utc_now() -> datetime:
    return datetime.now(timezone.utc)


class SteppingClock:
    """Deterministic clock: ``start``, then ``start + step``, and so on."""

    def __init__(self, start: datetime | str = "2024-01-01T00:00:00+00:00", step: float = 1.0) -> None:
        if isinstance(start, str):
            start = datetime.fromisoformat(start.replace("Z", "+00:00"))
        self._next = start if start.tzinfo else start.replace(tzinfo=timezone.utc)
        self._step = timedelta(seconds=step)
        self._lock = threading.Lock()

    def __call__(self) -> datetime:
        with self._lock:
            now, self._next = self._next, self._next + self._step
            return now


def timestamp(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).isoformat(timespec="milliseconds").replace("+00:00", "Z")


@dataclass
class AnnotationRun:
    predictions: list[TextAnnotation] = field(default_factory=list)
    violations: list[ProtocolViolation] = field(default_factory=list)
    notes: int = 0


def annotate_notes(
    tool: ToolClient,
    task: str,
    notes: Iterable[ClinicalNote],
    *,
    per_note_timeout: float,
    deadline: float = math.inf,
    max_violations: int = MAX_REPORTED_VIOLATIONS,
) -> AnnotationRun:
    """Call the tool once per note, stopping after ``max_violations`` bad answers.

    Raises :class:`StageFailed` ("budget exceeded") when a call would run
    past ``deadline`` (a ``time.monotonic`` value).
    """
    run = AnnotationRun()
    for note in notes:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise StageFailed("budget exceeded")
        try:
            run.predictions.extend(tool.annotate(task, note, timeout=min(per_note_timeout, remaining)))
        except ToolTimeout:
            raise StageFailed("budget exceeded") from None
        except ProtocolViolation as exc:
            run.violations.append(exc)
            if len(run.violations) >= max_violations:
                break
        run.notes += 1
    return run


def _wait_ready(handle: ToolHandle, ready_by: float, budget_deadline: float) -> None:
    with ToolClient(handle.endpoint, timeout=1.0) as probe:
        while True:
            try:
                if probe.get("/api/v1/tool").status_code == 200:
                    return
            except ToolError:
                pass
            if not handle.alive():
                raise StageFailed("tool failed to start", ["process exited before answering"])
            now = time.monotonic()
            if now >= budget_deadline:
                raise StageFailed("budget exceeded", ["tool not ready within the wall-clock budget"])
            if now >= ready_by:
                raise StageFailed("tool failed to start", ["tool did not answer before the startup timeout"])
            time.sleep(0.05)


def _exited(handle: ToolHandle, grace: float = 1.0) -> bool:
    """A dropped connection often lands just before the process is reapable."""
    until = time.monotonic() + grace
    while handle.alive():
        if time.monotonic() >= until:
            return False
        time.sleep(0.05)
    return True


@dataclass
class StageOutcome:
    report: CategoryReport
    gold: list[TextAnnotation]
    predictions: list[TextAnnotation]
    notes: int
    logs: str


class Orchestrator:
    """Thread-safe core; durable state lives in ``config.stateDir``."""

    def __init__(
        self,
        config: OrchestratorConfig,
        *,
        clock: Clock | None = None,
        launchers: dict[str, Launcher] | None = None,
    ) -> None:
        self.config = config
        if clock is None:
            clock = SteppingClock(config.fixedClock) if config.fixedClock else utc_now
        self.clock = clock
        self.state = StateStore(config.stateDir)
        self.launchers: dict[str, Launcher] = launchers or {
            "command": SubprocessLauncher(config.launcher),
            "endpoint": EndpointLauncher(),
        }
        self._lock = threading.RLock()
        self._running: set[str] = set()
        self._runner_lock: Any = None

    # --- submissions -------------------------------------------------

    def submit(self, tool_ref: ToolRef, queue: str) -> str:
        try:
            task = TASKS.get(getattr(queue, "value", queue))
        except UnknownTaskError:
            raise SubmissionRejected(f"unknown queue {queue!r}; known: {', '.join(TASKS.names())}") from None
        with self._lock:
            sub = Submission(self.state.next_id(), tool_ref, task.name, timestamp(self.clock()))
            self.state.save_submission(sub)
        log.info("submitted %s to %s", sub.id, sub.queue)
        return sub.id

    def get(self, sub_id: str) -> Submission:
        sub = self.state.load_submission(sub_id)
        if sub is None:
            raise UnknownSubmission(sub_id)
        return sub

    def recover(self) -> list[str]:
        """Bring submissions interrupted by a crash back to a runnable state.

        A submission whose record was already published only missed its
        final state write; anything else restarts from RECEIVED. Claims the
        state directory's runner lock first, so a live runner elsewhere is
        never mistaken for a crashed one.
        """
        touched = []
        with self._lock:
            self.claim_runner()
            for sub in self.state.submissions():
                if sub.state.terminal or sub.state is SubmissionState.RECEIVED:
                    continue
                if sub.state is SubmissionState.FEDERATED_SCORING and self.state.has_record(sub.id):
                    sub.state = SubmissionState.COMPLETE
                else:
                    sub.state = SubmissionState.RECEIVED
                    sub.stages = {}
                    sub.failure = None
                    self.state.clear_diagnostics(sub.id)
                self.state.save_submission(sub)
                touched.append(sub.id)
        return touched

    def claim_runner(self) -> None:
        if self._runner_lock is not None:
            return
        fh = open(self.state.root / "runner.lock", "a+")
        try:
            fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError:
            fh.close()
            raise RunnerBusy(f"another orchestrator is running on {self.state.root}") from None
        self._runner_lock = fh

    def release_runner(self) -> None:
        if self._runner_lock is not None:
            self._runner_lock.close()
            self._runner_lock = None

    def _save(self, sub: Submission) -> None:
        with self._lock:
            self.state.save_submission(sub)

    def _advance(self, sub: Submission, target: SubmissionState) -> None:
        sub.advance(target)
        self._save(sub)

    def _fail(self, sub: Submission, stage: SubmissionState, reason: str, details: list[str]) -> Submission:
        sub.failure = Failure(reason, stage.value, details)
        sub.advance(SubmissionState.FAILED)
        self._save(sub)
        log.info("%s failed at %s: %s", sub.id, stage.value, reason)
        return sub

    # --- stages ------------------------------------------------------

    def _launcher(self, ref: ToolRef) -> Launcher:
        try:
            return self.launchers[ref.kind]
        except KeyError:
            raise StageFailed("tool failed to start", [f"no launcher for {ref.kind!r} tools"]) from None

    def _context(self, site: SiteConfig) -> LaunchContext:
        return LaunchContext(site.siteId, site.dataNodeEndpoint, site.datasetId)

    def _start_tool(self, ref: ToolRef, site: SiteConfig, budget_deadline: float) -> ToolHandle:
        launcher = self._launcher(ref)
        try:
            handle = launcher.launch(ref, self._context(site))
        except LaunchError as exc:
            raise StageFailed("tool failed to start", [str(exc)]) from None
        try:
            ready_by = time.monotonic() + self.config.launcher.startupTimeout
            _wait_ready(handle, ready_by, budget_deadline)
        except BaseException:
            handle.stop()
            raise
        return handle

    def validate(self, sub: Submission):
        """Contract check with the tool launched in the public TEST context."""
        launcher = self._launcher(sub.toolRef)
        handle = self._start_tool(sub.toolRef, self.config.test_site, math.inf)
        try:
            return tool_contract_check(
                handle.endpoint, (sub.queue,), timeout=self.config.contractTimeout, isolated=launcher.isolated
            )
        finally:
            handle.stop()

    def run_stage(self, site: SiteConfig, sub: Submission) -> StageOutcome:
        """Score ``sub`` on one site; raises :class:`StageFailed`.

        On a FEDERATED site the failure details carry counts only.
        """
        deadline = time.monotonic() + site.budget.wallClock
        federated = site.role is SiteRole.FEDERATED
        gold_ref = site.goldRefs.get(sub.queue)
        if gold_ref is None:
            # the site holds no gold for this category: reported as noData, tool not run
            return StageOutcome(evaluate_category([], [], sub.queue), [], [], 0, "")

        client = DataNodeClient(site.dataNodeEndpoint, timeout=min(10.0, site.budget.wallClock))
        try:
            try:
                client.service_info()
            except DataNodeError as exc:
                raise StageFailed("site unavailable", [] if federated else [str(exc)]) from None
            handle = self._start_tool(sub.toolRef, site, deadline)
            logs = ""
            try:
                try:
                    notes = client.iter_notes(site.datasetId, site.fhirStoreId)
                    with ToolClient(handle.endpoint, timeout=site.budget.perNoteTimeout) as tool:
                        run = annotate_notes(
                            tool, sub.queue, notes, per_note_timeout=site.budget.perNoteTimeout, deadline=deadline
                        )
                    if run.violations:
                        if federated:
                            details = [f"{len(run.violations)} notes with protocol violations"]
                        else:
                            details = [str(v) for v in run.violations]
                        raise StageFailed("protocol violation", details)
                    gold = [a for a in client.iter_annotations(gold_ref) if a.category == sub.queue]
                except ToolError as exc:
                    reason = "tool crashed" if _exited(handle) else "tool error"
                    raise StageFailed(reason, [] if federated else [str(exc)]) from None
                except DataNodeError as exc:
                    raise StageFailed("site unavailable", [] if federated else [str(exc)]) from None
                if time.monotonic() > deadline:
                    raise StageFailed("budget exceeded")
                logs = handle.logs()
            except StageFailed as exc:
                exc.logs = handle.logs()
                raise
            finally:
                handle.stop()
        finally:
            client.close()
        report = evaluate_category(gold, run.predictions, sub.queue)
        return StageOutcome(report, gold, run.predictions, run.notes, logs)

    def _stage_summary(self, site: SiteConfig, outcome: StageOutcome | None, failure: StageFailed | None) -> dict[str, Any]:
        entry: dict[str, Any] = {"role": site.role.value}
        if failure is not None:
            entry.update(status="FAILED", reason=failure.reason)
            entry["details"] = failure.details  # run_stage already reduced FEDERATED details to counts
        else:
            entry.update(status="COMPLETE", notes=outcome.notes, report=outcome.report.to_json())
        return entry

    def run_submission(self, sub_id: str) -> Submission:
        with self._lock:
            self.claim_runner()
            if sub_id in self._running:
                raise SubmissionRejected(f"{sub_id} is already running")
            sub = self.get(sub_id)
            if sub.state is not SubmissionState.RECEIVED:
                if sub.state.terminal:
                    return sub
                raise SubmissionRejected(f"{sub_id} is {sub.state.value}; restart recovery first")
            self._running.add(sub_id)
        try:
            return self._execute(sub)
        finally:
            with self._lock:
                self._running.discard(sub_id)

    def _execute(self, sub: Submission) -> Submission:
        self._advance(sub, SubmissionState.VALIDATING)
        try:
            contract = self.validate(sub)
        except StageFailed as exc:
            return self._fail(sub, SubmissionState.VALIDATING, "contract", [exc.reason, *exc.details])
        if not contract.passed:
            return self._fail(sub, SubmissionState.VALIDATING, "contract", contract.reasons)
        sub.toolMetadata = contract.metadata.to_json()

        self._advance(sub, SubmissionState.TEST_SCORING)
        test = self.config.test_site
        try:
            outcome = self.run_stage(test, sub)
        except StageFailed as exc:
            self.state.write_diagnostic(sub.id, "test.log", exc.logs)
            sub.stages[test.siteId] = self._stage_summary(test, None, exc)
            return self._fail(sub, SubmissionState.TEST_SCORING, exc.reason, exc.details)
        self.state.write_diagnostic(sub.id, "test.log", outcome.logs)
        self.state.write_diagnostic(sub.id, "test-errors.json", {
            "falsePositives": [a.to_json() for a in false_positives(outcome.gold, outcome.predictions)],
            "falseNegatives": [a.to_json() for a in false_negatives(outcome.gold, outcome.predictions)],
        })
        sub.stages[test.siteId] = self._stage_summary(test, outcome, None)
        reports = {test.siteId: outcome.report}

        self._advance(sub, SubmissionState.FEDERATED_SCORING)
        sites = self.config.federated_sites
        results: dict[str, StageOutcome | StageFailed] = {}
        if sites:
            with ThreadPoolExecutor(max_workers=len(sites), thread_name_prefix=f"{sub.id}-site") as pool:
                futures = {s.siteId: pool.submit(self._guarded_stage, s, sub) for s in sites}
                results = {sid: f.result() for sid, f in futures.items()}
        failures = []
        for site in sites:
            res = results[site.siteId]
            if isinstance(res, StageFailed):
                sub.stages[site.siteId] = self._stage_summary(site, None, res)
                failures.append((site.siteId, res))
            else:
                sub.stages[site.siteId] = self._stage_summary(site, res, None)
                reports[site.siteId] = res.report
        if failures:
            first = failures[0][1]
            details = [f"{sid}: {f.reason}" for sid, f in failures]
            return self._fail(sub, SubmissionState.FEDERATED_SCORING, first.reason, details)

        record = LeaderboardRecord(sub.id, sub.queue, reports, sub.toolMetadata, timestamp(self.clock()))
        with self._lock:
            self.state.publish(record)
            self._advance(sub, SubmissionState.COMPLETE)
        log.info("%s complete on %d sites", sub.id, len(reports))
        return sub

    def _guarded_stage(self, site: SiteConfig, sub: Submission) -> StageOutcome | StageFailed:
        try:
            return self.run_stage(site, sub)
        except StageFailed as exc:
            exc.logs = ""  # never leaves the site
            return exc
        except Exception as exc:
            log.exception("unexpected failure on %s", site.siteId)
            return StageFailed("internal error", [type(exc).__name__])

    def run_pending(self) -> list[Submission]:
        """Drain RECEIVED submissions: FIFO within a queue, queues in parallel.

        Under a fixed clock everything runs serially in id order instead, so
        the timestamps handed out (and hence the leaderboard) are replayable.
        """
        by_queue: dict[str, list[str]] = defaultdict(list)
        for sub in self.state.submissions():
            if sub.state is SubmissionState.RECEIVED:
                by_queue[sub.queue].append(sub.id)
        if not by_queue:
            return []

        def drain(ids: list[str]) -> list[Submission]:
            return [self.run_submission(i) for i in ids]

        if self.config.fixedClock:
            return drain(sorted(i for ids in by_queue.values() for i in ids))
        with ThreadPoolExecutor(max_workers=len(by_queue), thread_name_prefix="queue") as pool:
            batches = list(pool.map(drain, by_queue.values()))
        return sorted((s for batch in batches for s in batch), key=lambda s: s.id)

    # --- read side ---------------------------------------------------

    def diagnostics(self, sub_id: str) -> dict[str, Any]:
        """TEST-site logs plus per-site status; FEDERATED entries hold counts only."""
        sub = self.get(sub_id)
        return {
            "submissionId": sub.id,
            "state": sub.state.value,
            "failure": sub.failure.to_json() if sub.failure else None,
            "sites": sub.stages,
            "testLog": self.state.read_diagnostic(sub.id, "test.log"),
        }

    def error_spans(self, sub_id: str, site_id: str) -> dict[str, Any]:
        """False positives and negatives with full spans; TEST site only."""
        sub = self.get(sub_id)
        site = next((s for s in self.config.sites if s.siteId == site_id), None)
        if site is None:
            raise UnknownSubmission(f"unknown site {site_id!r}")
        if site.role is not SiteRole.TEST:
            raise PolicyError(f"error spans from FEDERATED site {site_id} never leave the site")
        raw = self.state.read_diagnostic(sub.id, "test-errors.json")
        if raw is None:
            raise UnknownSubmission(f"{sub.id} has no TEST-site results")
        return {"submissionId": sub.id, "siteId": site_id, **json.loads(raw)}

    def get_leaderboard(self, queue: str | None = None, offset: int = 0, limit: int = 100) -> Page:
        records = [r for r in self.state.records() if queue is None or r.queue == queue]
        records.sort(key=lambda r: (r.completedAt, r.submissionId), reverse=True)
        return paginate([r.to_json() for r in records], offset, limit)
