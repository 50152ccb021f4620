"""Durable orchestrator state: one JSON file per object, replaced atomically.

Layout under the state directory::

    counter.json                 next submission number
    submissions/<id>.json        Submission
    leaderboard/<id>.json        LeaderboardRecord, keyed by submission id
    diagnostics/<id>/<name>      TEST-site logs and error spans
"""

from __future__ import annotations

import json
import os
import tempfile
import threading
from pathlib import Path
from typing import Any

from ..schema import canonical_json
from .models import LeaderboardRecord, Submission


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


class StateStore:
    def __init__(self, root: str | os.PathLike[str]) -> None:
        self.root = Path(root)
        for sub in ("submissions", "leaderboard", "diagnostics"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        self._lock = threading.RLock()

    def next_id(self) -> str:
        with self._lock:
            path = self.root / "counter.json"
            n = json.loads(path.read_text())["next"] if path.exists() else 1
            atomic_write(path, json.dumps({"next": n + 1}))
            return f"sub-{n:06d}"

    def save_submission(self, sub: Submission) -> None:
        with self._lock:
            atomic_write(self.root / "submissions" / f"{sub.id}.json", canonical_json(sub.to_json()))

    def load_submission(self, sub_id: str) -> Submission | None:
        path = self.root / "submissions" / f"{Path(sub_id).name}.json"
        if not path.exists():
            return None
        return Submission.from_json(json.loads(path.read_text(encoding="utf-8")))

    def submissions(self) -> list[Submission]:
        with self._lock:
            files = sorted((self.root / "submissions").glob("sub-*.json"))
            return [Submission.from_json(json.loads(p.read_text(encoding="utf-8"))) for p in files]

    def publish(self, record: LeaderboardRecord) -> None:
        with self._lock:
            atomic_write(self.root / "leaderboard" / f"{record.submissionId}.json", canonical_json(record.to_json()))

    def has_record(self, sub_id: str) -> bool:
        return (self.root / "leaderboard" / f"{sub_id}.json").exists()

    def records(self) -> list[LeaderboardRecord]:
        with self._lock:
            files = sorted((self.root / "leaderboard").glob("sub-*.json"))
            return [LeaderboardRecord.from_json(json.loads(p.read_text(encoding="utf-8"))) for p in files]

    def write_diagnostic(self, sub_id: str, name: str, value: Any) -> None:
        text = value if isinstance(value, str) else canonical_json(value)
        atomic_write(self.root / "diagnostics" / sub_id / name, text)

    def read_diagnostic(self, sub_id: str, name: str) -> str | None:
        path = self.root / "diagnostics" / Path(sub_id).name / name
        return path.read_text(encoding="utf-8") if path.exists() else None

    def clear_diagnostics(self, sub_id: str) -> None:
        for p in (self.root / "diagnostics" / sub_id).glob("*"):
            p.unlink()
