"""Append-only JSONL journal and the review-queue state derived from it.

Every mutation is one fsynced line; replaying the file reconstructs the
exact queue state, and a crash can lose at most the final in-flight line
(a truncated tail is ignored on replay).
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Optional


class Journal:
    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def append(self, record: dict) -> None:
        line = json.dumps(record, ensure_ascii=False, separators=(",", ":")) + "\n"
        with self._lock:
            self._repair_torn_tail()
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()
                os.fsync(fh.fileno())

    def _repair_torn_tail(self) -> None:
        """Drop a partial final line left by a crash mid-append."""
        if not self.path.exists():
            return
        data = self.path.read_bytes()
        if not data or data.endswith(b"\n"):
            return
        keep = data.rfind(b"\n") + 1
        with self.path.open("rb+") as fh:
            fh.truncate(keep)

    def replay(self) -> list[dict]:
        """All committed records; a record counts only once its newline is on disk."""
        if not self.path.exists():
            return []
        data = self.path.read_bytes()
        records: list[dict] = []
        for raw in data.split(b"\n")[:-1]:  # final element is empty or an in-flight tail
            if not raw.strip():
                continue
            records.append(json.loads(raw.decode("utf-8")))
        return records


class TaskStatus(str, Enum):
    PENDING = "pending"
    ACCEPTED = "accepted"
    REJECTED = "rejected"
    EDITED = "edited"


class Verdict(str, Enum):
    ACCEPT = "accept"
    REJECT = "reject"
    ACCEPT_WITH_EDITS = "accept_with_edits"


@dataclass
class ReviewTask:
    task_id: str
    example_id: str
    chain: list[str]
    round_history: list[list[str]]
    cycle: int = 0
    status: TaskStatus = TaskStatus.PENDING
    reviewer_id: Optional[str] = None
    decided_at: Optional[str] = None
    final_steps: Optional[list[str]] = None
    reason: Optional[str] = None
    criteria: Optional[dict[str, bool]] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "example_id": self.example_id,
            "chain": list(self.chain),
            "round_history": [list(r) for r in self.round_history],
            "cycle": self.cycle,
            "status": self.status.value,
            "reviewer_id": self.reviewer_id,
            "decided_at": self.decided_at,
            "final_steps": self.final_steps,
            "reason": self.reason,
            "criteria": self.criteria,
        }


@dataclass
class ReviewState:
    """Queue state folded from journal events.

    A rejection implicitly re-enqueues the example for a fresh pipeline cycle
    (one journal line per decision keeps replay atomic).
    """

    tasks: dict[str, ReviewTask] = field(default_factory=dict)
    pending_order: list[str] = field(default_factory=list)
    reference_complete: dict[str, list[str]] = field(default_factory=dict)
    pipeline_pending: dict[str, int] = field(default_factory=dict)
    escalated: dict[str, int] = field(default_factory=dict)
    tasks_by_example: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_journal(cls, records: list[dict]) -> "ReviewState":
        state = cls()
        for record in records:
            state.apply(record)
        return state

    def apply(self, record: dict) -> None:
        event = record.get("event")
        if event == "review_enqueued":
            task_id = record["task_id"]
            if task_id in self.tasks:
                return
            task = ReviewTask(
                task_id=task_id,
                example_id=record["example_id"],
                chain=list(record.get("chain") or []),
                round_history=[list(r) for r in record.get("round_history") or []],
                cycle=int(record.get("cycle", 0)),
            )
            self.tasks[task_id] = task
            self.pending_order.append(task_id)
            self.tasks_by_example[task.example_id] = task_id
            self.pipeline_pending.pop(task.example_id, None)
        elif event == "review_decided":
            task = self.tasks.get(record["task_id"])
            if task is None or task.status != TaskStatus.PENDING:
                return
            verdict = Verdict(record["verdict"])
            task.reviewer_id = record.get("reviewer_id")
            task.decided_at = record.get("decided_at")
            task.reason = record.get("reason")
            task.criteria = record.get("criteria")
            if task.task_id in self.pending_order:
                self.pending_order.remove(task.task_id)
            if verdict == Verdict.ACCEPT:
                task.status = TaskStatus.ACCEPTED
                task.final_steps = list(task.chain)
                self.reference_complete[task.example_id] = task.final_steps
            elif verdict == Verdict.ACCEPT_WITH_EDITS:
                task.status = TaskStatus.EDITED
                task.final_steps = list(record.get("edited_steps") or [])
                self.reference_complete[task.example_id] = task.final_steps
            else:
                task.status = TaskStatus.REJECTED
                # Iteration loop 2: restart the pipeline from round 1, fresh seeds.
                self.pipeline_pending[task.example_id] = task.cycle + 1
                self.tasks_by_example.pop(task.example_id, None)
        elif event == "pipeline_complete":
            self.reference_complete[record["example_id"]] = list(record.get("steps") or [])
            self.pipeline_pending.pop(record["example_id"], None)
        elif event == "pipeline_escalated":
            self.escalated[record["example_id"]] = int(record.get("cycle", 0))
            self.pipeline_pending.pop(record["example_id"], None)
        # pipeline_round / pipeline_error events carry history only.

    def next_pending(self) -> Optional[ReviewTask]:
        for task_id in self.pending_order:
            task = self.tasks[task_id]
            if task.status == TaskStatus.PENDING:
                return task
        return None

    def snapshot(self) -> dict[str, Any]:
        """Canonical dict of the whole queue state, for replay-equality checks."""
        return {
            "tasks": {tid: t.to_dict() for tid, t in sorted(self.tasks.items())},
            "pending_order": list(self.pending_order),
            "reference_complete": {k: list(v) for k, v in sorted(self.reference_complete.items())},
            "pipeline_pending": dict(sorted(self.pipeline_pending.items())),
            "escalated": dict(sorted(self.escalated.items())),
        }
