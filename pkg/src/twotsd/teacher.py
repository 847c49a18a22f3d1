"""Server-side teacher agent: ingestion and task-request pipelines.

Two flows compose the memory module, the semantics engine, and the matching
chain:

* ingestion -- resource reports upsert the key-value store; performance
  records are appended to history, the (collaborator, task type) window is
  re-queried, and the refreshed semantics is upserted into the tree.
* task request -- semantics retrieval for the task type, owner dropped,
  resource retrieval, chain matching per candidate, then only devices that are
  both trusted and matched go into the candidate bundle.

Serving a request touches memory only; it never contacts a device. That is the
whole point of the architecture, and the simulation asserts it with counters.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Sequence

from .domain import DeviceId, PerformanceRecord, ResourceProfile, Task, TimestampMs, TrustSemantics, TrustState
from .errors import ValidationError
from .matching import MatchConfig, MatchVerdict, StageResult, evaluate_chain, missing_profile_verdict
from .memory import HistoryQuery, MemoryModule
from .semantics import DeterministicEngine, SemanticsEngine


@dataclass(frozen=True)
class Candidate:
    """One qualified collaborator: its trust semantics annotated with the match outcome."""

    semantics: TrustSemantics
    matched: bool
    stages: tuple[StageResult, ...]

    @property
    def device(self) -> DeviceId:
        return self.semantics.device


@dataclass(frozen=True)
class CandidateBundle:
    """What the teacher transfers to a student: qualified candidates only.

    Every candidate is matched and trusted, ordered by device id.
    """

    task_id: str
    candidates: tuple[Candidate, ...]
    generated_at: TimestampMs

    def __post_init__(self):
        devices = [c.device for c in self.candidates]
        if devices != sorted(devices):
            raise ValidationError("bundle candidates must be ordered by device id", field="candidates")
        for c in self.candidates:
            if not c.matched:
                raise ValidationError(f"unmatched candidate {c.device} in bundle", field="candidates")
            if c.semantics.state is not TrustState.TRUSTED:
                raise ValidationError(f"non-trusted candidate {c.device} in bundle", field="candidates")

    def devices(self) -> list[DeviceId]:
        return [c.device for c in self.candidates]


@dataclass(frozen=True)
class TeacherConfig:
    """Orchestration knobs.

    ``history_window_k``: how many newest records feed each extraction.
    ``extract_on_ingest``: extract on every ingested record (the default,
    prompt mode); off, ingestion only marks the pair dirty and
    ``rebuild_dirty`` does the extraction in batch.
    """

    history_window_k: int = 20
    extract_on_ingest: bool = True

    def __post_init__(self):
        if self.history_window_k < 1:
            raise ValidationError("history_window_k must be >= 1", field="history_window_k")


class TeacherAgent:
    """The server-side agent. Owns a MemoryModule and a SemanticsEngine."""

    def __init__(
        self,
        memory: MemoryModule | None = None,
        engine: SemanticsEngine | None = None,
        match_cfg: MatchConfig | None = None,
        cfg: TeacherConfig | None = None,
    ):
        self.memory = memory or MemoryModule()
        self.engine = engine or DeterministicEngine()
        self.match_cfg = match_cfg or MatchConfig()
        self.cfg = cfg or TeacherConfig()
        self._dirty: set[tuple[DeviceId, str]] = set()
        self._extraction_locks: dict[tuple[DeviceId, str], threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _lock_for(self, key: tuple[DeviceId, str]) -> threading.Lock:
        with self._locks_guard:
            lock = self._extraction_locks.get(key)
            if lock is None:
                lock = self._extraction_locks[key] = threading.Lock()
            return lock

    def handle_resource_report(self, profile: ResourceProfile) -> None:
        """Ingest an idle-state resource report. Raises StaleUpdateError on old reports."""
        self.memory.resources.upsert(profile)

    def handle_performance_record(
        self, record: PerformanceRecord, record_id: int | None = None
    ) -> TrustSemantics | None:
        """Ingest a collaboration outcome and refresh the collaborator's semantics.

        Returns the refreshed TrustSemantics, or None when extraction is
        debounced (extract_on_ingest off).
        """
        self.memory.history.append(record, record_id=record_id)
        key = (record.collaborator, record.task_type)
        if not self.cfg.extract_on_ingest:
            self._dirty.add(key)
            return None
        return self._extract_and_store(key)

    def _extract_and_store(self, key: tuple[DeviceId, str]) -> TrustSemantics:
        # Per-(device, task type) serialization so concurrent ingests for the
        # same pair cannot interleave query and upsert (lost updates).
        with self._lock_for(key):
            device, task_type = key
            window = self.memory.history.query(
                HistoryQuery(device, task_type, last_k=self.cfg.history_window_k)
            )
            semantics = self.engine.extract(device, task_type, window)
            self.memory.semantics.upsert(semantics)
            return semantics

    def rebuild_dirty(self) -> int:
        """Debounced mode: extract semantics for every pair touched since last rebuild."""
        pending, self._dirty = self._dirty, set()
        for key in sorted(pending):
            self._extract_and_store(key)
        return len(pending)

    def handle_task_request(self, task: Task, now: TimestampMs) -> CandidateBundle:
        """Assemble the candidate bundle for a task request.

        All data come from the memory module; devices are never contacted.
        Devices without a resource profile fail the freshness stage and drop out.
        """
        all_semantics = self.memory.semantics.get_by_task_type(task.task_type)
        candidates: list[Candidate] = []
        for sem in all_semantics:
            if sem.device == task.owner:
                continue
            if sem.state is not TrustState.TRUSTED:
                continue
            profile = self.memory.resources.get(sem.device)
            if profile is None:
                verdict = missing_profile_verdict(sem.device, task.task_id)
            else:
                verdict = evaluate_chain(task, profile, now, self.match_cfg)
            if verdict.matched:
                candidates.append(Candidate(sem, True, verdict.stages))
        candidates.sort(key=lambda c: c.device)
        return CandidateBundle(task.task_id, tuple(candidates), now)
