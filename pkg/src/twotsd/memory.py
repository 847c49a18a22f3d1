"""The teacher's augmented memory: resource store, history store, semantics tree.

Three components back the server-side agent:

* :class:`ResourceStore` -- key-value map device -> newest ResourceProfile,
  rejecting stale writes.
* :class:`HistoryStore` -- append-only performance-record log with a
  (collaborator, task_type) secondary index; the "relational database" of the
  design, realized as the query contract rather than a SQL engine.
* :class:`SemanticsTree` -- the 4-level tree root -> task type -> device ->
  semantics leaf, one leaf per (task type, device).

Stores are safe for concurrent readers with serialized writers; all mutation
paths hold a per-store lock. :class:`MemoryModule` bundles the three and
snapshots them to a single versioned JSON file (``load(save(state)) == state``).
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Sequence

from . import codec
from .domain import (
    DeviceId,
    PerformanceRecord,
    ResourceProfile,
    TaskType,
    TimestampMs,
    TrustSemantics,
)
from .errors import DuplicateRecordError, StaleUpdateError, ValidationError

SNAPSHOT_FORMAT = "twotsd-snapshot"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class HistoryQuery:
    """Records for one (collaborator, task type), windowed by time or by count.

    Exactly one of ``interval`` / ``last_k`` must be set. ``interval`` bounds
    are inclusive on both ends.
    """

    collaborator: DeviceId
    task_type: TaskType
    last_k: int | None = None
    interval: tuple[TimestampMs, TimestampMs] | None = None

    def __post_init__(self):
        if (self.last_k is None) == (self.interval is None):
            raise ValidationError("exactly one of last_k / interval must be set", field="window")
        if self.last_k is not None and self.last_k < 1:
            raise ValidationError("last_k must be >= 1", field="last_k")
        if self.interval is not None and self.interval[0] > self.interval[1]:
            raise ValidationError("interval start must be <= end", field="interval")


class ResourceStore:
    """Newest resource profile per device, in a key-value map."""

    def __init__(self):
        self._profiles: dict[DeviceId, ResourceProfile] = {}
        self._lock = threading.Lock()

    def upsert(self, profile: ResourceProfile) -> None:
        with self._lock:
            current = self._profiles.get(profile.device)
            if current is not None and profile.updated_at < current.updated_at:
                raise StaleUpdateError(
                    f"profile for {profile.device} at {profile.updated_at} is older "
                    f"than stored {current.updated_at}"
                )
            self._profiles[profile.device] = profile

    def get(self, device: DeviceId) -> ResourceProfile | None:
        return self._profiles.get(device)

    def get_many(
        self, devices: Sequence[DeviceId]
    ) -> tuple[list[ResourceProfile], list[DeviceId]]:
        """Profiles for every known device in input order, plus the unknown ones."""
        found: list[ResourceProfile] = []
        missing: list[DeviceId] = []
        for d in devices:
            profile = self._profiles.get(d)
            if profile is None:
                missing.append(d)
            else:
                found.append(profile)
        return found, missing

    def devices(self) -> list[DeviceId]:
        return sorted(self._profiles)

    def __len__(self) -> int:
        return len(self._profiles)

    def to_dict(self) -> dict[str, Any]:
        return {
            "profiles": [codec.profile_to_dict(self._profiles[d]) for d in sorted(self._profiles)]
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "ResourceStore":
        store = cls()
        for item in doc["profiles"]:
            store._profiles_insert(codec.profile_from_dict(item))
        return store

    def _profiles_insert(self, profile: ResourceProfile) -> None:
        self._profiles[profile.device] = profile


class HistoryStore:
    """Append-only record log, indexed by (collaborator, task_type).

    Record ids are dense integers assigned on append; explicit ids may be
    supplied (e.g. for idempotent replays) and must be unique. Query results
    are ascending by (timestamp, id). Records are immutable; the only removal
    path is explicit retention pruning.
    """

    def __init__(self):
        self._records: dict[int, PerformanceRecord] = {}
        self._by_key: dict[tuple[DeviceId, TaskType], list[int]] = {}
        self._next_id = 1
        self._lock = threading.Lock()

    def append(self, record: PerformanceRecord, record_id: int | None = None) -> int:
        with self._lock:
            if record_id is None:
                record_id = self._next_id
            elif record_id in self._records:
                raise DuplicateRecordError(f"record id {record_id} already stored")
            self._next_id = max(self._next_id, record_id + 1)
            self._records[record_id] = record
            self._by_key.setdefault((record.collaborator, record.task_type), []).append(record_id)
            return record_id

    def query(self, q: HistoryQuery) -> list[PerformanceRecord]:
        ids = self._by_key.get((q.collaborator, q.task_type), [])
        matched = sorted(ids, key=lambda i: (self._records[i].at, i))
        if q.interval is not None:
            lo, hi = q.interval
            matched = [i for i in matched if lo <= self._records[i].at <= hi]
        else:
            matched = matched[-q.last_k :] if q.last_k else matched
        return [self._records[i] for i in matched]

    def count_for(self, collaborator: DeviceId, task_type: TaskType) -> int:
        return len(self._by_key.get((collaborator, task_type), []))

    def all_records(self) -> list[tuple[int, PerformanceRecord]]:
        return sorted(self._records.items())

    def prune_older_than(self, cutoff: TimestampMs) -> int:
        """Retention: drop records with at < cutoff. Returns how many went."""
        with self._lock:
            doomed = [i for i, r in self._records.items() if r.at < cutoff]
            for i in doomed:
                r = self._records.pop(i)
                self._by_key[(r.collaborator, r.task_type)].remove(i)
            return len(doomed)

    def __len__(self) -> int:
        return len(self._records)

    def to_dict(self) -> dict[str, Any]:
        return {
            "next_id": self._next_id,
            "records": [[i, codec.record_to_dict(r)] for i, r in self.all_records()],
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "HistoryStore":
        store = cls()
        for rid, item in doc["records"]:
            store.append(codec.record_from_dict(item), record_id=rid)
        store._next_id = doc["next_id"]
        return store


class NodeKind(Enum):
    ROOT = "root"
    TASK_TYPE = "task_type"
    DEVICE = "device"
    SEMANTICS = "semantics"


@dataclass
class TreeNode:
    """One tree node: <self, parent, children> plus its kind-specific payload.

    ``key`` is the task-type name or device id (None for root and semantics
    leaves); ``payload`` is set on semantics leaves only.
    """

    node_id: int
    kind: NodeKind
    key: str | None
    parent: int | None
    children: list[int] = field(default_factory=list)
    payload: TrustSemantics | None = None


class SemanticsTree:
    """Tree-structured trust-semantics store.

    Depths are fixed: root=0, task type=1, device=2, semantics leaf=3. Each
    task type appears once under the root, each device once under a task type,
    and each device node holds at most one semantics leaf (updates replace the
    leaf payload in place). Node ids are dense creation-order integers;
    children stay sorted by key for deterministic traversal.
    """

    ROOT_ID = 0

    def __init__(self):
        self._nodes: dict[int, TreeNode] = {
            self.ROOT_ID: TreeNode(self.ROOT_ID, NodeKind.ROOT, None, None)
        }
        self._next_id = 1
        self._lock = threading.Lock()

    def node(self, node_id: int) -> TreeNode:
        return self._nodes[node_id]

    def node_count(self) -> int:
        return len(self._nodes)

    def _child_by_key(self, parent: TreeNode, key: str) -> TreeNode | None:
        for cid in parent.children:
            child = self._nodes[cid]
            if child.key == key:
                return child
        return None

    def _insert_child(self, parent: TreeNode, kind: NodeKind, key: str | None) -> TreeNode:
        node = TreeNode(self._next_id, kind, key, parent.node_id)
        self._nodes[self._next_id] = node
        self._next_id += 1
        parent.children.append(node.node_id)
        parent.children.sort(key=lambda cid: self._nodes[cid].key or "")
        return node

    def upsert(self, ts: TrustSemantics) -> None:
        """Insert or update the semantics leaf for (ts.task_type, ts.device)."""
        with self._lock:
            root = self._nodes[self.ROOT_ID]
            tt_node = self._child_by_key(root, ts.task_type)
            if tt_node is None:
                tt_node = self._insert_child(root, NodeKind.TASK_TYPE, ts.task_type)
            dev_node = self._child_by_key(tt_node, ts.device)
            if dev_node is None:
                dev_node = self._insert_child(tt_node, NodeKind.DEVICE, ts.device)
            if dev_node.children:
                leaf = self._nodes[dev_node.children[0]]
            else:
                leaf = self._insert_child(dev_node, NodeKind.SEMANTICS, None)
            leaf.payload = ts

    def get_by_task_type(self, task_type: TaskType) -> list[TrustSemantics]:
        """All semantics under one task-type node, ordered by device id."""
        root = self._nodes[self.ROOT_ID]
        tt_node = self._child_by_key(root, task_type)
        if tt_node is None:
            return []
        out: list[TrustSemantics] = []
        for dev_id in tt_node.children:  # children already sorted by device id
            dev_node = self._nodes[dev_id]
            if dev_node.children:
                leaf = self._nodes[dev_node.children[0]]
                if leaf.payload is not None:
                    out.append(leaf.payload)
        return out

    def task_types(self) -> list[TaskType]:
        root = self._nodes[self.ROOT_ID]
        return [self._nodes[cid].key or "" for cid in root.children]

    def devices_for(self, task_type: TaskType) -> list[DeviceId]:
        root = self._nodes[self.ROOT_ID]
        tt_node = self._child_by_key(root, task_type)
        if tt_node is None:
            return []
        return [self._nodes[cid].key or "" for cid in tt_node.children]

    def leaf_count(self) -> int:
        return sum(1 for n in self._nodes.values() if n.kind is NodeKind.SEMANTICS)

    def depth_of(self, node_id: int) -> int:
        depth = 0
        node = self._nodes[node_id]
        while node.parent is not None:
            node = self._nodes[node.parent]
            depth += 1
        return depth

    def all_nodes(self) -> list[TreeNode]:
        return [self._nodes[i] for i in sorted(self._nodes)]

    def to_dict(self) -> dict[str, Any]:
        nodes = []
        for node in self.all_nodes():
            nodes.append(
                {
                    "id": node.node_id,
                    "kind": node.kind.value,
                    "key": node.key,
                    "parent": node.parent,
                    "children": list(node.children),
                    "payload": codec.semantics_to_dict(node.payload) if node.payload else None,
                }
            )
        return {"next_node_id": self._next_id, "nodes": nodes}

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "SemanticsTree":
        tree = cls()
        tree._nodes = {}
        for item in doc["nodes"]:
            node = TreeNode(
                node_id=item["id"],
                kind=NodeKind(item["kind"]),
                key=item["key"],
                parent=item["parent"],
                children=list(item["children"]),
                payload=codec.semantics_from_dict(item["payload"]) if item["payload"] else None,
            )
            tree._nodes[node.node_id] = node
        tree._next_id = doc["next_node_id"]
        return tree


class MemoryModule:
    """The three stores, plus single-file snapshotting."""

    def __init__(self):
        self.resources = ResourceStore()
        self.history = HistoryStore()
        self.semantics = SemanticsTree()

    def to_snapshot_dict(self) -> dict[str, Any]:
        return {
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "resources": self.resources.to_dict(),
            "history": self.history.to_dict(),
            "tree": self.semantics.to_dict(),
        }

    def save(self, path: str | Path) -> None:
        data = codec.canonical_json_bytes(self.to_snapshot_dict())
        Path(path).write_bytes(data + b"\n")

    @classmethod
    def load(cls, path: str | Path) -> "MemoryModule":
        try:
            doc = json.loads(Path(path).read_bytes())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"unreadable snapshot: {exc}") from None
        if not isinstance(doc, dict) or doc.get("format") != SNAPSHOT_FORMAT:
            raise ValidationError("not a twotsd snapshot file")
        if doc.get("version") != SNAPSHOT_VERSION:
            raise ValidationError(f"unsupported snapshot version {doc.get('version')}")
        module = cls()
        module.resources = ResourceStore.from_dict(doc["resources"])
        module.history = HistoryStore.from_dict(doc["history"])
        module.semantics = SemanticsTree.from_dict(doc["tree"])
        return module

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MemoryModule):
            return NotImplemented
        return self.to_snapshot_dict() == other.to_snapshot_dict()
