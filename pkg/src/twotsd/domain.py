"""Core value types: tasks, resource profiles, performance records, trust semantics.

All values are immutable after construction and validate their own invariants,
so any instance that exists is well-formed. Raw (possibly stringly-typed) input
goes through :func:`validate_task` / :func:`validate_record`, which also accept
percent-style fields like ``"1%"``.

Unit conventions: MB = 10^6 bytes, Mbps = 10^6 bits/s, so a task's size in bits
is ``size_mb * 8e6``. Timestamps are integer milliseconds on a scenario-local
clock (simulation) or the wall clock (service mode).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping

from .errors import ValidationError

# Device and task-type identifiers are plain strings: nonempty, totally
# ordered (lexicographic), used verbatim for deterministic tie-breaks.
DeviceId = str
TaskType = str
TimestampMs = int

# Seeded scenario task types. The TaskType domain itself is open.
FACE_RECOGNITION: TaskType = "face_recognition"
VIDEO_TRANSCODING: TaskType = "video_transcoding"
TEXT_WORD_COUNT: TaskType = "text_word_count"
DEFAULT_TASK_TYPES: tuple[TaskType, ...] = (
    FACE_RECOGNITION,
    VIDEO_TRANSCODING,
    TEXT_WORD_COUNT,
)

# Metric names used throughout semantics extraction and student policies.
COMM_METRICS: tuple[str, str] = ("throughput", "loss_rate")
COMP_METRICS: tuple[str, str] = ("accuracy", "proc_speed")

BITS_PER_MB = 8_000_000  # 1 MB = 10^6 bytes


class Verdict(Enum):
    """Comprehensive outcome of one collaboration."""

    SATISFIED = "satisfied"
    UNSATISFIED = "unsatisfied"


class Trend(Enum):
    """Direction of a metric's temporal evolution."""

    INCREASING = "increasing"
    DECREASING = "decreasing"
    NORMAL = "normal"


class TrustState(Enum):
    """Overall trust status of a device for one task type.

    INSUFFICIENT_DATA marks cold-start devices whose history is too short to
    call either way; downstream they are excluded from candidate bundles but
    stay distinguishable from UNTRUSTED in reports.
    """

    TRUSTED = "trusted"
    UNTRUSTED = "untrusted"
    INSUFFICIENT_DATA = "insufficient_data"


def _require_device_id(value: Any, field_name: str) -> str:
    if not isinstance(value, str) or not value:
        raise ValidationError(f"{field_name} must be a nonempty string", field=field_name)
    return value


def _require_positive(value: Any, field_name: str) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{field_name} must be a number", field=field_name) from None
    if not math.isfinite(out) or out <= 0.0:
        raise ValidationError(f"{field_name} must be > 0", field=field_name)
    return out


def _require_nonnegative(value: Any, field_name: str) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{field_name} must be a number", field=field_name) from None
    if not math.isfinite(out) or out < 0.0:
        raise ValidationError(f"{field_name} must be >= 0", field=field_name)
    return out


def _require_timestamp(value: Any, field_name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(f"{field_name} must be an integer (ms)", field=field_name)
    return value


def parse_fraction(value: Any, field_name: str) -> float:
    """Parse a fraction in [0,1], accepting both 0.01 and percent strings like "1%"."""
    if isinstance(value, str):
        raw = value.strip()
        if raw.endswith("%"):
            try:
                value = float(raw[:-1]) / 100.0
            except ValueError:
                raise ValidationError(
                    f"{field_name} percent string is not numeric: {raw!r}", field=field_name
                ) from None
        else:
            try:
                value = float(raw)
            except ValueError:
                raise ValidationError(
                    f"{field_name} is not numeric: {raw!r}", field=field_name
                ) from None
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{field_name} must be a number", field=field_name) from None
    if not math.isfinite(out) or not 0.0 <= out <= 1.0:
        raise ValidationError(
            f"{field_name} out of range [0,1]: {out}", field=field_name, code="out_of_range"
        )
    return out


@dataclass(frozen=True)
class Task:
    """A computational job: what it is, how big, how heavy, how urgent.

    ``extra`` holds unrecognized metrics from open-ended schemas; it is kept
    for round-tripping but ignored by the semantics engine.
    """

    task_id: str
    owner: DeviceId
    task_type: TaskType
    size_mb: float
    density_cpb: float  # CPU cycles per bit
    deadline_s: float
    extra: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        _require_device_id(self.task_id, "task_id")
        _require_device_id(self.owner, "owner")
        _require_device_id(self.task_type, "task_type")
        object.__setattr__(self, "size_mb", _require_positive(self.size_mb, "size_mb"))
        object.__setattr__(self, "density_cpb", _require_positive(self.density_cpb, "density_cpb"))
        object.__setattr__(self, "deadline_s", _require_positive(self.deadline_s, "deadline_s"))

    @property
    def size_bits(self) -> float:
        return self.size_mb * BITS_PER_MB


@dataclass(frozen=True)
class ResourceProfile:
    """A device's idle-state resources as reported to the server.

    ``cpu_cps`` is effective aggregate cycles/second (multi-core allowed);
    single-core readings make realistic task deadlines infeasible.
    """

    device: DeviceId
    cpu_cps: float
    storage_mb: float
    bandwidth_mbps: float
    updated_at: TimestampMs

    def __post_init__(self):
        _require_device_id(self.device, "device")
        object.__setattr__(self, "cpu_cps", _require_positive(self.cpu_cps, "cpu_cps"))
        object.__setattr__(self, "storage_mb", _require_nonnegative(self.storage_mb, "storage_mb"))
        object.__setattr__(
            self, "bandwidth_mbps", _require_positive(self.bandwidth_mbps, "bandwidth_mbps")
        )
        _require_timestamp(self.updated_at, "updated_at")


@dataclass(frozen=True)
class PerformanceRecord:
    """One collaboration outcome, reported by the task owner."""

    owner: DeviceId
    collaborator: DeviceId
    task_type: TaskType
    at: TimestampMs
    throughput_mbps: float
    loss_rate: float
    proc_speed_mbps: float  # MB/second
    accuracy: float
    verdict: Verdict
    extra: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        _require_device_id(self.owner, "owner")
        _require_device_id(self.collaborator, "collaborator")
        _require_device_id(self.task_type, "task_type")
        if self.owner == self.collaborator:
            raise ValidationError(
                f"owner and collaborator must differ (both {self.owner!r})",
                field="collaborator",
                code="self_collaboration",
            )
        _require_timestamp(self.at, "at")
        object.__setattr__(
            self, "throughput_mbps", _require_nonnegative(self.throughput_mbps, "throughput_mbps")
        )
        object.__setattr__(self, "loss_rate", parse_fraction(self.loss_rate, "loss_rate"))
        object.__setattr__(
            self, "proc_speed_mbps", _require_nonnegative(self.proc_speed_mbps, "proc_speed_mbps")
        )
        object.__setattr__(self, "accuracy", parse_fraction(self.accuracy, "accuracy"))
        if not isinstance(self.verdict, Verdict):
            raise ValidationError(f"verdict must be a Verdict, got {self.verdict!r}", field="verdict")

    @property
    def satisfied(self) -> bool:
        return self.verdict is Verdict.SATISFIED


@dataclass(frozen=True)
class TrustSemantics:
    """Per (device, task type) trust assessment: overall state plus per-metric trends.

    ``window`` is the [first, last] record-timestamp span the assessment was
    extracted from, or None when there were no records. When state is
    INSUFFICIENT_DATA every trend is NORMAL: a cold start carries no trend claims.
    """

    device: DeviceId
    task_type: TaskType
    state: TrustState
    comm_trends: Mapping[str, Trend]
    comp_trends: Mapping[str, Trend]
    window: tuple[TimestampMs, TimestampMs] | None
    extracted_at: TimestampMs
    record_count: int

    def __post_init__(self):
        _require_device_id(self.device, "device")
        _require_device_id(self.task_type, "task_type")
        if not isinstance(self.state, TrustState):
            raise ValidationError(f"state must be a TrustState, got {self.state!r}", field="state")
        object.__setattr__(self, "comm_trends", dict(self.comm_trends))
        object.__setattr__(self, "comp_trends", dict(self.comp_trends))
        for name, trends, expected in (
            ("comm_trends", self.comm_trends, COMM_METRICS),
            ("comp_trends", self.comp_trends, COMP_METRICS),
        ):
            if set(trends) != set(expected):
                raise ValidationError(
                    f"{name} must contain exactly {sorted(expected)}, got {sorted(trends)}",
                    field=name,
                )
            for metric, trend in trends.items():
                if not isinstance(trend, Trend):
                    raise ValidationError(
                        f"{name}[{metric}] must be a Trend, got {trend!r}", field=name
                    )
        if self.window is not None:
            lo, hi = self.window
            _require_timestamp(lo, "window.from")
            _require_timestamp(hi, "window.to")
            if lo > hi:
                raise ValidationError("window.from must be <= window.to", field="window")
            object.__setattr__(self, "window", (lo, hi))
        _require_timestamp(self.extracted_at, "extracted_at")
        if isinstance(self.record_count, bool) or not isinstance(self.record_count, int):
            raise ValidationError("record_count must be an integer", field="record_count")
        if self.record_count < 0:
            raise ValidationError("record_count must be >= 0", field="record_count")
        if self.state is TrustState.INSUFFICIENT_DATA:
            all_trends = list(self.comm_trends.values()) + list(self.comp_trends.values())
            if any(t is not Trend.NORMAL for t in all_trends):
                raise ValidationError(
                    "insufficient_data semantics must carry only normal trends",
                    field="state",
                )

    def all_trends(self) -> dict[str, Trend]:
        """Flat metric -> trend view across both trend groups."""
        merged = dict(self.comm_trends)
        merged.update(self.comp_trends)
        return merged


def _parse_verdict(value: Any) -> Verdict:
    if isinstance(value, Verdict):
        return value
    if isinstance(value, str):
        try:
            return Verdict(value.strip().lower())
        except ValueError:
            pass
    raise ValidationError(f"verdict must be 'satisfied' or 'unsatisfied', got {value!r}", field="verdict")


_TASK_FIELDS = {"task_id", "owner", "task_type", "size_mb", "density_cpb", "deadline_s"}
_RECORD_FIELDS = {
    "owner",
    "collaborator",
    "task_type",
    "at",
    "throughput_mbps",
    "loss_rate",
    "proc_speed_mbps",
    "accuracy",
    "verdict",
}


def validate_task(raw: Mapping[str, Any]) -> Task:
    """Build a Task from raw task-shaped fields, validating every invariant.

    Unknown keys are preserved in ``extra``. Diagnostics name the field that
    failed.
    """
    missing = sorted(_TASK_FIELDS - set(raw))
    if missing:
        raise ValidationError(f"missing task fields: {', '.join(missing)}", field=missing[0])
    extra = {k: v for k, v in raw.items() if k not in _TASK_FIELDS and k != "extra"}
    extra.update(dict(raw.get("extra", {})))
    return Task(
        task_id=raw["task_id"],
        owner=raw["owner"],
        task_type=raw["task_type"],
        size_mb=raw["size_mb"],
        density_cpb=raw["density_cpb"],
        deadline_s=raw["deadline_s"],
        extra=extra,
    )


def validate_record(raw: Mapping[str, Any]) -> PerformanceRecord:
    """Build a PerformanceRecord from raw fields.

    Accepts percent strings for loss_rate and accuracy ("1%" == 0.01) and
    verdicts as strings; rejects self-collaboration and out-of-range bounds.
    """
    missing = sorted(_RECORD_FIELDS - set(raw))
    if missing:
        raise ValidationError(f"missing record fields: {', '.join(missing)}", field=missing[0])
    extra = {k: v for k, v in raw.items() if k not in _RECORD_FIELDS and k != "extra"}
    extra.update(dict(raw.get("extra", {})))
    return PerformanceRecord(
        owner=raw["owner"],
        collaborator=raw["collaborator"],
        task_type=raw["task_type"],
        at=raw["at"],
        throughput_mbps=raw["throughput_mbps"],
        loss_rate=raw["loss_rate"],
        proc_speed_mbps=raw["proc_speed_mbps"],
        accuracy=raw["accuracy"],
        verdict=_parse_verdict(raw["verdict"]),
        extra=extra,
    )
