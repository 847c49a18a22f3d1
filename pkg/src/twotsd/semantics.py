"""Deterministic trust-semantics engine.

Trend detection fits a least-squares line over (record index, value) pairs and
classifies the slope after normalizing it by the series mean, so the verdict is
scale-free: a throughput sliding 100 -> 80 Mbps and a loss rate creeping
0.01 -> 0.05 both register, despite living four orders of magnitude apart.
The overall trust state is the satisfied-fraction of the record window against
a threshold. Index-based slopes (rather than raw timestamps) avoid
timestamp-gap pathologies on near-regular record streams.

The engine interface is pluggable: :class:`DeterministicEngine` is the
reference; a remote large-model adapter can implement the same ``extract``
capability.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field, replace
from typing import Iterable, Protocol, Sequence

from .domain import (
    COMM_METRICS,
    COMP_METRICS,
    DeviceId,
    PerformanceRecord,
    TaskType,
    TimestampMs,
    Trend,
    TrustSemantics,
    TrustState,
)
from .errors import HeterogeneousInputError, UnsortedInputError, ValidationError


@dataclass(frozen=True)
class TrendConfig:
    """Thresholds for trend classification.

    ``rel_slope_threshold`` applies to the normalized slope
    s = slope * (n - 1) / max(mean, floor), i.e. roughly "total relative change
    across the window". ``abs_floor`` guards the normalization when a series
    mean is ~0; ``metric_floors`` may override it per metric.
    """

    n_min: int = 5
    rel_slope_threshold: float = 0.10
    abs_floor: float = 1e-6
    metric_floors: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.n_min < 2:
            raise ValidationError("n_min must be >= 2", field="n_min")
        if self.rel_slope_threshold <= 0:
            raise ValidationError("rel_slope_threshold must be > 0", field="rel_slope_threshold")
        if self.abs_floor < 0:
            raise ValidationError("abs_floor must be >= 0", field="abs_floor")

    def floor_for(self, metric: str) -> float:
        return self.metric_floors.get(metric, self.abs_floor)


@dataclass(frozen=True)
class StateConfig:
    """Thresholds for the overall trust state."""

    n_min: int = 5
    trust_threshold: float = 0.8  # on the satisfied-fraction

    def __post_init__(self):
        if self.n_min < 1:
            raise ValidationError("n_min must be >= 1", field="n_min")
        if not 0.0 < self.trust_threshold <= 1.0:
            raise ValidationError("trust_threshold must be in (0,1]", field="trust_threshold")


class SemanticsEngine(Protocol):
    """The single capability every engine provides.

    Deterministic engines must be pure functions of inputs + config.
    """

    def extract(
        self,
        device: DeviceId,
        task_type: TaskType,
        records: Sequence[PerformanceRecord],
    ) -> TrustSemantics: ...


def detect_trend(
    series: Sequence[tuple[TimestampMs, float]], cfg: TrendConfig | None = None
) -> Trend:
    """Classify a (timestamp, value) series as increasing / decreasing / normal.

    The series must be sorted ascending by timestamp. Below ``n_min`` points
    the answer is always NORMAL: too little data to claim a direction.
    """
    cfg = cfg or TrendConfig()
    times = [t for t, _ in series]
    if any(times[i] > times[i + 1] for i in range(len(times) - 1)):
        raise UnsortedInputError("series timestamps must be ascending")
    n = len(series)
    if n < cfg.n_min:
        return Trend.NORMAL
    values = [v for _, v in series]
    slope = statistics.linear_regression(range(n), values).slope
    mean = statistics.fmean(values)
    normalized = slope * (n - 1) / max(mean, cfg.abs_floor)
    if normalized > cfg.rel_slope_threshold:
        return Trend.INCREASING
    if normalized < -cfg.rel_slope_threshold:
        return Trend.DECREASING
    return Trend.NORMAL


def aggregate_state(
    records: Sequence[PerformanceRecord], cfg: StateConfig | None = None
) -> TrustState:
    """Overall trust state from a window of records sharing (collaborator, task_type)."""
    cfg = cfg or StateConfig()
    keys = {(r.collaborator, r.task_type) for r in records}
    if len(keys) > 1:
        raise HeterogeneousInputError(
            f"records mix collaborators/task types: {sorted(keys)}"
        )
    if len(records) < cfg.n_min:
        return TrustState.INSUFFICIENT_DATA
    satisfied = sum(1 for r in records if r.satisfied)
    fraction = satisfied / len(records)
    return TrustState.TRUSTED if fraction >= cfg.trust_threshold else TrustState.UNTRUSTED


_METRIC_GETTERS = {
    "throughput": lambda r: r.throughput_mbps,
    "loss_rate": lambda r: r.loss_rate,
    "accuracy": lambda r: r.accuracy,
    "proc_speed": lambda r: r.proc_speed_mbps,
}


def _trend_for_metric(
    records: Sequence[PerformanceRecord], metric: str, cfg: TrendConfig
) -> Trend:
    getter = _METRIC_GETTERS[metric]
    series = [(r.at, getter(r)) for r in records]
    floor = cfg.floor_for(metric)
    if floor != cfg.abs_floor:
        cfg = replace(cfg, abs_floor=floor)
    return detect_trend(series, cfg)


def extract_semantics(
    device: DeviceId,
    task_type: TaskType,
    records: Sequence[PerformanceRecord],
    trend_cfg: TrendConfig | None = None,
    state_cfg: StateConfig | None = None,
) -> TrustSemantics:
    """Compose state aggregation and per-metric trend detection into TrustSemantics.

    ``records`` must already be filtered to (device, task_type) and sorted
    ascending by timestamp. ``extracted_at`` is derived from the last record so
    the extraction stays a pure function of its inputs.
    """
    trend_cfg = trend_cfg or TrendConfig()
    state_cfg = state_cfg or StateConfig()
    records = list(records)
    for r in records:
        if r.collaborator != device or r.task_type != task_type:
            raise HeterogeneousInputError(
                f"record for ({r.collaborator}, {r.task_type}) passed to "
                f"extraction for ({device}, {task_type})"
            )
    if any(records[i].at > records[i + 1].at for i in range(len(records) - 1)):
        raise UnsortedInputError("records must be ascending by timestamp")

    state = aggregate_state(records, state_cfg)
    if state is TrustState.INSUFFICIENT_DATA:
        # Cold start: no trend claims.
        comm = {m: Trend.NORMAL for m in COMM_METRICS}
        comp = {m: Trend.NORMAL for m in COMP_METRICS}
    else:
        comm = {m: _trend_for_metric(records, m, trend_cfg) for m in COMM_METRICS}
        comp = {m: _trend_for_metric(records, m, trend_cfg) for m in COMP_METRICS}
    window = (records[0].at, records[-1].at) if records else None
    extracted_at = records[-1].at if records else 0
    return TrustSemantics(
        device=device,
        task_type=task_type,
        state=state,
        comm_trends=comm,
        comp_trends=comp,
        window=window,
        extracted_at=extracted_at,
        record_count=len(records),
    )


class DeterministicEngine:
    """Reference engine: pure, config-driven extraction."""

    def __init__(self, trend_cfg: TrendConfig | None = None, state_cfg: StateConfig | None = None):
        self.trend_cfg = trend_cfg or TrendConfig()
        self.state_cfg = state_cfg or StateConfig()

    def extract(
        self,
        device: DeviceId,
        task_type: TaskType,
        records: Sequence[PerformanceRecord],
    ) -> TrustSemantics:
        return extract_semantics(device, task_type, records, self.trend_cfg, self.state_cfg)
