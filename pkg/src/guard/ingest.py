"""Metric stream parsing and fixed-window aggregation.

The wire format is JSONL, one object per line:

    {"node": str, "gpu": int, "kind": str, "t": float, "v": float}        device metrics
    {"node": str, "job": str, "kind": "step_time_s", "t": float, "v": float}  step samples

``gpu`` is present only on device metrics; ``job`` only on step samples
(``node`` on a step sample marks node-attributed timing and may be absent
in pure job-level streams). Unknown fields are rejected in strict mode and
ignored otherwise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .model import (
    DeviceRef,
    JobRef,
    MetricKind,
    MetricSample,
    kind_from_wire,
    validate_sample,
)

_KNOWN_FIELDS = {"node", "gpu", "job", "kind", "t", "v"}


class ParseError(ValueError):
    """Malformed wire record; position is a character offset where known."""

    def __init__(self, position: int, reason: str):
        super().__init__(f"at {position}: {reason}")
        self.position = position
        self.reason = reason


class OutOfOrderError(ValueError):
    """A device's timestamps regressed by more than one window."""


@dataclass(frozen=True)
class IngestConfig:
    window_len_s: float = 60.0
    max_gap_windows: int = 2

    def window_index(self, timestamp: float) -> int:
        return int(timestamp // self.window_len_s)


@dataclass(frozen=True)
class WindowStats:
    """Exact aggregates of one (device, kind) over one window."""

    device: DeviceRef | JobRef
    kind: MetricKind
    window_index: int
    mean: float
    min: float
    max: float
    last: float
    count: int


@dataclass(frozen=True)
class DataGap:
    """A (device, kind) stayed silent for more than max_gap_windows windows."""

    device: DeviceRef | JobRef
    kind: MetricKind
    start_window: int
    end_window: int


def parse_metric_record(line: str, strict: bool = False) -> MetricSample:
    """Parse one JSONL record into a validated MetricSample.

    Raises ParseError on malformed text or schema violations and lets
    ValidationError bubble for domain-invariant violations.
    """

    try:
        row = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.pos, f"invalid JSON: {exc.msg}") from None
    if not isinstance(row, dict):
        raise ParseError(0, "record is not a JSON object")
    if strict:
        unknown = set(row) - _KNOWN_FIELDS
        if unknown:
            raise ParseError(0, f"unknown fields {sorted(unknown)}")

    for name in ("kind", "t", "v"):
        if name not in row:
            raise ParseError(0, f"missing field {name!r}")
    kind = kind_from_wire(str(row["kind"]))
    try:
        t = float(row["t"])
        v = float(row["v"])
    except (TypeError, ValueError):
        raise ParseError(0, "t and v must be numbers") from None

    ref: DeviceRef | JobRef
    if kind.job_level:
        if "gpu" in row:
            raise ParseError(0, "gpu field not allowed on job metrics")
        if "job" not in row:
            raise ParseError(0, "step sample missing job field")
        ref = JobRef(job_id=str(row["job"]), node=row.get("node"))
    else:
        if "job" in row:
            raise ParseError(0, "job field only allowed on step samples")
        if "node" not in row or "gpu" not in row:
            raise ParseError(0, "device metric needs node and gpu fields")
        gpu = row["gpu"]
        if not isinstance(gpu, int) or isinstance(gpu, bool):
            raise ParseError(0, "gpu must be an integer")
        ref = DeviceRef(node=str(row["node"]), gpu_index=gpu)

    sample = MetricSample(device=ref, kind=kind, timestamp=t, value=v)
    validate_sample(sample)
    return sample


class _Acc:
    # Values are kept so the mean can use math.fsum: exactly the same result
    # under any permutation of the window's samples.
    __slots__ = ("ref", "values", "lo", "hi", "last_t", "last_v")

    def __init__(self, ref):
        self.ref = ref
        self.values: list[float] = []
        self.lo = 0.0
        self.hi = 0.0
        self.last_t = -1.0
        self.last_v = 0.0

    def add(self, t: float, v: float) -> None:
        if not self.values:
            self.lo = self.hi = v
        else:
            self.lo = min(self.lo, v)
            self.hi = max(self.hi, v)
        self.values.append(v)
        if t >= self.last_t:
            self.last_t = t
            self.last_v = v


@dataclass
class WindowAccumulator:
    """Streaming windower shared by window_aggregate and the simulator loop.

    Per-device ordering must be preserved by the caller; regressions of more
    than one window raise OutOfOrderError.
    """

    cfg: IngestConfig = field(default_factory=IngestConfig)

    def __post_init__(self):
        self._cells: dict[tuple, _Acc] = {}
        self._device_high: dict[tuple, int] = {}

    @staticmethod
    def _device_key(ref: DeviceRef | JobRef) -> tuple:
        if isinstance(ref, JobRef):
            return (1, ref.job_id, ref.node or "")
        return (0, ref.node, ref.gpu_index)

    def add(self, sample: MetricSample) -> None:
        w = self.cfg.window_index(sample.timestamp)
        dkey = self._device_key(sample.device)
        high = self._device_high.get(dkey)
        if high is not None and w < high - 1:
            raise OutOfOrderError(
                f"device {dkey} regressed from window {high} to {w}"
            )
        if high is None or w > high:
            self._device_high[dkey] = w
        cell = self._cells.get((dkey, sample.kind, w))
        if cell is None:
            cell = self._cells[(dkey, sample.kind, w)] = _Acc(sample.device)
        cell.add(sample.timestamp, sample.value)

    def finalize_window(self, window_index: int) -> list[WindowStats]:
        """Emit and drop all stats for one window, sorted by device then kind."""

        out = []
        drop = []
        for key, cell in self._cells.items():
            dkey, kind, w = key
            if w != window_index:
                continue
            drop.append(key)
            out.append(
                WindowStats(
                    device=cell.ref,
                    kind=kind,
                    window_index=w,
                    mean=math.fsum(cell.values) / len(cell.values),
                    min=cell.lo,
                    max=cell.hi,
                    last=cell.last_v,
                    count=len(cell.values),
                )
            )
        for key in drop:
            del self._cells[key]
        out.sort(key=lambda s: (self._device_key(s.device), s.kind.value))
        return out

    def pending_windows(self) -> list[int]:
        return sorted({w for (_, _, w) in self._cells})


def window_aggregate(samples, cfg: IngestConfig | None = None) -> list[WindowStats | DataGap]:
    """Aggregate an ordered sample stream into per-window stats plus gap markers.

    Every input sample lands in exactly one WindowStats (the windowing is a
    partition). A (device, kind) that misses more than cfg.max_gap_windows
    consecutive windows, between its own samples or trailing the stream's
    last window, yields a DataGap marker.
    """

    cfg = cfg or IngestConfig()
    acc = WindowAccumulator(cfg)
    seen: dict[tuple, list[int]] = {}
    refs: dict[tuple, tuple] = {}
    global_max = None
    for sample in samples:
        acc.add(sample)
        w = cfg.window_index(sample.timestamp)
        key = (acc._device_key(sample.device), sample.kind)
        refs[key] = (sample.device, sample.kind)
        windows = seen.setdefault(key, [])
        if not windows or windows[-1] != w:
            windows.append(w)
        global_max = w if global_max is None else max(global_max, w)

    stats: list[WindowStats | DataGap] = []
    for w in acc.pending_windows():
        stats.extend(acc.finalize_window(w))

    gaps: list[DataGap] = []
    for key, windows in seen.items():
        device, kind = refs[key]
        ordered = sorted(set(windows))
        bounds = ordered + [global_max + 1]  # sentinel exposes trailing silence
        for prev, nxt in zip(bounds, bounds[1:]):
            missed = nxt - prev - 1
            if missed > cfg.max_gap_windows:
                gaps.append(DataGap(device, kind, prev + 1, nxt - 1))
    gaps.sort(key=lambda g: (g.start_window, WindowAccumulator._device_key(g.device), g.kind.value))

    return stats + gaps
