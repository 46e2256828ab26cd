"""Shared domain types: metric series, node hierarchy, history windows, scores.

All types are immutable after construction and safe to share across
concurrent workers. Timestamps are index-based internally; conversion to
wall-clock time happens only at API boundaries.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class Granularity(enum.Enum):
    """Sampling resolution of a metric series."""

    MINUTE = "minute"
    HOUR = "hour"
    DAY = "day"

    @property
    def step_seconds(self) -> int:
        return _STEP_SECONDS[self]

    @property
    def code(self) -> int:
        """Stable small-integer code used by the snapshot format."""
        return _CODES[self]

    @classmethod
    def from_code(cls, code: int) -> "Granularity":
        for g, c in _CODES.items():
            if c == code:
                return g
        raise ValueError(f"unknown granularity code {code}")

    @classmethod
    def parse(cls, text: str) -> "Granularity":
        """Accept full names and the short CLI forms m/h/d."""
        key = text.strip().lower()
        aliases = {
            "m": cls.MINUTE, "min": cls.MINUTE, "minute": cls.MINUTE,
            "h": cls.HOUR, "hour": cls.HOUR,
            "d": cls.DAY, "day": cls.DAY,
        }
        if key not in aliases:
            raise ValueError(f"unknown granularity {text!r}")
        return aliases[key]


_STEP_SECONDS = {Granularity.MINUTE: 60, Granularity.HOUR: 3600, Granularity.DAY: 86400}
_CODES = {Granularity.MINUTE: 0, Granularity.HOUR: 1, Granularity.DAY: 2}


@dataclass(frozen=True, order=True)
class NodePath:
    """Fully qualified location of a compute node in the center/cluster tree."""

    center_id: str
    cluster_id: str
    node_id: str

    def __post_init__(self):
        if not (self.center_id and self.cluster_id and self.node_id):
            raise ValueError("center_id, cluster_id and node_id must be non-empty")

    def __str__(self) -> str:
        return f"{self.center_id}:{self.cluster_id}:{self.node_id}"

    @classmethod
    def parse(cls, text: str) -> "NodePath":
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"expected center:cluster:node, got {text!r}")
        return cls(*parts)


def _readonly(arr: np.ndarray, dtype) -> np.ndarray:
    out = np.asarray(arr, dtype=dtype)
    if out.ndim != 1:
        raise ValueError("expected a 1-D array")
    out = out.copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class MetricSeries:
    """One metric's timestamped values for one compute node at a fixed granularity.

    Timestamps are implied: the i-th value sits at
    ``start_timestamp + i * granularity.step_seconds``. ``missing`` flags
    indices whose values were absent in the source and repaired at ingest.
    """

    node: NodePath
    metric: str
    granularity: Granularity
    start_timestamp: int
    values: np.ndarray
    missing: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        values = _readonly(self.values, np.float64)
        missing = self.missing
        if missing is None:
            missing = np.zeros(len(values), dtype=bool)
        missing = _readonly(missing, bool)
        if len(missing) != len(values):
            raise ValueError("missing mask length must match values")
        if not np.all(np.isfinite(values[~missing])):
            raise ValueError("present values must be finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing", missing)

    def __len__(self) -> int:
        return len(self.values)

    def timestamp_of(self, index: int) -> int:
        return self.start_timestamp + index * self.granularity.step_seconds

    def index_of(self, timestamp: int) -> int:
        """Index of the sample bucket containing ``timestamp`` (may be out of range)."""
        return (timestamp - self.start_timestamp) // self.granularity.step_seconds

    def with_values(self, values, missing=None) -> "MetricSeries":
        return MetricSeries(self.node, self.metric, self.granularity,
                            self.start_timestamp, values, missing)


@dataclass(frozen=True)
class HistoryWindow:
    """The most recent history ending at a sample: L prior points plus the point itself."""

    end_index: int
    length: int
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 1:
            raise ValueError("window data must be 1-D")
        if self.end_index < self.length:
            raise ValueError("end_index must be >= length")
        if len(data) != self.length + 1:
            raise ValueError(f"window must hold length+1 points, got {len(data)}")
        view = data.view()
        view.setflags(write=False)
        object.__setattr__(self, "data", view)

    @property
    def n_points(self) -> int:
        """Total number of samples in the window (L + 1)."""
        return self.length + 1


@dataclass(frozen=True)
class ScoreRecord:
    """Component and aggregated anomaly scores for one node/metric/timestamp."""

    node: NodePath
    metric: str
    timestamp_index: int
    periodic: float
    trend: float
    spike: float
    aggregated: float
    warmup: bool = False

    def __post_init__(self):
        for name in ("periodic", "trend", "spike", "aggregated"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} score {v} outside [0, 1]")
        if self.warmup and (self.periodic or self.trend or self.spike or self.aggregated):
            raise ValueError("warmup records must carry all-zero scores")


def make_windows(series: MetricSeries, L: int) -> list[HistoryWindow]:
    """Slice a series into overlapping history windows of L+1 points.

    One window per end index n in [L, len-1]. A series shorter than L+1
    yields an empty list (the caller treats everything as warmup).
    """
    if L < 2:
        raise ValueError("window length L must be >= 2")
    values = series.values
    n = len(values)
    if n < L + 1:
        return []
    out = []
    for end in range(L, n):
        data = values[end - L:end + 1]
        out.append(HistoryWindow(end_index=end, length=L, data=data))
    return out
