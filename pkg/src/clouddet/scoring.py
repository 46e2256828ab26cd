"""Component anomaly scores, their aggregation, and the per-series pipeline.

Three patterns are scored per timestamp from the most recent history window
only: a seasonal level shift (relative change of the detected period), a
trend level shift (relative change of the trend slope), and an unexpected
spike (residual exceeding the three-sigma band of the preceding residuals).
Each score lives in [0, 1]; an aggregation selector combines them.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .decomposition import default_stl_params, loess_smooth, stl_decompose
from .model import HistoryWindow, MetricSeries, ScoreRecord, make_windows
from .periodicity import detect_period

#: Absolute floor below which a slope counts as zero.
SLOPE_EPS = 1e-9
#: Relative floor applied to a vanishing residual sigma.
SIGMA_EPS = 1e-6


class SpikeMode(enum.Enum):
    """Shape of the spike score around the residual mean.

    ``hinge`` treats residuals inside the three-sigma band as normal and is
    the default; ``verbatim`` keeps the raw absolute-ratio form, which marks
    residuals near the mean as maximally anomalous.
    """

    VERBATIM = "verbatim"
    HINGE = "hinge"

    @classmethod
    def parse(cls, text: str) -> "SpikeMode":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(f"unknown spike mode {text!r}") from None


class AggKind(enum.Enum):
    MIN = "min"
    MAX = "max"
    WEIGHTED_AVERAGE = "weighted_average"


@dataclass(frozen=True)
class Aggregator:
    """Selector combining the three component scores."""

    kind: AggKind
    weights: Optional[tuple[float, float, float]] = None

    def __post_init__(self):
        if self.kind is AggKind.WEIGHTED_AVERAGE:
            if self.weights is None:
                object.__setattr__(self, "weights", (1 / 3, 1 / 3, 1 / 3))
            w = self.weights
            if len(w) != 3 or any(x < 0 for x in w) or abs(sum(w) - 1.0) > 1e-9:
                raise ValueError("weights must be 3 nonnegative values summing to 1")
        elif self.weights is not None:
            raise ValueError(f"{self.kind.value} aggregator takes no weights")

    @classmethod
    def parse(cls, text: str) -> "Aggregator":
        """Parse CLI forms: min, max, avg, avg:w1,w2,w3."""
        body = text.strip().lower()
        if body == "min":
            return cls(AggKind.MIN)
        if body == "max":
            return cls(AggKind.MAX)
        if body == "avg":
            return cls(AggKind.WEIGHTED_AVERAGE)
        if body.startswith("avg:"):
            parts = body[4:].split(",")
            if len(parts) != 3:
                raise ValueError("avg takes exactly three weights")
            return cls(AggKind.WEIGHTED_AVERAGE, tuple(float(p) for p in parts))
        raise ValueError(f"unknown aggregator {text!r}")


DEFAULT_AGGREGATOR = Aggregator(AggKind.WEIGHTED_AVERAGE)
DEFAULT_SPIKE_MODE = SpikeMode.HINGE


@dataclass(frozen=True)
class TrendState:
    """Estimated slope of a window's trend component, in value units per sample."""

    slope: float

    def __post_init__(self):
        if not np.isfinite(self.slope):
            raise ValueError("slope must be finite")


@dataclass(frozen=True)
class ResidualStats:
    """Mean and spread of the residuals preceding the scored point."""

    mean: float
    std: float
    count: int

    def __post_init__(self):
        if self.std < 0:
            raise ValueError("std must be nonnegative")
        if self.count < 1:
            raise ValueError("count must be positive")


def score_periodic(T_n: float, T_prev: float) -> float:
    """Relative shift between consecutive period estimates, clamped to [0, 1]."""
    if T_prev <= 0:
        raise ValueError("previous period must be positive")
    return min(abs(T_n - T_prev) / T_prev, 1.0)


def estimate_slope(trend: Sequence[float]) -> TrendState:
    """Ordinary least-squares slope of the trend against the sample index."""
    y = np.asarray(trend, dtype=np.float64)
    n = len(y)
    if n < 2:
        raise ValueError("slope estimation needs at least two points")
    x = np.arange(n, dtype=np.float64)
    xc = x - x.mean()
    slope = float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))
    return TrendState(slope=slope)


def score_trend(K_n: float, K_prev: float, eps: float = SLOPE_EPS) -> float:
    """Relative shift between consecutive trend slopes, clamped to [0, 1].

    A previous slope within eps of zero cannot normalize the ratio; the
    score is then 0 for a still-flat trend and 1 for a trend appearing
    out of nowhere.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if abs(K_prev) > eps:
        return min(abs((K_n - K_prev) / K_prev), 1.0)
    return 0.0 if abs(K_n) <= eps else 1.0


def score_spike(R_n: float, stats: ResidualStats,
                mode: SpikeMode = DEFAULT_SPIKE_MODE,
                eps: float = SIGMA_EPS) -> float:
    """Score the newest residual against the three-sigma band of its history."""
    if stats.count < 2:
        raise ValueError("residual stats need at least two points")
    if eps <= 0:
        raise ValueError("eps must be positive")
    sigma = max(stats.std, eps * max(abs(stats.mean), 1.0))
    band = 3.0 * sigma
    if mode is SpikeMode.VERBATIM:
        return min(abs(R_n - stats.mean - band) / band, 1.0)
    excess = max(abs(R_n - stats.mean) - band, 0.0)
    return min(excess / band, 1.0)


def aggregate(periodic: float, trend: float, spike: float,
              agg: Aggregator = DEFAULT_AGGREGATOR) -> float:
    """Combine the three component scores into one value in [0, 1]."""
    for v in (periodic, trend, spike):
        if not (0.0 <= v <= 1.0):
            raise ValueError(f"component score {v} outside [0, 1]")
    if agg.kind is AggKind.MIN:
        return min(periodic, trend, spike)
    if agg.kind is AggKind.MAX:
        return max(periodic, trend, spike)
    w = agg.weights
    return min(w[0] * periodic + w[1] * trend + w[2] * spike, 1.0)


def _fallback_trend_width(n_points: int) -> int:
    """Loess width for windows without a validated period: about half the window."""
    width = max(3, int(np.ceil(n_points / 2)))
    return width if width % 2 == 1 else width + 1


@dataclass(frozen=True)
class _WindowState:
    period: Optional[float]
    slope: float
    newest_residual: float
    stats: ResidualStats


def _analyze_window(window: HistoryWindow, granularity) -> _WindowState:
    """Decompose one window and extract the quantities the scores need."""
    estimate = detect_period(window)
    n = window.n_points
    period = None
    if estimate.present and n >= 2 * max(2, round(estimate.period)):
        params = default_stl_params(estimate, granularity)
        components = stl_decompose(window, params)
        trend_seq = components.trend
        residual = components.residual
        period = estimate.period
    else:
        trend_seq = loess_smooth(window.data, _fallback_trend_width(n), degree=1)
        residual = np.asarray(window.data) - trend_seq
    history = residual[:-1]
    stats = ResidualStats(mean=float(history.mean()),
                          std=float(history.std()),
                          count=len(history))
    return _WindowState(period=period,
                        slope=estimate_slope(trend_seq).slope,
                        newest_residual=float(residual[-1]),
                        stats=stats)


def score_series(series: MetricSeries, L: int,
                 agg: Aggregator = DEFAULT_AGGREGATOR,
                 mode: SpikeMode = DEFAULT_SPIKE_MODE) -> list[ScoreRecord]:
    """Score every timestamp of a series from its trailing history windows.

    Indices below L and the first windowed index (which has no previous
    window to compare against) are emitted as all-zero warmup records. The
    period shift is scored only when both the current and previous windows
    carry a validated period.
    """
    if L < 8:
        raise ValueError("L must be >= 8")
    records: list[ScoreRecord] = []

    def warmup(index: int) -> ScoreRecord:
        return ScoreRecord(series.node, series.metric, index,
                           0.0, 0.0, 0.0, 0.0, warmup=True)

    windows = make_windows(series, L)
    n_total = len(series)
    if not windows:
        return [warmup(i) for i in range(n_total)]

    records.extend(warmup(i) for i in range(L))
    prev: Optional[_WindowState] = None
    for window in windows:
        state = _analyze_window(window, series.granularity)
        if prev is None:
            records.append(warmup(window.end_index))
        else:
            if state.period is not None and prev.period is not None:
                periodic = score_periodic(state.period, prev.period)
            else:
                periodic = 0.0
            trend = score_trend(state.slope, prev.slope)
            spike = score_spike(state.newest_residual, state.stats, mode)
            records.append(ScoreRecord(
                series.node, series.metric, window.end_index,
                periodic=periodic, trend=trend, spike=spike,
                aggregated=aggregate(periodic, trend, spike, agg)))
        prev = state
    return records


def score_many(series_list: Sequence[MetricSeries], L: int,
               agg: Aggregator = DEFAULT_AGGREGATOR,
               mode: SpikeMode = DEFAULT_SPIKE_MODE,
               max_workers: Optional[int] = None,
               progress: Optional[Callable[[int, int], None]] = None,
               ) -> list[list[ScoreRecord]]:
    """Score several series concurrently, preserving input order.

    Each (node, metric) series is independent, so the pool shares no
    mutable state; ``progress`` receives (done, total) after each series.
    """
    total = len(series_list)
    results: list[Optional[list[ScoreRecord]]] = [None] * total
    done = 0
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = {pool.submit(score_series, s, L, agg, mode): i
                   for i, s in enumerate(series_list)}
        for future, i in futures.items():
            results[i] = future.result()
            done += 1
            if progress is not None:
                progress(done, total)
    return results  # type: ignore[return-value]
