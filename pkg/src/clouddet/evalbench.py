"""Accuracy and scalability harnesses plus a synthetic labeled generator.

The accuracy harness sweeps the history-window parameter over a grid an
order of magnitude wide and evaluates each setting against a grid of
discrimination thresholds (fractions of points flagged anomalous). The
scalability harness times the full pattern-matching and scoring pipeline
on prefix-truncated series. The generator substitutes for proprietary
labeled traces: a noisy periodic baseline with a steady drift, seeded with
spike, trend-shift, and period-shift anomalies at known indices.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .model import Granularity, MetricSeries, NodePath
from .scoring import (DEFAULT_AGGREGATOR, DEFAULT_SPIKE_MODE, Aggregator,
                      SpikeMode, score_series)
from .store import LabelSet

#: Discrimination thresholds: proportions of points flagged anomalous.
DEFAULT_THRESHOLD_GRID = (0.005, 0.01, 0.02, 0.04, 0.08, 0.16, 0.32, 0.64, 0.8, 0.95)
#: History-window sweep: 5 to 50 in steps of 5.
DEFAULT_L_GRID = tuple(range(5, 51, 5))
#: Default history length for single detection runs.
DEFAULT_WINDOW = 50


@dataclass(frozen=True)
class RocResult:
    """ROC points over the threshold grid plus the full-ordering AUC."""

    points: tuple[tuple[float, float], ...]
    auc: float
    threshold_grid: tuple[float, ...]
    param_value: int = 0

    def __post_init__(self):
        fprs = [p[0] for p in self.points]
        if fprs != sorted(fprs):
            raise ValueError("points must be sorted by FPR")
        if not (0.0 <= self.auc <= 1.0):
            raise ValueError("AUC must lie in [0, 1]")


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def roc_curve(scores: Sequence[float], labels: Sequence[bool],
              thresholds: Sequence[float] = DEFAULT_THRESHOLD_GRID,
              param_value: int = 0) -> RocResult:
    """ROC over top-fraction flagging, with rank-based (tie-averaged) AUC.

    Each threshold q flags the ceil(q*N) highest scores as anomalous. The
    AUC comes from the full score ordering and equals the pairwise-win
    fraction with half credit for ties.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if len(s) != len(y):
        raise ValueError("scores and labels must have equal length")
    n_pos = int(y.sum())
    n_neg = int(len(y) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need at least one positive and one negative label")

    ranks = _average_ranks(s)
    auc = float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))

    order = np.argsort(-s, kind="stable")
    points = {(0.0, 0.0), (1.0, 1.0)}
    for q in thresholds:
        m = min(len(s), int(np.ceil(q * len(s))))
        flagged = order[:m]
        tp = int(y[flagged].sum())
        fp = m - tp
        points.add((fp / n_neg, tp / n_pos))
    ordered = tuple(sorted(points))
    return RocResult(points=ordered, auc=auc,
                     threshold_grid=tuple(thresholds), param_value=param_value)


# ------------------------------------------------------------ synthetic data

@dataclass(frozen=True)
class AnomalyMix:
    spike: float = 0.5
    trend_shift: float = 0.25
    period_shift: float = 0.25

    def __post_init__(self):
        parts = (self.spike, self.trend_shift, self.period_shift)
        if any(p < 0 for p in parts) or abs(sum(parts) - 1.0) > 1e-9:
            raise ValueError("mix fractions must be nonnegative and sum to 1")


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for one labeled series; deterministic under ``seed``."""

    length: int = 1427
    base_period: int = 12
    noise_std: float = 0.1
    anomaly_rate: float = 0.017
    anomaly_mix: AnomalyMix = field(default_factory=AnomalyMix)
    seed: int = 0

    def __post_init__(self):
        if self.length < 10 * self.base_period:
            raise ValueError("series must span at least ten cycles")
        if not (0.0 < self.anomaly_rate <= 0.1):
            raise ValueError("anomaly_rate must lie in (0, 0.1]")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")

    @classmethod
    def from_dict(cls, raw: dict) -> "SynthSpec":
        raw = dict(raw)
        if "anomaly_mix" in raw:
            raw["anomaly_mix"] = AnomalyMix(**raw["anomaly_mix"])
        return cls(**raw)


# Injection magnitudes, relative to the base signal. The drift slope keeps
# the quiet trend score normalized away from the zero-slope blowup; spikes
# clear the 6-sigma floor with margin; the ramp slope multiplier makes the
# shift register within the labeled samples.
_DRIFT_SLOPE_PER_NOISE = 0.1
_SPIKE_SIGMAS = 8.0
_TREND_SLOPE_MULTIPLIER = 40.0
_TREND_SPAN = 6
_EDGE_MARGIN = 120
_EVENT_GAP = 60

_SYNTH_NODE = NodePath("synthetic", "cluster-0", "node-0")
_SYNTH_METRIC = "synthetic"


def _allocate_points(budget: int, mix: AnomalyMix) -> tuple[int, int, int]:
    """Split the labeled-point budget by mix fractions, exactly."""
    raw = np.array([mix.spike, mix.trend_shift, mix.period_shift]) * budget
    counts = np.floor(raw).astype(int)
    remainder = budget - counts.sum()
    order = np.argsort(-(raw - counts))
    for i in range(remainder):
        counts[order[i % 3]] += 1
    return int(counts[0]), int(counts[1]), int(counts[2])


def synth_generate(spec: SynthSpec) -> tuple[MetricSeries, LabelSet]:
    """Generate a labeled series: drifting sine plus noise plus anomalies.

    Spikes are isolated point offsets of 8x the noise scale; trend shifts
    are short steep ramps (a many-fold slope change over a few samples);
    period shifts replace one cycle with the half-period oscillation.
    Labels mark exactly the injected indices.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.length
    t = np.arange(n, dtype=np.float64)
    drift = _DRIFT_SLOPE_PER_NOISE * max(spec.noise_std, 1e-3)
    values = drift * t + np.sin(2 * np.pi * t / spec.base_period)
    values = values + rng.normal(0.0, spec.noise_std, n)
    labels = np.zeros(n, dtype=bool)

    budget = int(round(spec.anomaly_rate * n))
    spike_pts, trend_pts, period_pts = _allocate_points(budget, spec.anomaly_mix)
    period_span = spec.base_period // 2
    events: list[tuple[str, int]] = []          # (kind, span)
    events += [("spike", 1)] * spike_pts
    trend_events, trend_rest = divmod(trend_pts, _TREND_SPAN)
    events += [("trend", _TREND_SPAN)] * trend_events
    period_events, period_rest = divmod(period_pts, period_span)
    events += [("period", period_span)] * period_events
    # partial leftovers become extra spikes so the labeled count is exact
    events += [("spike", 1)] * (trend_rest + period_rest)

    rng.shuffle(events)
    # one event per equal segment of the usable range, jittered within it
    usable = n - 2 * _EDGE_MARGIN
    segment = usable // max(len(events), 1)
    max_span = max((span for _, span in events), default=0)
    if segment < max_span + _EVENT_GAP:
        raise ValueError("could not place anomalies; lower the rate or grow the series")
    positions: list[int] = []
    for i, (_, span) in enumerate(events):
        lo = _EDGE_MARGIN + i * segment
        slack = segment - span - _EVENT_GAP
        positions.append(lo + int(rng.integers(0, slack + 1)))

    sigma = max(spec.noise_std, 1e-3)
    for (kind, span), pos in zip(events, positions):
        idx = np.arange(pos, pos + span)
        if kind == "spike":
            values[pos] += _SPIKE_SIGMAS * sigma * (1 if rng.random() < 0.5 else -1)
        elif kind == "trend":
            ramp = drift * _TREND_SLOPE_MULTIPLIER * np.arange(1, span + 1)
            values[idx] += ramp
            values[pos + span:] += ramp[-1]
        else:
            fast = np.sin(2 * np.pi * idx / period_span)
            values[idx] = drift * idx + fast + rng.normal(0.0, spec.noise_std, span)
        labels[idx] = True

    series = MetricSeries(node=_SYNTH_NODE, metric=_SYNTH_METRIC,
                          granularity=Granularity.HOUR,
                          start_timestamp=0, values=values)
    label_set = LabelSet(flags={(_SYNTH_NODE.node_id, _SYNTH_METRIC): labels})
    return series, label_set


# ------------------------------------------------------------ accuracy bench

@dataclass(frozen=True)
class AccuracyBench:
    results: tuple[RocResult, ...]
    errors: tuple[tuple[int, str], ...]

    @property
    def mean_auc(self) -> float:
        return float(np.mean([r.auc for r in self.results]))


def run_accuracy_bench(series_list: Sequence[MetricSeries], labels: LabelSet,
                       L_grid: Sequence[int] = DEFAULT_L_GRID,
                       threshold_grid: Sequence[float] = DEFAULT_THRESHOLD_GRID,
                       agg: Aggregator = DEFAULT_AGGREGATOR,
                       mode: SpikeMode = DEFAULT_SPIKE_MODE) -> AccuracyBench:
    """One ROC per history-length setting, swept over the threshold grid.

    A failing setting is recorded and skipped; the others still run.
    """
    results = []
    errors = []
    for L in L_grid:
        try:
            all_scores = []
            all_labels = []
            for series in series_list:
                records = score_series(series, L, agg, mode)
                all_scores.extend(r.aggregated for r in records)
                all_labels.extend(labels.labels_for(series))
            results.append(roc_curve(all_scores, all_labels, threshold_grid,
                                     param_value=L))
        except ValueError as exc:
            errors.append((L, str(exc)))
    return AccuracyBench(results=tuple(results), errors=tuple(errors))


# --------------------------------------------------------- scalability bench

@dataclass(frozen=True)
class ScaleRow:
    length: int
    mean_seconds: float
    rep_seconds: tuple[float, ...]


@dataclass(frozen=True)
class ScaleBench:
    rows: tuple[ScaleRow, ...]
    slope: Optional[float]
    r_squared: Optional[float]


def _prefix(series: MetricSeries, length: int) -> MetricSeries:
    return MetricSeries(node=series.node, metric=series.metric,
                        granularity=series.granularity,
                        start_timestamp=series.start_timestamp,
                        values=series.values[:length],
                        missing=series.missing[:length])


def run_scalability_bench(series: MetricSeries,
                          lengths: Sequence[int] = tuple(range(100, 701, 100)),
                          repeats: int = 1,
                          L: int = DEFAULT_WINDOW,
                          detector: Optional[Callable[[MetricSeries], object]] = None,
                          ) -> ScaleBench:
    """Wall-time of the detection pipeline on prefix-truncated series.

    Runs sequentially for timing fidelity. With two or more lengths the
    result carries a least-squares line fit of mean runtime against length
    and its R^2; the default detector is the full scoring pipeline.
    """
    if detector is None:
        def detector(s: MetricSeries):
            return score_series(s, L)
    rows = []
    for length in lengths:
        if length > len(series):
            raise ValueError(f"series shorter than requested length {length}")
        reps = []
        for _ in range(repeats):
            prefix = _prefix(series, length)
            start = time.perf_counter()
            detector(prefix)
            reps.append(time.perf_counter() - start)
        rows.append(ScaleRow(length=length, mean_seconds=float(np.mean(reps)),
                             rep_seconds=tuple(reps)))
    slope = r_squared = None
    if len(rows) >= 2:
        x = np.array([r.length for r in rows], dtype=np.float64)
        y = np.array([r.mean_seconds for r in rows])
        coeffs = np.polyfit(x, y, 1)
        fit = np.polyval(coeffs, x)
        ss_res = float(np.sum((y - fit) ** 2))
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        slope = float(coeffs[0])
        r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return ScaleBench(rows=tuple(rows), slope=slope, r_squared=r_squared)
