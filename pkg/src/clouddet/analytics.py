"""Cross-node computations backing the dashboard views.

Ranking, spatial and temporal score rollups, one-dimensional PCA
projection, series normalization, node feature vectors, 2-D embedding,
local outlier factors, kernel density fields, and range summaries.
All operations are pure over immutable inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .model import Granularity, MetricSeries, NodePath, ScoreRecord
from .tsne import tsne_embed

ArrayLike = Union[np.ndarray, Sequence[float]]


# ---------------------------------------------------------------- ranking

@dataclass(frozen=True)
class NodeRank:
    node: NodePath
    total_score: float
    per_metric_mean: dict[str, float]
    rank: int


def rank_nodes(records: Iterable[ScoreRecord]) -> list[NodeRank]:
    """Rank nodes by their summed aggregated score, descending.

    Ties break on ascending node id. Per-metric means back the bar chart
    on each node's information card.
    """
    totals: dict[NodePath, float] = {}
    by_metric: dict[NodePath, dict[str, list[float]]] = {}
    for rec in records:
        totals[rec.node] = totals.get(rec.node, 0.0) + rec.aggregated
        by_metric.setdefault(rec.node, {}).setdefault(rec.metric, []).append(rec.aggregated)
    if not totals:
        raise ValueError("cannot rank an empty record set")
    ordered = sorted(totals, key=lambda n: (-totals[n], n.node_id))
    out = []
    for i, node in enumerate(ordered, start=1):
        means = {m: float(np.mean(v)) for m, v in sorted(by_metric[node].items())}
        out.append(NodeRank(node=node, total_score=totals[node],
                            per_metric_mean=means, rank=i))
    return out


# ---------------------------------------------------------------- rollups

@dataclass(frozen=True)
class ClusterRollup:
    cluster_id: str
    score: float


@dataclass(frozen=True)
class CenterRollup:
    center_id: str
    score: float
    clusters: list[ClusterRollup] = field(default_factory=list)


def spatial_rollup(records: Iterable[ScoreRecord],
                   hierarchy: Optional[Iterable[NodePath]] = None,
                   cluster_threshold: float = 0.0) -> list[CenterRollup]:
    """Sum node scores up the center/cluster hierarchy.

    Center scores always include every member node; clusters appear only
    when their sum exceeds the threshold. Centers sort descending so the
    most anomalous lead.
    """
    if cluster_threshold < 0:
        raise ValueError("threshold must be >= 0")
    center_sum: dict[str, float] = {}
    cluster_sum: dict[tuple[str, str], float] = {}
    if hierarchy is not None:
        for path in hierarchy:
            center_sum.setdefault(path.center_id, 0.0)
            cluster_sum.setdefault((path.center_id, path.cluster_id), 0.0)
    for rec in records:
        center_sum[rec.node.center_id] = center_sum.get(rec.node.center_id, 0.0) + rec.aggregated
        key = (rec.node.center_id, rec.node.cluster_id)
        cluster_sum[key] = cluster_sum.get(key, 0.0) + rec.aggregated
    out = []
    for center in sorted(center_sum, key=lambda c: (-center_sum[c], c)):
        clusters = [ClusterRollup(cl, s) for (ce, cl), s in cluster_sum.items()
                    if ce == center and s > cluster_threshold]
        clusters.sort(key=lambda c: (-c.score, c.cluster_id))
        out.append(CenterRollup(center_id=center, score=center_sum[center],
                                clusters=clusters))
    return out


@dataclass(frozen=True)
class RollupPoint:
    timestamp_index: int
    per_metric_sum: dict[str, float]
    is_top5: dict[str, bool]


def temporal_rollup(records: Iterable[ScoreRecord],
                    source: Granularity,
                    target: Optional[Granularity] = None) -> list[RollupPoint]:
    """Per-timestamp, per-metric score sums across all nodes.

    Record indices are re-bucketed when a coarser target granularity is
    requested. The five largest sums of each metric are flagged; ties at
    the boundary resolve to the earliest timestamp.
    """
    if target is None:
        target = source
    if target.step_seconds < source.step_seconds:
        raise ValueError("target granularity must be at or coarser than the source")
    factor = target.step_seconds // source.step_seconds

    sums: dict[int, dict[str, float]] = {}
    metrics: set[str] = set()
    for rec in records:
        bucket = rec.timestamp_index // factor
        row = sums.setdefault(bucket, {})
        row[rec.metric] = row.get(rec.metric, 0.0) + rec.aggregated
        metrics.add(rec.metric)

    indices = sorted(sums)
    top5: dict[str, set[int]] = {}
    for metric in metrics:
        ranked = sorted(indices, key=lambda i: (-sums[i].get(metric, 0.0), i))
        top5[metric] = set(ranked[:5])
    return [RollupPoint(timestamp_index=i,
                        per_metric_sum={m: sums[i].get(m, 0.0) for m in sorted(metrics)},
                        is_top5={m: i in top5[m] for m in sorted(metrics)})
            for i in indices]


# ------------------------------------------------- projections and scaling

def _as_matrix(node_series: Union[Sequence[MetricSeries], np.ndarray]) -> np.ndarray:
    if isinstance(node_series, np.ndarray):
        matrix = np.asarray(node_series, dtype=np.float64)
    else:
        lengths = {len(s) for s in node_series}
        if len(lengths) > 1:
            raise ValueError("series must be aligned to one length")
        matrix = np.vstack([np.asarray(s.values, dtype=np.float64) for s in node_series])
    if matrix.ndim != 2:
        raise ValueError("expected an r x n matrix of metric rows")
    return matrix


def pca_project(node_series: Union[Sequence[MetricSeries], np.ndarray]) -> np.ndarray:
    """Project a node's metrics onto their first principal component.

    Metrics are standardized first; zero-variance metrics are dropped. The
    sign is fixed so the largest-magnitude loading is positive.
    """
    matrix = _as_matrix(node_series)
    r, n = matrix.shape
    if r < 1 or n < 1:
        raise ValueError("projection needs at least one metric and one timestamp")
    means = matrix.mean(axis=1, keepdims=True)
    stds = matrix.std(axis=1, keepdims=True)
    keep = stds[:, 0] > 1e-12 * np.maximum(np.abs(means[:, 0]), 1.0)
    if not np.any(keep):
        return np.zeros(n)
    z = (matrix[keep] - means[keep]) / stds[keep]
    cov = (z @ z.T) / n
    eigvals, eigvecs = np.linalg.eigh(cov)
    loading = eigvecs[:, -1]
    pivot = int(np.argmax(np.abs(loading)))
    if loading[pivot] < 0:
        loading = -loading
    return loading @ z


def normalize_series(series: Union[MetricSeries, ArrayLike]) -> np.ndarray:
    """Affine map of a series onto [-1, 1]; a constant series maps to zeros."""
    values = series.values if isinstance(series, MetricSeries) else np.asarray(series, dtype=np.float64)
    if len(values) == 0:
        raise ValueError("cannot normalize an empty series")
    lo, hi = float(values.min()), float(values.max())
    if hi - lo <= 1e-12 * max(abs(hi), abs(lo), 1.0):
        return np.zeros(len(values))
    return (2.0 * (values - lo) / (hi - lo)) - 1.0


@dataclass(frozen=True)
class FeatureVector:
    """Node behavior flattened metric-major within each timestamp."""

    values: np.ndarray
    r: int
    n: int

    def __post_init__(self):
        if len(self.values) != self.r * self.n:
            raise ValueError("feature vector length must be r * n")


def node_feature_vector(node_series: Union[Sequence[MetricSeries], np.ndarray]) -> FeatureVector:
    """Flatten aligned metric rows: all metrics at t0, then all at t1, ..."""
    matrix = _as_matrix(node_series)
    r, n = matrix.shape
    return FeatureVector(values=matrix.T.ravel().copy(), r=r, n=n)


def standardize_features(matrix: np.ndarray,
                         metric_count: int) -> np.ndarray:
    """Standardize stacked node feature vectors per metric, across nodes.

    ``matrix`` holds one feature vector per row, each laid out metric-major
    within timestamps (so columns j with j % metric_count == m belong to
    metric m). Zero-variance metrics are left centered.
    """
    out = np.array(matrix, dtype=np.float64, copy=True)
    for m in range(metric_count):
        cols = np.arange(m, out.shape[1], metric_count)
        block = out[:, cols]
        mean = block.mean()
        std = block.std()
        if std > 1e-12 * max(abs(mean), 1.0):
            out[:, cols] = (block - mean) / std
        else:
            out[:, cols] = block - mean
    return out


# ---------------------------------------------------------------- embedding

@dataclass(frozen=True)
class EmbedResult:
    positions: np.ndarray
    method: str
    fell_back: bool


def _pca_positions(X: np.ndarray) -> np.ndarray:
    centered = X - X.mean(axis=0, keepdims=True)
    # SVD handles rank-deficient input; missing directions embed at zero
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    scores = centered @ vt[:2].T
    if scores.shape[1] < 2:
        scores = np.hstack([scores, np.zeros((len(X), 2 - scores.shape[1]))])
    return scores


def embed_2d(vectors: ArrayLike, method: str = "tsne",
             perplexity: float = 30.0, seed: int = 0) -> EmbedResult:
    """Place feature vectors in the plane with exact t-SNE or PCA.

    Point sets too small to support the (capped) perplexity fall back to
    PCA with the ``fell_back`` flag raised.
    """
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("expected one vector per row")
    if method not in ("tsne", "pca"):
        raise ValueError(f"unknown embedding method {method!r}")
    n = X.shape[0]
    if method == "pca":
        return EmbedResult(_pca_positions(X), "pca", False)
    effective = min(perplexity, (n - 1) / 3.0)
    spread = float(X.max(initial=0.0) - X.min(initial=0.0)) if X.size else 0.0
    degenerate = spread <= 1e-12 * max(1.0, float(np.abs(X).max(initial=0.0)))
    if n < 4 or effective < 1.0 or degenerate:
        return EmbedResult(_pca_positions(X), "pca", True)
    return EmbedResult(tsne_embed(X, perplexity=effective, seed=seed), "tsne", False)


# ---------------------------------------------------------------- outliers

@dataclass(frozen=True)
class LofResult:
    raw: np.ndarray
    normalized: np.ndarray


def lof_scores(vectors: ArrayLike, k: int) -> LofResult:
    """Local outlier factor with k neighbors, plus a [-1, 1] rescaling.

    The k-distance neighborhood keeps all distance ties; a tiny stabilizer
    keeps densities finite for coincident points. The minimum raw score
    maps to -1 and the maximum to +1; an all-equal profile maps to 0.
    """
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("expected one vector per row")
    n = len(X)
    if k < 2:
        raise ValueError("k must be >= 2")
    if n < k + 1:
        raise ValueError("need at least k+1 points")

    diff = X[:, None, :] - X[None, :, :]
    dists = np.sqrt(np.sum(diff * diff, axis=-1))
    np.fill_diagonal(dists, np.inf)
    sorted_d = np.sort(dists, axis=1)
    kdist = sorted_d[:, k - 1]
    neighbors = dists <= kdist[:, None]
    counts = neighbors.sum(axis=1)

    reach = np.maximum(kdist[None, :], dists)
    avg_reach = np.where(neighbors, reach, 0.0).sum(axis=1) / counts
    lrd = 1.0 / (avg_reach + 1e-10)
    raw = np.where(neighbors, lrd[None, :], 0.0).sum(axis=1) / counts / lrd

    lo, hi = float(raw.min()), float(raw.max())
    if hi - lo <= 1e-9 * max(abs(hi), 1.0):
        normalized = np.zeros(n)
    else:
        normalized = (2.0 * (raw - lo) / (hi - lo)) - 1.0
    return LofResult(raw=raw, normalized=normalized)


# ---------------------------------------------------------------- density

@dataclass(frozen=True)
class DensityField:
    """Gaussian KDE evaluated on a regular grid; grid[i, j] is the density
    at (x_centers[i], y_centers[j])."""

    grid: np.ndarray
    x_centers: np.ndarray
    y_centers: np.ndarray
    bandwidth: tuple[float, float]
    kernel: str = "gaussian"


def kde_density(positions: ArrayLike, grid_resolution: int = 64,
                bandwidth: Optional[float] = None,
                margin_bandwidths: float = 4.0) -> DensityField:
    """Kernel density field over 2-D positions.

    Per-axis bandwidths default to Scott's rule n^(-1/6) * sigma_axis with
    a floor of 1e-3 of the occupied extent for degenerate spreads, and the
    density normalizes as 1/(n*hx*hy) so the field integrates to one.
    """
    pos = np.asarray(positions, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[1] != 2:
        raise ValueError("positions must be an (n, 2) array")
    n = len(pos)
    if n < 1:
        raise ValueError("need at least one position")
    if grid_resolution < 2:
        raise ValueError("grid resolution must be >= 2")

    extent = max(float(np.ptp(pos[:, 0])), float(np.ptp(pos[:, 1])), 1.0)
    floor = 1e-3 * extent
    if bandwidth is not None:
        if bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        hx = hy = float(bandwidth)
    else:
        scale = n ** (-1.0 / 6.0)
        hx = max(float(pos[:, 0].std()) * scale, floor)
        hy = max(float(pos[:, 1].std()) * scale, floor)

    pad_x, pad_y = margin_bandwidths * hx, margin_bandwidths * hy
    x_centers = np.linspace(pos[:, 0].min() - pad_x, pos[:, 0].max() + pad_x, grid_resolution)
    y_centers = np.linspace(pos[:, 1].min() - pad_y, pos[:, 1].max() + pad_y, grid_resolution)

    gx = np.exp(-0.5 * ((x_centers[:, None] - pos[None, :, 0]) / hx) ** 2)
    gy = np.exp(-0.5 * ((y_centers[:, None] - pos[None, :, 1]) / hy) ** 2)
    grid = (gx @ gy.T) / (2.0 * np.pi * n * hx * hy)
    return DensityField(grid=grid, x_centers=x_centers, y_centers=y_centers,
                        bandwidth=(hx, hy))


@dataclass(frozen=True)
class ClusterPoint:
    node: NodePath
    position: tuple[float, float]
    lof: float

    def __post_init__(self):
        if not (-1.0 <= self.lof <= 1.0):
            raise ValueError("normalized lof must lie in [-1, 1]")


# ---------------------------------------------------------------- summaries

@dataclass(frozen=True)
class MagnetSummary:
    max: float
    mean: float
    min: float
    std: float


def magnet_summary(series: Union[MetricSeries, ArrayLike],
                   start: int = 0, stop: Optional[int] = None) -> MagnetSummary:
    """Max/mean/min plus population std of a collapsed index range."""
    values = series.values if isinstance(series, MetricSeries) else np.asarray(series, dtype=np.float64)
    window = values[start:stop]
    if len(window) == 0:
        raise ValueError("range must be non-empty")
    return MagnetSummary(max=float(window.max()), mean=float(window.mean()),
                         min=float(window.min()), std=float(window.std()))


def cluster_baseline(cluster_series: Sequence[MetricSeries], metric: str) -> float:
    """Mean of one metric over every carrying node in a data cluster."""
    chunks = [s.values for s in cluster_series if s.metric == metric and len(s) > 0]
    if not chunks:
        raise ValueError(f"no node in the cluster carries metric {metric!r}")
    return float(np.concatenate(chunks).mean())
