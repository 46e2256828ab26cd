"""HTTP JSON API serving detection results and view-backing analytics.

Read endpoints are backed by the most recent completed detection job and
return identical payloads for identical job state. Detection runs
asynchronously on a worker pool; results are published all at once, so
readers never observe a partially scored job.
"""

from __future__ import annotations

import math
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from fastapi import FastAPI, Query, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from . import analytics
from .evalbench import DEFAULT_WINDOW
from .model import Granularity, MetricSeries, NodePath, ScoreRecord
from .scoring import Aggregator, SpikeMode, score_many
from .store import MetricStore, Selector, align, query


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


@dataclass
class JobResult:
    records: list[list[ScoreRecord]]
    series: list[MetricSeries]
    granularity: Granularity
    start_timestamp: int
    length: int


@dataclass
class DetectionJob:
    job_id: str
    params: dict
    status: str = "pending"          # pending | running | done | failed
    progress: float = 0.0
    error: Optional[str] = None
    result: Optional[JobResult] = None


@dataclass
class AppState:
    store: MetricStore
    jobs: dict[str, DetectionJob] = field(default_factory=dict)
    jobs_by_params: dict[tuple, DetectionJob] = field(default_factory=dict)
    latest_done: Optional[DetectionJob] = None
    lock: threading.Lock = field(default_factory=threading.Lock)
    pool: ThreadPoolExecutor = field(default_factory=lambda: ThreadPoolExecutor(max_workers=2))


def _finite(value: float) -> float:
    v = float(value)
    if not math.isfinite(v):
        raise ApiError(500, "non_finite", "computed a non-finite value")
    return v


def _f_list(values) -> list[float]:
    return [_finite(v) for v in values]


def _parse_granularity(text: Optional[str], fallback: Granularity) -> Granularity:
    if text is None:
        return fallback
    try:
        return Granularity.parse(text)
    except ValueError as exc:
        raise ApiError(400, "bad_granularity", str(exc))


def _run_job(state: AppState, job: DetectionJob) -> None:
    try:
        job.status = "running"
        dataset = state.store.get(job.params["dataset_id"])
        granularity = Granularity.parse(job.params["granularity"])
        series = query(dataset, Selector(granularity=granularity))
        if not series:
            raise ValueError("dataset holds no series")

        def on_progress(done: int, total: int) -> None:
            job.progress = done / total

        records = score_many(series, job.params["L"],
                             Aggregator.parse(job.params["aggregator"]),
                             SpikeMode.parse(job.params["spike_mode"]),
                             progress=on_progress)
        result = JobResult(records=records, series=list(series),
                           granularity=granularity,
                           start_timestamp=series[0].start_timestamp,
                           length=len(series[0]))
        job.result = result
        job.progress = 1.0
        job.status = "done"
        with state.lock:
            state.latest_done = job
    except Exception as exc:  # failure is a terminal job state, not a crash
        job.error = str(exc)
        job.status = "failed"


def _job_payload(job: DetectionJob) -> dict:
    payload = {"job_id": job.job_id, "status": job.status,
               "progress": round(job.progress, 4), "params": job.params}
    if job.error:
        payload["error"] = job.error
    return payload


def _require_result(state: AppState) -> JobResult:
    job = state.latest_done
    if job is None or job.result is None:
        raise ApiError(409, "no_completed_job", "run POST /api/detect first")
    return job.result


def _index_range(result: JobResult, from_ts: Optional[int],
                 to_ts: Optional[int]) -> tuple[int, int]:
    step = result.granularity.step_seconds
    start = result.start_timestamp
    i0 = 0 if from_ts is None else max(0, (from_ts - start) // step)
    i1 = result.length if to_ts is None else min(result.length,
                                                 -(-(to_ts - start) // step))
    if i1 <= i0:
        raise ApiError(400, "empty_range", "requested time range holds no samples")
    return int(i0), int(i1)


def _records_in_range(result: JobResult, i0: int, i1: int) -> list[ScoreRecord]:
    return [rec for recs in result.records for rec in recs
            if i0 <= rec.timestamp_index < i1]


def _resolve_node(result: JobResult, node_id: str) -> NodePath:
    if ":" in node_id:
        path = NodePath.parse(node_id)
        if any(s.node == path for s in result.series):
            return path
        raise ApiError(404, "unknown_node", f"node {node_id!r} not found")
    matches = {s.node for s in result.series if s.node.node_id == node_id}
    if not matches:
        raise ApiError(404, "unknown_node", f"node {node_id!r} not found")
    if len(matches) > 1:
        raise ApiError(400, "ambiguous_node",
                       f"node id {node_id!r} matches several nodes; "
                       "use center:cluster:node")
    return matches.pop()


def create_app(store: MetricStore) -> FastAPI:
    app = FastAPI(title="clouddet", docs_url=None, redoc_url=None)
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    state = AppState(store=store)
    app.state.detector = state

    @app.exception_handler(ApiError)
    async def on_api_error(_: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status,
                            content={"code": exc.code, "message": exc.message})

    @app.post("/api/detect", status_code=202)
    async def detect(body: dict):
        dataset_id = body.get("dataset_id")
        if not dataset_id or store.get(dataset_id) is None:
            raise ApiError(404, "unknown_dataset", f"dataset {dataset_id!r} not loaded")
        try:
            L = int(body.get("L", DEFAULT_WINDOW))
            if L < 8:
                raise ValueError("L must be >= 8")
            params = {
                "dataset_id": dataset_id,
                "L": L,
                "aggregator": str(body.get("aggregator", "avg")),
                "spike_mode": str(body.get("spike_mode", "hinge")),
                "granularity": str(body.get("granularity", "hour")),
            }
            Aggregator.parse(params["aggregator"])
            SpikeMode.parse(params["spike_mode"])
            Granularity.parse(params["granularity"])
        except (TypeError, ValueError) as exc:
            raise ApiError(400, "bad_params", str(exc))

        key = tuple(sorted(params.items()))
        with state.lock:
            existing = state.jobs_by_params.get(key)
            if existing is not None and existing.status != "failed":
                return _job_payload(existing)
            job = DetectionJob(job_id=uuid.uuid4().hex[:12], params=params)
            state.jobs[job.job_id] = job
            state.jobs_by_params[key] = job
        state.pool.submit(_run_job, state, job)
        return _job_payload(job)

    @app.get("/api/jobs/{job_id}")
    async def job_status(job_id: str):
        job = state.jobs.get(job_id)
        if job is None:
            raise ApiError(404, "unknown_job", f"job {job_id!r} not found")
        return _job_payload(job)

    @app.get("/api/overview/spatial")
    async def spatial(top: int = 20, threshold: float = 0.0,
                      from_ts: Optional[int] = Query(None, alias="from"),
                      to_ts: Optional[int] = Query(None, alias="to")):
        result = _require_result(state)
        if top < 1:
            raise ApiError(400, "bad_params", "top must be >= 1")
        if threshold < 0:
            raise ApiError(400, "bad_params", "threshold must be >= 0")
        i0, i1 = _index_range(result, from_ts, to_ts)
        hierarchy = [s.node for s in result.series]
        rollup = analytics.spatial_rollup(_records_in_range(result, i0, i1),
                                          hierarchy, threshold)
        return {"centers": [
            {"center": c.center_id, "score": _finite(c.score),
             "clusters": [{"cluster": cl.cluster_id, "score": _finite(cl.score)}
                          for cl in c.clusters]}
            for c in rollup[:top]]}

    @app.get("/api/overview/temporal")
    async def temporal(granularity: Optional[str] = None,
                       from_ts: Optional[int] = Query(None, alias="from"),
                      to_ts: Optional[int] = Query(None, alias="to")):
        result = _require_result(state)
        target = _parse_granularity(granularity, result.granularity)
        if target.step_seconds < result.granularity.step_seconds:
            raise ApiError(400, "bad_granularity",
                           "cannot roll up to a finer granularity than the job's")
        i0, i1 = _index_range(result, from_ts, to_ts)
        points = analytics.temporal_rollup(_records_in_range(result, i0, i1),
                                           result.granularity, target)
        factor = target.step_seconds // result.granularity.step_seconds
        return {"granularity": target.value,
                "start_timestamp": result.start_timestamp,
                "step_seconds": target.step_seconds,
                "points": [
                    {"timestamp": result.start_timestamp
                     + p.timestamp_index * factor * result.granularity.step_seconds,
                     "sums": {m: _finite(v) for m, v in p.per_metric_sum.items()},
                     "top5": p.is_top5}
                    for p in points]}

    @app.get("/api/nodes/rank")
    async def node_rank(from_ts: Optional[int] = Query(None, alias="from"),
                      to_ts: Optional[int] = Query(None, alias="to"),
                        offset: int = 0, limit: int = 50):
        result = _require_result(state)
        if offset < 0 or limit < 1:
            raise ApiError(400, "bad_params", "offset must be >= 0 and limit >= 1")
        i0, i1 = _index_range(result, from_ts, to_ts)
        ranks = analytics.rank_nodes(_records_in_range(result, i0, i1))
        page = ranks[offset:offset + limit]
        return {"total": len(ranks), "ranks": [
            {"node": str(r.node), "rank": r.rank, "score": _finite(r.total_score),
             "per_metric_mean": {m: _finite(v) for m, v in r.per_metric_mean.items()}}
            for r in page]}

    @app.get("/api/nodes/{node_id}/performance")
    async def node_performance(node_id: str, mode: str = "raw",
                               from_ts: Optional[int] = Query(None, alias="from"),
                               to_ts: Optional[int] = Query(None, alias="to")):
        result = _require_result(state)
        if mode not in ("raw", "deviation", "normalized", "pca"):
            raise ApiError(400, "bad_params", f"unknown mode {mode!r}")
        path = _resolve_node(result, node_id)
        i0, i1 = _index_range(result, from_ts, to_ts)

        node_series = [s for s in result.series if s.node == path]
        node_series.sort(key=lambda s: s.metric)
        step = result.granularity.step_seconds

        if mode == "pca":
            block = align(node_series, result.start_timestamp + i0 * step,
                          result.start_timestamp + i1 * step)
            metrics_payload = {"pca": _f_list(analytics.pca_project(block.matrix))}
        else:
            metrics_payload = {}
            for s in node_series:
                window = s.values[i0:i1]
                if mode == "deviation":
                    cluster_series = [c for c in result.series
                                      if c.node.center_id == path.center_id
                                      and c.node.cluster_id == path.cluster_id
                                      and c.metric == s.metric]
                    sliced = [MetricSeries(c.node, c.metric, c.granularity,
                                           c.start_timestamp, c.values[i0:i1],
                                           c.missing[i0:i1]) for c in cluster_series]
                    base = analytics.cluster_baseline(sliced, s.metric)
                    window = window - base
                elif mode == "normalized":
                    window = analytics.normalize_series(window)
                metrics_payload[s.metric] = _f_list(window)

        causes = ("periodic", "trend", "spike")
        scores_payload = {}
        cause_payload = {}
        for series, records in zip(result.series, result.records):
            if series.node != path:
                continue
            window = [r for r in records if i0 <= r.timestamp_index < i1]
            scores_payload[series.metric] = {
                "periodic": _f_list(r.periodic for r in window),
                "trend": _f_list(r.trend for r in window),
                "spike": _f_list(r.spike for r in window),
                "aggregated": _f_list(r.aggregated for r in window),
                "warmup": [r.warmup for r in window],
            }
            cause_payload[series.metric] = [
                causes[int(np.argmax([r.periodic, r.trend, r.spike]))]
                for r in window]
        return {"node": str(path), "mode": mode,
                "start_timestamp": result.start_timestamp + i0 * step,
                "step_seconds": step,
                "metrics": metrics_payload, "scores": scores_payload,
                "dominant_cause": cause_payload}

    @app.get("/api/cluster")
    async def cluster_view(from_ts: Optional[int] = Query(None, alias="from"),
                      to_ts: Optional[int] = Query(None, alias="to"),
                           method: str = "tsne", perplexity: float = 30.0,
                           k: Optional[int] = None, seed: int = 0,
                           grid: int = 64):
        result = _require_result(state)
        if method not in ("tsne", "pca"):
            raise ApiError(400, "bad_params", f"unknown embedding method {method!r}")
        i0, i1 = _index_range(result, from_ts, to_ts)

        nodes: list[NodePath] = []
        for s in result.series:
            if s.node not in nodes:
                nodes.append(s.node)
        metrics = sorted({s.metric for s in result.series})
        by_key = {(s.node, s.metric): s for s in result.series}
        vectors = []
        for node in nodes:
            rows = []
            for metric in metrics:
                s = by_key.get((node, metric))
                if s is None:
                    raise ApiError(500, "misaligned_dataset",
                                   f"node {node} lacks metric {metric}")
                rows.append(s.values[i0:i1])
            vectors.append(analytics.node_feature_vector(np.vstack(rows)).values)
        matrix = analytics.standardize_features(np.vstack(vectors), len(metrics))

        embedded = analytics.embed_2d(matrix, method=method,
                                      perplexity=perplexity, seed=seed)
        if len(nodes) >= 3:
            k_eff = k if k is not None else min(20, len(nodes) - 1)
            if not (2 <= k_eff <= len(nodes) - 1):
                raise ApiError(400, "bad_params",
                               f"k must lie in [2, {len(nodes) - 1}]")
            lof = analytics.lof_scores(matrix, k_eff)
            lof_norm = lof.normalized
        else:
            lof_norm = np.zeros(len(nodes))
        density = analytics.kde_density(embedded.positions, grid_resolution=grid)

        fan = {}
        for node in nodes:
            per_metric = {}
            for metric in metrics:
                window = by_key[(node, metric)].values[i0:i1]
                per_metric[metric] = {
                    "normalized": _f_list(analytics.normalize_series(window)),
                    "mean": _finite(window.mean()),
                }
            fan[str(node)] = per_metric

        return {
            "method": embedded.method, "fell_back": embedded.fell_back,
            "points": [{"node": str(node),
                        "x": _finite(embedded.positions[i, 0]),
                        "y": _finite(embedded.positions[i, 1]),
                        "lof": _finite(lof_norm[i])}
                       for i, node in enumerate(nodes)],
            "density": {"grid": [_f_list(row) for row in density.grid],
                        "x_centers": _f_list(density.x_centers),
                        "y_centers": _f_list(density.y_centers),
                        "bandwidth": [_finite(density.bandwidth[0]),
                                      _finite(density.bandwidth[1])]},
            "fan": fan,
        }

    return app
