"""CSV ingestion, gap repair, resampling, and an in-memory queryable store.

Every dataset is aligned at ingest to a dense, shared time index (global
min..max timestamp at the native granularity); gaps are repaired by linear
interpolation and flagged in each series' missing mask, so downstream math
never sees holes. Datasets persist as versioned little-endian snapshots.
"""

from __future__ import annotations

import csv
import io
import json
import struct
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .model import Granularity, MetricSeries, NodePath

SNAPSHOT_MAGIC = b"CDS1"
SNAPSHOT_VERSION = 1


class IngestError(ValueError):
    """Input file unusable: structurally broken or too many bad rows."""


@dataclass(frozen=True)
class SchemaMap:
    """Binds CSV columns to the ingest fields.

    ``metrics=None`` takes every column that is not a binding target.
    ``granularity=None`` infers the native step from timestamp deltas.
    """

    timestamp: str = "timestamp"
    center: str = "center"
    cluster: str = "cluster"
    node: str = "node"
    metrics: Optional[tuple[str, ...]] = None
    granularity: Optional[Granularity] = None

    @classmethod
    def parse(cls, text: Optional[str]) -> "SchemaMap":
        """Accept inline JSON or comma-separated key=value pairs."""
        if not text:
            return cls()
        text = text.strip()
        if text.startswith("{"):
            raw = json.loads(text)
        else:
            raw = {}
            for part in text.split(","):
                key, _, value = part.partition("=")
                raw[key.strip()] = value.strip()
        kwargs = {}
        for key in ("timestamp", "center", "cluster", "node"):
            if key in raw:
                kwargs[key] = raw.pop(key)
        if "metrics" in raw:
            metrics = raw.pop("metrics")
            if isinstance(metrics, str):
                metrics = [m for m in metrics.split("|") if m]
            kwargs["metrics"] = tuple(metrics)
        if "granularity" in raw:
            kwargs["granularity"] = Granularity.parse(raw.pop("granularity"))
        if raw:
            raise ValueError(f"unknown schema keys: {sorted(raw)}")
        return cls(**kwargs)


@dataclass(frozen=True)
class DatasetManifest:
    dataset_id: str
    centers: tuple[str, ...]
    metrics: tuple[str, ...]
    native_granularity: Granularity
    row_count: int

    def __post_init__(self):
        if not self.metrics:
            raise ValueError("a dataset must carry at least one metric")
        if self.row_count < 0:
            raise ValueError("row_count must be >= 0")


@dataclass(frozen=True)
class Dataset:
    manifest: DatasetManifest
    series: tuple[MetricSeries, ...]
    start_timestamp: int

    @property
    def length(self) -> int:
        return len(self.series[0]) if self.series else 0

    def nodes(self) -> list[NodePath]:
        seen = []
        for s in self.series:
            if s.node not in seen:
                seen.append(s.node)
        return seen


@dataclass
class LabelSet:
    """Boolean anomaly labels keyed by (node_id, metric)."""

    flags: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)

    def labels_for(self, series: MetricSeries) -> np.ndarray:
        key = (series.node.node_id, series.metric)
        if key in self.flags:
            arr = self.flags[key]
            if len(arr) != len(series):
                raise ValueError(f"label length {len(arr)} != series length {len(series)}")
            return arr
        return np.zeros(len(series), dtype=bool)


def _parse_timestamp(text: str) -> int:
    text = text.strip()
    try:
        return int(float(text))
    except ValueError:
        pass
    iso = text.replace("Z", "+00:00")
    dt = datetime.fromisoformat(iso)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def _sniff_delimiter(sample: str) -> str:
    head = sample.splitlines()[0] if sample else ""
    return ";" if head.count(";") > head.count(",") else ","


def _infer_granularity(deltas: np.ndarray) -> Granularity:
    if len(deltas) == 0:
        return Granularity.HOUR
    step = float(np.median(deltas))
    if step <= 90:
        return Granularity.MINUTE
    if step <= 5400:
        return Granularity.HOUR
    return Granularity.DAY


def _fill_gaps(values: np.ndarray, present: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Linear interpolation over absent samples; edges take the nearest value."""
    out = values.astype(np.float64, copy=True)
    missing = ~present
    if missing.any():
        if not present.any():
            raise IngestError("series has no data at all")
        idx = np.arange(len(values))
        out[missing] = np.interp(idx[missing], idx[present], out[present])
    return out, missing


def ingest_rows(rows, metrics: Sequence[str],
                granularity_hint: Optional[Granularity] = None,
                dataset_id: str = "dataset") -> Dataset:
    """Build an aligned dataset from parsed (ts, path, {metric: value}) rows."""
    if not rows:
        raise IngestError("no usable rows")
    rows.sort(key=lambda r: r[0])  # stable: duplicates keep the later file row
    timestamps = np.array([r[0] for r in rows], dtype=np.int64)
    granularity = granularity_hint or _infer_granularity(np.diff(np.unique(timestamps)))
    step = granularity.step_seconds
    start = int(timestamps.min())
    length = int((timestamps.max() - start) // step) + 1

    cells: dict[tuple[NodePath, str], tuple[np.ndarray, np.ndarray]] = {}
    for ts, path, metric_values in rows:
        index = (ts - start) // step
        for metric, value in metric_values.items():
            if metric not in metrics:
                continue
            if (path, metric) not in cells:
                cells[(path, metric)] = (np.full(length, np.nan), np.zeros(length, dtype=bool))
            values, present = cells[(path, metric)]
            if value is not None:
                values[index] = value
                present[index] = True

    series = []
    for (path, metric), (values, present) in sorted(
            cells.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        filled, missing = _fill_gaps(values, present)
        series.append(MetricSeries(node=path, metric=metric, granularity=granularity,
                                   start_timestamp=start, values=filled, missing=missing))

    centers = tuple(sorted({s.node.center_id for s in series}))
    manifest = DatasetManifest(dataset_id=dataset_id, centers=centers,
                               metrics=tuple(sorted(metrics)),
                               native_granularity=granularity, row_count=len(rows))
    return Dataset(manifest=manifest, series=tuple(series), start_timestamp=start)


def ingest_csv(path: Union[str, Path], schema_map: Optional[SchemaMap] = None,
               dataset_id: Optional[str] = None) -> Dataset:
    """Parse a per-node metric trace CSV into an aligned dataset.

    Rows with unparseable timestamps or node fields are skipped and
    counted; more than 10% skipped rows aborts the ingest. Bad metric
    cells become gaps, repaired like any other hole.
    """
    path = Path(path)
    schema = schema_map or SchemaMap()
    text = path.read_text()
    delimiter = _sniff_delimiter(text)
    reader = csv.DictReader(io.StringIO(text), delimiter=delimiter)
    if reader.fieldnames is None:
        raise IngestError(f"{path} has no header row")
    fields = [f.strip() for f in reader.fieldnames]
    for required in (schema.timestamp, schema.center, schema.cluster, schema.node):
        if required not in fields:
            raise IngestError(f"missing required column {required!r}")
    if schema.metrics is None:
        bound = {schema.timestamp, schema.center, schema.cluster, schema.node}
        metrics = tuple(f for f in fields if f not in bound)
    else:
        metrics = schema.metrics
        for m in metrics:
            if m not in fields:
                raise IngestError(f"metric column {m!r} not in header")
    if not metrics:
        raise IngestError("no metric columns found")

    rows = []
    skipped = 0
    total = 0
    for raw in reader:
        total += 1
        try:
            ts = _parse_timestamp(raw[schema.timestamp])
            node = NodePath(raw[schema.center].strip(), raw[schema.cluster].strip(),
                            raw[schema.node].strip())
        except (ValueError, KeyError, AttributeError, TypeError):
            skipped += 1
            continue
        metric_values = {}
        for m in metrics:
            cell = raw.get(m)
            try:
                value = float(cell)
                if not np.isfinite(value):
                    value = None
            except (TypeError, ValueError):
                value = None
            metric_values[m] = value
        rows.append((ts, node, metric_values))
    if total == 0:
        raise IngestError(f"{path} holds no data rows")
    if skipped > 0.10 * total:
        raise IngestError(f"{skipped}/{total} rows unparseable, aborting")

    return ingest_rows(rows, metrics, schema.granularity,
                       dataset_id=dataset_id or path.stem)


def load_labels(path: Union[str, Path], dataset: Dataset) -> LabelSet:
    """Read a node,metric,timestamp,is_anomaly CSV against a dataset's index."""
    path = Path(path)
    step = dataset.manifest.native_granularity.step_seconds
    text = path.read_text()
    reader = csv.DictReader(io.StringIO(text), delimiter=_sniff_delimiter(text))
    flags: dict[tuple[str, str], np.ndarray] = {}
    length = dataset.length
    for raw in reader:
        node = raw["node"].strip()
        metric = raw["metric"].strip()
        ts = _parse_timestamp(raw["timestamp"])
        index = (ts - dataset.start_timestamp) // step
        if not (0 <= index < length):
            raise ValueError(f"label timestamp {ts} outside the dataset range")
        key = (node, metric)
        if key not in flags:
            flags[key] = np.zeros(length, dtype=bool)
        flags[key][index] = raw["is_anomaly"].strip() in ("1", "true", "True")
    return LabelSet(flags=flags)


def resample(series: MetricSeries, target: Granularity,
             method: str = "mean") -> MetricSeries:
    """Aggregate a series into coarser buckets (mean, max, or last).

    Buckets containing only repaired values count as empty and are filled
    by linear interpolation between their neighbors, flagged in the mask.
    """
    if target.step_seconds < series.granularity.step_seconds:
        raise ValueError("cannot resample to a finer granularity")
    if method not in ("mean", "max", "last"):
        raise ValueError(f"unknown resample method {method!r}")
    if target == series.granularity:
        return series
    factor = target.step_seconds // series.granularity.step_seconds
    n_out = -(-len(series) // factor)
    values = np.full(n_out, np.nan)
    present = np.zeros(n_out, dtype=bool)
    genuine = ~series.missing
    for b in range(n_out):
        chunk = series.values[b * factor:(b + 1) * factor]
        mask = genuine[b * factor:(b + 1) * factor]
        data = chunk[mask]
        if len(data) == 0:
            continue
        if method == "mean":
            values[b] = data.mean()
        elif method == "max":
            values[b] = data.max()
        else:
            values[b] = data[-1]
        present[b] = True
    filled, missing = _fill_gaps(values, present)
    return MetricSeries(node=series.node, metric=series.metric, granularity=target,
                        start_timestamp=series.start_timestamp,
                        values=filled, missing=missing)


@dataclass(frozen=True)
class AlignedBlock:
    """Metric rows over a shared time range, ordered by metric label."""

    matrix: np.ndarray
    metrics: tuple[str, ...]
    nodes: tuple[NodePath, ...]
    start_timestamp: int
    granularity: Granularity


def align(series_set: Sequence[MetricSeries],
          start: Optional[int] = None, end: Optional[int] = None) -> AlignedBlock:
    """Intersect the series' time ranges into one value matrix.

    ``start``/``end`` are optional epoch-second bounds narrowing the
    intersection further. Rows sort by metric label.
    """
    if not series_set:
        raise ValueError("nothing to align")
    granularities = {s.granularity for s in series_set}
    if len(granularities) > 1:
        raise ValueError("series must share one granularity")
    granularity = granularities.pop()
    step = granularity.step_seconds

    lo = max(s.start_timestamp for s in series_set)
    hi = min(s.start_timestamp + len(s) * step for s in series_set)
    if start is not None:
        lo = max(lo, start)
    if end is not None:
        hi = min(hi, end)
    if hi <= lo:
        raise ValueError("series ranges do not intersect")
    # snap the common start onto every series' index grid
    offsets = {(lo - s.start_timestamp) % step for s in series_set}
    if offsets != {0}:
        raise ValueError("series are not phase-aligned at this granularity")

    n = (hi - lo) // step
    if n <= 0:
        raise ValueError("series ranges do not intersect")
    ordered = sorted(series_set, key=lambda s: (s.metric, s.node))
    rows = []
    for s in ordered:
        i0 = (lo - s.start_timestamp) // step
        rows.append(s.values[i0:i0 + n])
    return AlignedBlock(matrix=np.vstack(rows),
                        metrics=tuple(s.metric for s in ordered),
                        nodes=tuple(s.node for s in ordered),
                        start_timestamp=lo, granularity=granularity)


@dataclass(frozen=True)
class Selector:
    center: Optional[str] = None
    cluster: Optional[str] = None
    node: Optional[str] = None
    metric: Optional[str] = None
    start: Optional[int] = None
    end: Optional[int] = None
    granularity: Optional[Granularity] = None


def query(dataset: Dataset, selector: Selector = Selector()) -> list[MetricSeries]:
    """All series matching the selector, resampled to its granularity.

    Unknown ids yield an empty result rather than an error.
    """
    out = []
    for s in dataset.series:
        if selector.center is not None and s.node.center_id != selector.center:
            continue
        if selector.cluster is not None and s.node.cluster_id != selector.cluster:
            continue
        if selector.node is not None and s.node.node_id != selector.node:
            continue
        if selector.metric is not None and s.metric != selector.metric:
            continue
        if selector.granularity is not None:
            s = resample(s, selector.granularity)
        if selector.start is not None or selector.end is not None:
            step = s.granularity.step_seconds
            i0 = 0 if selector.start is None else max(0, (selector.start - s.start_timestamp) // step)
            i1 = len(s) if selector.end is None else min(len(s), -(-(selector.end - s.start_timestamp) // step))
            if i1 <= i0:
                continue
            s = MetricSeries(node=s.node, metric=s.metric, granularity=s.granularity,
                             start_timestamp=s.start_timestamp + i0 * step,
                             values=s.values[i0:i1], missing=s.missing[i0:i1])
        out.append(s)
    return out


# ---------------------------------------------------------------- snapshots

def _write_str(buf: io.BytesIO, text: str) -> None:
    raw = text.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)


def _read_str(buf: io.BufferedReader) -> str:
    (n,) = struct.unpack("<H", buf.read(2))
    return buf.read(n).decode("utf-8")


def save_snapshot(dataset: Dataset, path: Union[str, Path]) -> None:
    """Columnar binary snapshot: magic, manifest block, per-series blocks."""
    buf = io.BytesIO()
    buf.write(SNAPSHOT_MAGIC)
    buf.write(struct.pack("<H", SNAPSHOT_VERSION))
    manifest = dataset.manifest
    meta = json.dumps({
        "dataset_id": manifest.dataset_id,
        "centers": list(manifest.centers),
        "metrics": list(manifest.metrics),
        "native_granularity": manifest.native_granularity.value,
        "row_count": manifest.row_count,
        "start_timestamp": dataset.start_timestamp,
    }).encode("utf-8")
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    buf.write(struct.pack("<I", len(dataset.series)))
    for s in dataset.series:
        _write_str(buf, s.node.center_id)
        _write_str(buf, s.node.cluster_id)
        _write_str(buf, s.node.node_id)
        _write_str(buf, s.metric)
        buf.write(struct.pack("<qBI", s.start_timestamp, s.granularity.code, len(s)))
        buf.write(np.asarray(s.values, "<f8").tobytes())
        buf.write(np.packbits(s.missing, bitorder="little").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_snapshot(path: Union[str, Path]) -> Dataset:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != SNAPSHOT_MAGIC:
            raise IngestError(f"{path} is not a dataset snapshot")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != SNAPSHOT_VERSION:
            raise IngestError(f"unsupported snapshot version {version}")
        (meta_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(meta_len).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        series = []
        for _ in range(count):
            center = _read_str(fh)
            cluster = _read_str(fh)
            node = _read_str(fh)
            metric = _read_str(fh)
            start, gcode, length = struct.unpack("<qBI", fh.read(13))
            values = np.frombuffer(fh.read(8 * length), dtype="<f8")
            mask_bytes = fh.read(-(-length // 8))
            missing = np.unpackbits(np.frombuffer(mask_bytes, dtype=np.uint8),
                                    bitorder="little")[:length].astype(bool)
            series.append(MetricSeries(node=NodePath(center, cluster, node),
                                       metric=metric,
                                       granularity=Granularity.from_code(gcode),
                                       start_timestamp=start,
                                       values=values, missing=missing))
    manifest = DatasetManifest(dataset_id=meta["dataset_id"],
                               centers=tuple(meta["centers"]),
                               metrics=tuple(meta["metrics"]),
                               native_granularity=Granularity(meta["native_granularity"]),
                               row_count=meta["row_count"])
    return Dataset(manifest=manifest, series=tuple(series),
                   start_timestamp=meta["start_timestamp"])


class MetricStore:
    """In-memory dataset registry with snapshot persistence.

    Concurrent readers see immutable Dataset objects; the single writer
    publishes a fully built dataset in one assignment.
    """

    def __init__(self, data_dir: Optional[Union[str, Path]] = None):
        self.data_dir = Path(data_dir) if data_dir else None
        self._datasets: dict[str, Dataset] = {}
        self._lock = threading.Lock()

    def add(self, dataset: Dataset) -> None:
        with self._lock:
            self._datasets[dataset.manifest.dataset_id] = dataset

    def get(self, dataset_id: str) -> Optional[Dataset]:
        dataset = self._datasets.get(dataset_id)
        if dataset is None and self.data_dir is not None:
            candidate = self.data_dir / f"{dataset_id}.cds"
            if candidate.exists():
                dataset = load_snapshot(candidate)
                self.add(dataset)
        return dataset

    def ids(self) -> list[str]:
        known = set(self._datasets)
        if self.data_dir is not None and self.data_dir.exists():
            known.update(p.stem for p in self.data_dir.glob("*.cds"))
        return sorted(known)

    def persist(self, dataset_id: str) -> Path:
        if self.data_dir is None:
            raise ValueError("store has no data directory")
        dataset = self.get(dataset_id)
        if dataset is None:
            raise KeyError(dataset_id)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        path = self.data_dir / f"{dataset_id}.cds"
        save_snapshot(dataset, path)
        return path
