"""Command-line driver: ingest, detect, serve, bench, and synth verbs.

Snapshots live under the directory named by the CLOUDDET_DATA_DIR
environment variable (default ./clouddet-data). Benches print aligned
tables to stdout and optionally write machine-readable CSV.
"""

from __future__ import annotations

import csv
import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from .evalbench import (DEFAULT_L_GRID, DEFAULT_THRESHOLD_GRID, DEFAULT_WINDOW,
                        SynthSpec, run_accuracy_bench, run_scalability_bench,
                        synth_generate)
from .model import Granularity
from .scoring import Aggregator, SpikeMode, score_many
from .store import (MetricStore, SchemaMap, Selector, ingest_csv, load_labels,
                    query)

DATA_DIR_ENV = "CLOUDDET_DATA_DIR"


def _store() -> MetricStore:
    return MetricStore(os.environ.get(DATA_DIR_ENV, "clouddet-data"))


@click.group()
def main():
    """Anomaly detection for cloud compute-node performance metrics."""


@main.command()
@click.argument("csv_path", type=click.Path(exists=True))
@click.option("--schema", default=None, help="JSON or key=value column bindings.")
@click.option("--dataset-id", default=None, help="Defaults to the file stem.")
def ingest(csv_path, schema, dataset_id):
    """Ingest a metric trace CSV and persist a snapshot."""
    store = _store()
    dataset = ingest_csv(csv_path, SchemaMap.parse(schema), dataset_id)
    store.add(dataset)
    path = store.persist(dataset.manifest.dataset_id)
    m = dataset.manifest
    click.echo(f"dataset {m.dataset_id}: {len(dataset.series)} series, "
               f"{dataset.length} samples at {m.native_granularity.value} "
               f"granularity, {m.row_count} rows")
    click.echo(f"snapshot: {path}")


@main.command()
@click.option("--dataset", "dataset_id", required=True)
@click.option("--L", "window", type=int, default=DEFAULT_WINDOW, show_default=True)
@click.option("--agg", default="avg", show_default=True,
              help="min | max | avg | avg:w1,w2,w3")
@click.option("--spike", default="hinge", show_default=True,
              type=click.Choice(["hinge", "verbatim"]))
@click.option("--granularity", default="h", show_default=True,
              help="m | h | d")
@click.option("--out", default=None, type=click.Path(),
              help="Write per-timestamp scores CSV here.")
def detect(dataset_id, window, agg, spike, granularity, out):
    """Score every (node, metric) series of a loaded dataset."""
    if window < 8:
        raise click.BadParameter("--L must be >= 8")
    store = _store()
    dataset = store.get(dataset_id)
    if dataset is None:
        raise click.ClickException(f"dataset {dataset_id!r} not found; ingest first")
    gran = Granularity.parse(granularity)
    series = query(dataset, Selector(granularity=gran))
    results = score_many(series, window, Aggregator.parse(agg), SpikeMode.parse(spike))

    totals = {}
    for s, recs in zip(series, results):
        key = str(s.node)
        totals[key] = totals.get(key, 0.0) + sum(r.aggregated for r in recs)
    click.echo(f"scored {len(series)} series "
               f"({sum(len(r) for r in results)} records) at L={window}")
    for key, total in sorted(totals.items(), key=lambda kv: -kv[1])[:10]:
        click.echo(f"  {key:30s} {total:10.3f}")

    if out:
        with open(out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["node", "metric", "timestamp", "periodic", "trend",
                             "spike", "aggregated", "warmup"])
            for s, recs in zip(series, results):
                for r in recs:
                    writer.writerow([str(s.node), s.metric,
                                     s.timestamp_of(r.timestamp_index),
                                     r.periodic, r.trend, r.spike,
                                     r.aggregated, int(r.warmup)])
        click.echo(f"scores: {out}")


@main.command()
@click.option("--port", type=int, default=8080, show_default=True)
@click.option("--bind", default="127.0.0.1", show_default=True)
def serve(port, bind):
    """Run the HTTP API for the dashboard."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(_store()), host=bind, port=port)


@main.group()
def bench():
    """Accuracy and scalability harnesses."""


def _load_bench_data(data_path, schema):
    dataset = ingest_csv(data_path, SchemaMap.parse(schema))
    return dataset, list(dataset.series)


@bench.command()
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--labels", "labels_path", required=True, type=click.Path(exists=True))
@click.option("--schema", default=None)
@click.option("--L-grid", "l_grid", default=None,
              help="Comma-separated history lengths; default 5..50 step 5.")
@click.option("--agg", default="avg", show_default=True)
@click.option("--spike", default="hinge", show_default=True,
              type=click.Choice(["hinge", "verbatim"]))
@click.option("--out", default=None, type=click.Path())
def accuracy(data_path, labels_path, schema, l_grid, agg, spike, out):
    """ROC sweep over history lengths and discrimination thresholds."""
    dataset, series = _load_bench_data(data_path, schema)
    labels = load_labels(labels_path, dataset)
    grid = DEFAULT_L_GRID if l_grid is None else tuple(
        int(x) for x in l_grid.split(","))
    result = run_accuracy_bench(series, labels, grid, DEFAULT_THRESHOLD_GRID,
                                Aggregator.parse(agg), SpikeMode.parse(spike))
    click.echo(f"{'L':>4s} {'AUC':>8s}   thresholds={list(DEFAULT_THRESHOLD_GRID)}")
    for r in result.results:
        click.echo(f"{r.param_value:4d} {r.auc:8.4f}")
    for L, err in result.errors:
        click.echo(f"{L:4d} failed: {err}")
    if result.results:
        click.echo(f"mean AUC: {result.mean_auc:.4f}")
    if out:
        with open(out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["L", "auc", "fpr", "tpr"])
            for r in result.results:
                for fpr, tpr in r.points:
                    writer.writerow([r.param_value, r.auc, fpr, tpr])
        click.echo(f"csv: {out}")


@bench.command()
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--schema", default=None)
@click.option("--lengths", default=None,
              help="Comma-separated prefix lengths; default 100..700 step 100.")
@click.option("--repeats", type=int, default=10, show_default=True)
@click.option("--L", "window", type=int, default=DEFAULT_WINDOW, show_default=True)
@click.option("--out", default=None, type=click.Path())
def scale(data_path, schema, lengths, repeats, window, out):
    """Time the detection pipeline against prefix-truncated series."""
    _, series = _load_bench_data(data_path, schema)
    grid = tuple(range(100, 701, 100)) if lengths is None else tuple(
        int(x) for x in lengths.split(","))
    result = run_scalability_bench(series[0], grid, repeats=repeats, L=window)
    click.echo(f"{'length':>8s} {'mean_s':>10s}")
    for row in result.rows:
        click.echo(f"{row.length:8d} {row.mean_seconds:10.4f}")
    if result.slope is not None:
        click.echo(f"linear fit: slope={result.slope:.3e} s/point, "
                   f"R^2={result.r_squared:.4f}")
    if out:
        with open(out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["length", "rep", "seconds"])
            for row in result.rows:
                for i, sec in enumerate(row.rep_seconds):
                    writer.writerow([row.length, i, sec])
        click.echo(f"csv: {out}")


@main.command()
@click.option("--spec", "spec_path", default=None, type=click.Path(exists=True),
              help="JSON file overriding the generator defaults.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", default="synthetic.csv", show_default=True, type=click.Path())
@click.option("--labels", "labels_out", default="synthetic-labels.csv",
              show_default=True, type=click.Path())
def synth(spec_path, seed, out, labels_out):
    """Generate a labeled synthetic series in the ingest CSV format."""
    raw = {}
    if spec_path:
        raw = json.loads(Path(spec_path).read_text())
    raw["seed"] = seed
    spec = SynthSpec.from_dict(raw)
    series, labels = synth_generate(spec)
    flags = labels.labels_for(series)

    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "center", "cluster", "node", series.metric])
        for i, value in enumerate(series.values):
            writer.writerow([series.timestamp_of(i), series.node.center_id,
                             series.node.cluster_id, series.node.node_id, value])
    with open(labels_out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node", "metric", "timestamp", "is_anomaly"])
        for i, flag in enumerate(flags):
            writer.writerow([series.node.node_id, series.metric,
                             series.timestamp_of(i), int(flag)])
    click.echo(f"series: {out} ({len(series)} samples, "
               f"{int(flags.sum())} anomalous)")
    click.echo(f"labels: {labels_out}")


if __name__ == "__main__":
    sys.exit(main())
