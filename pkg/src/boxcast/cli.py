"""Command-line interface: generate / fit / predict / eval / curve / bench.

Every command that writes artifacts also writes a sibling run manifest
(<out>.manifest.json) recording the command, its parameters, and timing.
Outputs themselves are deterministic for a fixed seed; only the manifest's
timing fields differ between reruns.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor

import click
import numpy as np

from .boxes import BoxParams, normalize_cloud
from .distributions import Context, load_model, save_model
from .estimator import check_records
from .fitting import FitConfig, fit_gaussian, fit_report, fit_tabular
from .inference import (
    BeamConfig,
    QuantileConfig,
    beam_search,
    dimension_conditioned_predict,
    quantile_box,
)
from .metrics import EvalPair, compute_report, containment_curve
from .synthgen import ScenarioSpec, generate, read_jsonl, write_jsonl

PREDICTIONS_SCHEMA_VERSION = 1

logger = logging.getLogger("boxcast")


def _setup_logging():
    level = os.environ.get("BOXCAST_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))


def _write_manifest(out_path, command, params, started):
    manifest = {
        "command": command,
        "params": params,
        "outputs": [os.path.abspath(out_path)],
        "started_at": started,
        "duration_s": time.time() - started,
    }
    path = out_path + ".manifest.json"
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    os.replace(tmp, path)


def _examples_from_records(records, symmetry):
    from .boxes import SymmetryMode
    from .fitting import TrainingExample

    mode = SymmetryMode(symmetry)
    return [
        TrainingExample(Context(int(r.context_id)), r.gt_box, normalize_cloud(r.points), mode)
        for r in records
    ]


@click.group()
def main():
    """Probabilistic 3D bounding-box toolkit."""
    _setup_logging()


@main.command("generate")
@click.option("--kind", type=click.Choice(["stacked_bin", "rot_symmetric", "nested_ordered", "unambiguous"]), default="stacked_bin")
@click.option("--context-id", type=int, default=0)
@click.option("--footprint", default="0.3,0.3", help="fx,fy in meters")
@click.option("--height", type=float, default=0.3)
@click.option("--n-levels", type=int, default=4)
@click.option("--noise-sigma", type=float, default=0.0)
@click.option("--stub-points", type=int, default=64)
@click.option("--n", type=int, default=100, help="records to generate")
@click.option("--seed", type=int, default=0)
@click.option("--config", type=click.Path(exists=True), default=None, help="JSON list of scenario specs (each with an 'n'); overrides the flags")
@click.option("--out", type=click.Path(), required=True)
def generate_cmd(kind, context_id, footprint, height, n_levels, noise_sigma, stub_points, n, seed, config, out):
    """Generate synthetic ambiguous scenes as JSONL."""
    started = time.time()
    records = []
    if config is not None:
        with open(config) as f:
            entries = json.load(f)
        for entry in entries:
            count = int(entry.pop("n", n))
            spec = ScenarioSpec.from_json_dict(entry)
            records.extend(generate(spec, count))
    else:
        fx, fy = (float(v) for v in footprint.split(","))
        spec = ScenarioSpec(
            kind=kind,
            context_id=context_id,
            footprint=(fx, fy),
            height=height,
            n_levels=n_levels,
            noise_sigma=noise_sigma,
            stub_points=stub_points,
            seed=seed,
        )
        records = generate(spec, n)
    write_jsonl(records, out)
    _write_manifest(out, "generate", {"seed": seed, "n_records": len(records)}, started)
    click.echo(f"wrote {len(records)} records to {out}")


@main.command()
@click.option("--data", type=click.Path(exists=True), required=True, help="training JSONL")
@click.option("--backend", type=click.Choice(["tabular", "gaussian"]), default="tabular")
@click.option("--alpha", type=float, default=0.1)
@click.option("--prefix-buckets", type=int, default=8)
@click.option("--bins", type=int, default=512)
@click.option("--symmetry", type=click.Choice(["none", "yaw", "full_so3"]), default="none")
@click.option("--out", type=click.Path(), required=True, help="model JSON path")
def fit(data, backend, alpha, prefix_buckets, bins, symmetry, out):
    """Fit a model on a JSONL dataset and save it as versioned JSON."""
    started = time.time()
    records = read_jsonl(data)
    examples = _examples_from_records(records, symmetry)
    cfg = FitConfig(alpha=alpha, prefix_buckets=prefix_buckets, bins=bins)
    model = fit_tabular(examples, cfg) if backend == "tabular" else fit_gaussian(examples, cfg)
    save_model(model, out)
    report = fit_report(model, examples) if backend == "tabular" else None
    params = {"backend": backend, "alpha": alpha, "bins": bins, "dataset": os.path.abspath(data)}
    if report is not None:
        params["fit_report"] = report.to_json_dict()
        logger.info("fit nll=%.4f overflow=%.2e", report.nll, report.overflow_rate)
    _write_manifest(out, "fit", params, started)
    click.echo(f"fitted {backend} model on {len(records)} records -> {out}")


def _parse_method(method):
    """Method string -> (name, arg).

    Accepted: 'beam', 'quantile:<q>', 'conditioned', 'conditioned:<sku-file>',
    'gaussian-baseline'.
    """
    if method in ("beam", "conditioned", "gaussian-baseline"):
        return method, None
    if method.startswith("quantile"):
        _, _, qs = method.partition(":")
        return "quantile", float(qs) if qs else 0.5
    if method.startswith("conditioned:"):
        return "conditioned", method.partition(":")[2]
    raise click.ClickException(f"unknown method {method!r}")


@main.command()
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--method", default="beam", help="beam | quantile:<q> | conditioned")
@click.option("--beam-width", type=int, default=32)
@click.option("--k", type=int, default=64, help="quantile box samples")
@click.option("--m", type=int, default=64, help="interior points per sampled box")
@click.option("--seed", type=int, default=0)
@click.option("--sku-dims", default=None, help="semicolon-separated dims triples, e.g. '0.3,0.3,0.1;0.2,0.2,0.4'")
@click.option("--out", type=click.Path(), required=True, help="predictions JSONL")
def predict(model_path, data, method, beam_width, k, m, seed, sku_dims, out):
    """Predict a box for every record in a dataset."""
    started = time.time()
    model = load_model(model_path)
    records = check_records(read_jsonl(data))
    name, arg = _parse_method(method)
    q = arg if name == "quantile" else None
    skus = None
    if name == "conditioned" and isinstance(arg, str):
        if not os.path.exists(arg):
            raise click.ClickException(f"SKU file not found: {arg}")
        with open(arg) as f:
            skus = [tuple(float(v) for v in triple) for triple in json.load(f)]
    elif sku_dims:
        skus = [tuple(float(v) for v in part.split(",")) for part in sku_dims.split(";")]
    if name == "conditioned" and not skus:
        raise click.ClickException("method=conditioned requires --sku-dims or a SKU file")
    if name == "gaussian-baseline":
        from .distributions import GaussianBaseline

        if not isinstance(model, GaussianBaseline):
            raise click.ClickException("method=gaussian-baseline requires a gaussian model")
    rows = []
    for i, rec in enumerate(records):
        view = model.with_normalizer(normalize_cloud(rec.points))
        ctx = Context(int(rec.context_id))
        row = {
            "schema_version": PREDICTIONS_SCHEMA_VERSION,
            "record_index": i,
            "context_id": int(rec.context_id),
        }
        if name in ("beam", "gaussian-baseline"):
            qbox, score = beam_search(view, ctx, BeamConfig(beam_width))
            row.update(method=name, box=view.codec.decode(qbox).to_json_dict(), score=score)
        elif name == "quantile":
            cfg = QuantileConfig(q=q, k=k, m=m, seed=seed)
            result = quantile_box(view, ctx, cfg)
            row.update(
                method=f"quantile:{q}",
                box=result.box.to_json_dict(),
                score=None,
                params={"k": k, "m": m, "seed": seed},
            )
        else:
            qbox, sku_idx, score = dimension_conditioned_predict(view, ctx, skus, BeamConfig(beam_width))
            row.update(
                method="conditioned",
                box=view.codec.decode(qbox).to_json_dict(),
                score=score,
                sku_index=sku_idx,
            )
        rows.append(row)
    with open(out, "w") as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")
    _write_manifest(out, "predict", {"method": method, "seed": seed, "model": os.path.abspath(model_path)}, started)
    click.echo(f"wrote {len(rows)} predictions to {out}")


def read_predictions(path):
    """Load a predictions JSONL file into (row dicts, BoxParams)."""
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if obj.get("schema_version") != PREDICTIONS_SCHEMA_VERSION:
                raise ValueError(f"unsupported predictions schema_version {obj.get('schema_version')}")
            rows.append((obj, BoxParams.from_json_dict(obj["box"])))
    return rows


@main.command("eval")
@click.option("--pred", type=click.Path(exists=True), required=True, help="predictions JSONL")
@click.option("--data", type=click.Path(exists=True), required=True, help="dataset JSONL with ground truth")
@click.option("--out", type=click.Path(), required=True, help="report JSON; per-object CSV lands at <out>.csv")
def eval_cmd(pred, data, out):
    """Evaluate predictions against ground truth; writes JSON + CSV."""
    started = time.time()
    records = read_jsonl(data)
    predictions = read_predictions(pred)
    pairs = []
    for obj, box in predictions:
        rec = records[obj["record_index"]]
        pairs.append(EvalPair(box, rec.gt_box, obj["method"], obj.get("score")))
    report = compute_report(pairs)
    with open(out, "w") as f:
        json.dump(report.to_json_dict(), f, indent=1, sort_keys=True)
    csv_path = out + ".csv"
    fields = ["id", "method", "iou", "iog", "f1", "err_dim", "err_quat", "err_center", "score"]
    with open(csv_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for row in report.rows:
            writer.writerow({k: row[k] for k in fields})
    _write_manifest(out, "eval", {"pred": os.path.abspath(pred), "data": os.path.abspath(data)}, started)
    click.echo(
        f"n={len(pairs)} mean_iou={report.mean_iou:.4f} f1={report.f1:.4f} "
        f"err_dim={report.err_dim:.4f} err_center={report.err_center:.4f}"
    )


@main.command()
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--qs", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")
@click.option("--k", type=int, default=64)
@click.option("--m", type=int, default=64)
@click.option("--seed", type=int, default=0)
@click.option("--iog-threshold", type=float, default=0.95)
@click.option("--out", type=click.Path(), required=True, help="CSV of (q, f)")
def curve(model_path, data, qs, k, m, seed, iog_threshold, out):
    """Containment-versus-quantile curve f(q) over a labeled dataset."""
    from .inference import quantile_boxes

    started = time.time()
    model = load_model(model_path)
    records = check_records(read_jsonl(data))
    q_values = [float(v) for v in qs.split(",")]
    pairs_by_q = {q: [] for q in q_values}
    for rec in records:
        view = model.with_normalizer(normalize_cloud(rec.points))
        cfg = QuantileConfig(q=q_values[0], k=k, m=m, seed=seed)
        results = quantile_boxes(view, Context(int(rec.context_id)), q_values, cfg)
        for q in q_values:
            pairs_by_q[q].append(EvalPair(results[q].box, rec.gt_box, f"quantile:{q}"))
    points = containment_curve(pairs_by_q, iog_threshold)
    with open(out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["q", "f"])
        writer.writerows(points)
    _write_manifest(out, "curve", {"qs": q_values, "k": k, "m": m, "seed": seed}, started)
    for q, frac in points:
        click.echo(f"q={q:.2f} f={frac:.3f}")


_BENCH_MODEL = None


def _bench_init(model_json):
    """Worker initializer: deserialize the model once per process."""
    global _BENCH_MODEL
    from .distributions import model_from_json_dict

    _BENCH_MODEL = model_from_json_dict(model_json)


def _bench_one(args):
    """Quantile-box latency for one object; used by the worker pool."""
    points, context_id, k, m, seed = args
    model = _BENCH_MODEL
    view = model.with_normalizer(normalize_cloud(np.asarray(points)))
    cfg = QuantileConfig(q=0.5, k=k, m=m, seed=seed)
    t0 = time.perf_counter()
    quantile_box(view, Context(int(context_id)), cfg)
    return time.perf_counter() - t0


@main.command()
@click.option("--n-objects", type=int, default=15)
@click.option("--k", type=int, default=64)
@click.option("--m", type=int, default=64)
@click.option("--workers", type=int, default=1)
@click.option("--repeats", type=int, default=5)
@click.option("--seed", type=int, default=0)
@click.option("--budget-ms", type=float, default=50.0)
@click.option("--out", type=click.Path(), default=None, help="optional JSON latency report")
def bench(n_objects, k, m, workers, repeats, seed, budget_ms, out):
    """Latency benchmark: quantile box for a batch of objects.

    With workers=1 the headline number is the per-object p50; with a worker
    pool it is the amortized per-object latency of the batch (wall time of
    the batch divided by its size) on a warm, model-preloaded pool.
    Exceeding the budget prints a warning; exceeding 4x the budget exits
    non-zero.
    """
    from .distributions import model_to_json_dict
    from .synthgen import ScenarioKind

    started = time.time()
    spec = ScenarioSpec(kind=ScenarioKind.STACKED_BIN, context_id=0, n_levels=4, seed=seed)
    records = generate(spec, n_objects)
    examples = _examples_from_records(generate(spec, 500), "none")
    model = fit_tabular(examples, FitConfig(alpha=0.01))
    model_json = model_to_json_dict(model)
    jobs = [
        (rec.points.tolist(), rec.context_id, k, m, seed + i)
        for i, rec in enumerate(records)
    ]
    latencies = []
    batch_walls = []
    if workers <= 1:
        _bench_init(model_json)
        for _ in range(repeats):
            t0 = time.perf_counter()
            latencies.extend(_bench_one(job) for job in jobs)
            batch_walls.append(time.perf_counter() - t0)
    else:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_bench_init, initargs=(model_json,)
        ) as pool:
            list(pool.map(_bench_one, jobs))  # warm the pool and worker caches
            for _ in range(repeats):
                t0 = time.perf_counter()
                latencies.extend(pool.map(_bench_one, jobs))
                batch_walls.append(time.perf_counter() - t0)
    lat_ms = np.asarray(latencies) * 1e3
    p50 = float(np.percentile(lat_ms, 50))
    p90 = float(np.percentile(lat_ms, 90))
    amortized = float(np.median(batch_walls)) * 1e3 / n_objects
    headline = p50 if workers <= 1 else amortized
    click.echo(
        f"objects={n_objects} k={k} m={m} workers={workers} "
        f"p50={p50:.2f}ms p90={p90:.2f}ms amortized={amortized:.2f}ms "
        f"headline={headline:.2f}ms budget={budget_ms:.0f}ms"
    )
    if out:
        with open(out, "w") as f:
            json.dump(
                {
                    "p50_ms": p50,
                    "p90_ms": p90,
                    "amortized_ms": amortized,
                    "headline_ms": headline,
                    "workers": workers,
                    "k": k,
                    "m": m,
                },
                f,
                indent=1,
            )
        _write_manifest(out, "bench", {"workers": workers, "k": k, "m": m, "seed": seed}, started)
    if headline > 4 * budget_ms:
        click.echo(f"FAIL: {headline:.2f}ms exceeds 4x budget {4 * budget_ms:.0f}ms", err=True)
        raise SystemExit(1)
    if headline > budget_ms:
        click.echo(f"WARN: {headline:.2f}ms exceeds budget {budget_ms:.0f}ms", err=True)


if __name__ == "__main__":
    main()
