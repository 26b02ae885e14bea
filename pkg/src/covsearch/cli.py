"""Command-line interface.

Subcommands: fit, predict, cluster, compare-inference, synth-data.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .baseline import blr_baseline
from .clustering import run_cluster_schedule
from .config import RunConfig, load_config, with_chains, with_seed, with_task
from .data import (
    SYNTH_KINDS,
    IngestResult,
    ingest_csv,
    split_holdout,
    synth_data,
    write_dataset_csv,
)
from .errors import ConfigError, DataError, NumericError, StructureError
from .gp import Dataset, predict
from .inference import (
    averaged_prediction,
    drop_burn_in,
    gradient_supported,
    map_structure,
    run_hyper_inference,
    run_schedule,
    structure_histogram,
)
from .kernels import HyperSite, from_nested, hyper_sites, with_hyper
from .results import emit_results, rmse


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="covsearch",
        description="Bayesian search over compositional GP covariance structure.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int, help="override the schedule seed")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one config value (repeatable)",
    )
    needs_data = argparse.ArgumentParser(add_help=False)
    needs_data.add_argument("--data", required=True, help="input CSV file")
    needs_data.add_argument("--chains", type=int, help="override the chain count")

    sub = parser.add_subparsers(dest="task", required=True)
    sub.add_parser(
        "fit",
        parents=[common, needs_data],
        help="search structures, score them on a holdout split",
    ).set_defaults(runner=_run_fit_predict, holdout=True)
    sub.add_parser(
        "predict",
        parents=[common, needs_data],
        help="search structures on all data and emit predictive curves",
    ).set_defaults(runner=_run_fit_predict, holdout=False)
    sub.add_parser(
        "cluster",
        parents=[common, needs_data],
        help="partition related series over shared structures",
    ).set_defaults(runner=_run_cluster)
    sub.add_parser(
        "compare-inference",
        parents=[common, needs_data],
        help="fixed-structure hyperparameter inference, MH against gradients",
    ).set_defaults(runner=_run_compare)
    synth = sub.add_parser(
        "synth-data",
        parents=[common],
        help="generate a synthetic benchmark series",
    )
    synth.add_argument("--kind", required=True, choices=SYNTH_KINDS)
    synth.add_argument("--n", type=int, default=200, help="number of points")
    synth.set_defaults(runner=_run_synth)
    return parser


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config, tuple(args.overrides))
    cfg = with_task(cfg, args.task)
    if args.seed is not None:
        cfg = with_seed(cfg, args.seed)
    if getattr(args, "chains", None) is not None:
        cfg = with_chains(cfg, args.chains)
    return cfg


def _ingest(args, cfg: RunConfig) -> IngestResult:
    return ingest_csv(args.data, standardize=cfg.resolved_standardize())


def _post_burn(samples, cfg: RunConfig):
    kept = drop_burn_in(samples, cfg.schedule.burn_in)
    return kept if kept else samples


def _destandardized(transform, mean, std):
    if transform is None:
        return mean, std
    return transform.y_back(mean), transform.y_spread_back(std)


def _run_fit_predict(args, cfg: RunConfig) -> None:
    ingested = _ingest(args, cfg)
    full = ingested.dataset
    transform = ingested.standardization
    if args.holdout and cfg.holdout_fraction > 0.0:
        split_rng = np.random.default_rng(cfg.schedule.seed)
        train, held = split_holdout(
            full, cfg.holdout_fraction, cfg.holdout_mode, split_rng
        )
    else:
        train, held = full, Dataset(np.empty(0), np.empty(0))
    samples = run_schedule(
        train, None, cfg.schedule, prior=cfg.prior, noise_var=cfg.noise_var
    )
    if not samples:
        raise ConfigError("schedule recorded no samples; increase sweeps")
    kept = _post_burn(samples, cfg)
    counts = structure_histogram(kept)
    map_label = map_structure(kept)

    grid = np.linspace(float(np.min(full.xs)), float(np.max(full.xs)), cfg.probe_count)
    avg = averaged_prediction(kept, train, grid, cfg.noise_var, noisy=False)
    map_avg = averaged_prediction(
        kept, train, grid, cfg.noise_var, noisy=False, label=map_label
    )
    blr = blr_baseline(train, grid)

    grid_out = grid if transform is None else transform.x_back(grid)
    mean_out, std_out = _destandardized(transform, avg.mean, np.sqrt(avg.variance))
    map_out, _ = _destandardized(transform, map_avg.mean, np.sqrt(map_avg.variance))
    blr_mean, blr_std = _destandardized(transform, blr.mean, np.sqrt(blr.variance))
    predictions = {
        "x": grid_out,
        "mean": mean_out,
        "std": std_out,
        "map_mean": map_out,
        "blr_mean": blr_mean,
        "blr_std": blr_std,
    }
    if cfg.emit_sample_curves:
        chosen = kept[:: max(1, len(kept) // cfg.emit_sample_curves)]
        chosen = chosen[: cfg.emit_sample_curves]
        for i, sample in enumerate(chosen):
            curve = averaged_prediction(
                [sample], train, grid, cfg.noise_var, noisy=False
            )
            mean_i, _ = _destandardized(
                transform, curve.mean, np.sqrt(curve.variance)
            )
            predictions[f"sample_{i}"] = mean_i

    metrics: dict = {
        "task": cfg.task,
        "n_train": len(train),
        "n_holdout": len(held),
        "map_structure": map_label,
        "recorded_samples": len(kept),
        "standardization": None if transform is None else transform.to_dict(),
    }
    if len(held) > 0:
        avg_h = averaged_prediction(kept, train, held.xs, cfg.noise_var, noisy=True)
        map_h = averaged_prediction(
            kept, train, held.xs, cfg.noise_var, noisy=True, label=map_label
        )
        blr_h = blr_baseline(train, held.xs)
        truth = held.ys if transform is None else transform.y_back(held.ys)
        avg_mean, _ = _destandardized(transform, avg_h.mean, np.sqrt(avg_h.variance))
        map_mean, _ = _destandardized(transform, map_h.mean, np.sqrt(map_h.variance))
        blr_mean_h, _ = _destandardized(
            transform, blr_h.mean, np.sqrt(blr_h.variance)
        )
        metrics["holdout"] = {
            "gp_average_rmse": rmse(avg_mean, truth),
            "gp_map_rmse": rmse(map_mean, truth),
            "blr_rmse": rmse(blr_mean_h, truth),
        }
    emit_results(
        args.out, histogram=counts, predictions=predictions, metrics=metrics
    )


def _run_cluster(args, cfg: RunConfig) -> None:
    ingested = _ingest(args, cfg)
    names = [name for name, _ in ingested.series]
    series = [data for _, data in ingested.series]
    samples = run_cluster_schedule(
        series,
        None,
        cfg.schedule,
        concentration=cfg.concentration,
        prior=cfg.prior,
        noise_var=cfg.noise_var,
    )
    if not samples:
        raise ConfigError("schedule recorded no samples; increase sweeps")
    records = []
    for sample in samples:
        records.append(
            {
                "sweep": sample.sweep,
                "partition": [
                    [names[i] for i in members] for members in sample.partition
                ],
                "labels": list(sample.labels),
            }
        )
    cut = int(np.ceil(cfg.schedule.burn_in * len(samples)))
    post = samples[cut:] or samples
    tallies: dict[tuple, int] = {}
    for sample in post:
        tallies[sample.partition] = tallies.get(sample.partition, 0) + 1
    modal = max(sorted(tallies), key=lambda p: tallies[p])
    metrics = {
        "task": cfg.task,
        "n_series": len(series),
        "concentration": cfg.concentration,
        "modal_partition": [[names[i] for i in members] for members in modal],
        "modal_mass": tallies[modal] / len(post),
        "recorded_sweeps": len(samples),
    }
    emit_results(args.out, metrics=metrics, partitions=records)


def _compare_skeleton(cfg: RunConfig):
    try:
        spec = json.loads(cfg.compare_structure)
    except json.JSONDecodeError as err:
        raise ConfigError(f"compare_structure is not valid JSON: {err}") from None
    try:
        skeleton = from_nested(spec)
    except StructureError as err:
        raise ConfigError(f"compare_structure: {err}") from None
    if not gradient_supported(skeleton):
        raise ConfigError(
            "compare_structure contains a changepoint; the gradient "
            "method is undefined for it"
        )
    return skeleton


def _run_compare(args, cfg: RunConfig) -> None:
    ingested = _ingest(args, cfg)
    full = ingested.dataset
    transform = ingested.standardization
    if cfg.holdout_fraction > 0.0:
        split_rng = np.random.default_rng(cfg.schedule.seed)
        train, held = split_holdout(
            full, cfg.holdout_fraction, cfg.holdout_mode, split_rng
        )
    else:
        train, held = full, Dataset(np.empty(0), np.empty(0))
    skeleton = _compare_skeleton(cfg)
    steps = cfg.schedule.sweeps * cfg.schedule.hyper_steps
    if steps <= 0:
        raise ConfigError("schedule gives no hyper steps; increase sweeps")
    sites = hyper_sites(skeleton)
    traces_out: dict[str, dict[str, np.ndarray]] = {}
    metrics: dict = {
        "task": cfg.task,
        "n_train": len(train),
        "n_holdout": len(held),
        "structure": cfg.compare_structure,
        "steps_per_chain": steps,
        "methods": {},
    }
    for method in ("mh", "gradient"):
        traces, finals = run_hyper_inference(
            train,
            skeleton,
            steps,
            method,
            cfg.schedule,
            prior=cfg.prior,
            noise_var=cfg.noise_var,
        )
        columns: dict[str, np.ndarray] = {
            "chain": np.array([t.chain for t in traces], dtype=float),
            "step": np.array([t.step for t in traces], dtype=float),
            "log_joint": np.array([t.log_joint for t in traces]),
        }
        for i in range(len(sites)):
            columns[f"h{i}"] = np.array([t.values[i] for t in traces])
        traces_out[method] = columns
        summary: dict = {"final_log_joints": [s.log_joint for s in finals]}
        if len(held) > 0:
            if method == "mh":
                cut = int(cfg.schedule.burn_in * steps)
                posts = [t for t in traces if t.step >= cut] or traces
                posts = posts[:: max(1, len(posts) // 200)]
                preds = np.zeros(len(held))
                for point in posts:
                    ast = _ast_with_values(skeleton, sites, point.values)
                    preds += predict(ast, train, held.xs, cfg.noise_var).mean
                mean = preds / len(posts)
            else:
                best = max(finals, key=lambda s: s.log_joint)
                mean = predict(best.ast, train, held.xs, cfg.noise_var).mean
            truth = held.ys
            if transform is not None:
                mean = transform.y_back(mean)
                truth = transform.y_back(held.ys)
            summary["holdout_mse"] = float(np.mean((mean - truth) ** 2))
        metrics["methods"][method] = summary
    emit_results(args.out, metrics=metrics, traces=traces_out)


def _ast_with_values(skeleton, sites, values):
    ast = skeleton
    for (node, slot), value in zip(sites, values):
        offset = skeleton.nodes[node].hypers[slot].offset
        ast = with_hyper(ast, node, slot, HyperSite.from_constrained(value, offset))
    return ast


def _run_synth(args, cfg: RunConfig) -> None:
    rng = np.random.default_rng(cfg.schedule.seed)
    data = synth_data(args.kind, args.n, rng, cfg.noise_var)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_dataset_csv(out_dir / f"{args.kind}.csv", data)


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_run_config(args)
        args.runner(args, cfg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return 3
    except NumericError as err:
        print(f"numeric error: {err}", file=sys.stderr)
        return 4
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
