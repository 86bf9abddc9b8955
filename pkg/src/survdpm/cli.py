"""Command-line entry points.

Subcommands: train, sample, evaluate, synth, synth-study, ablation, describe.
Flags select the subcommand, config file, master seed, and output directory;
everything else lives in the config. Reports are JSON with stable key order,
series go to CSV side files, figures to PNG, and wall-clock timings to a
separate sidecar so reports stay byte-reproducible under a fixed seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from survdpm import checkpoint as ckpt
from survdpm import config as cfgmod
from survdpm import dataset as dsm
from survdpm import estimators, metrics, plotting, sampler, synthetic, target_space
from survdpm.config import ConfigError, RunConfig
from survdpm.dataset import DataValidationError
from survdpm.denoiser import DenoiserNet, FeatureLayout
from survdpm.schedule import cosine_schedule, rescale_steps
from survdpm.training import TrainingDiverged, train

log = logging.getLogger("survdpm")

THREADS_ENV = "SURVDPM_THREADS"

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(n, 1)


def parallel_map(fn, items):
    """Order-preserving map, threaded when the env override asks for it."""
    items = list(items)
    workers = thread_count()
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _prepare_out(out_dir, cfg: RunConfig) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config_resolved.yaml").write_text(cfgmod.canonical(cfg))
    return out


def _subject_rng(master_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=key))


# -- train -------------------------------------------------------------------


def _fit_model(ds, split, cfg: RunConfig, master_seed: int):
    """Shared training path for train/synth-study/ablation commands."""
    tr_feat, tr_times, tr_events = dsm.subset(ds, split.train)
    val = dsm.subset(ds, split.validation) if split.validation.size else None
    tf = target_space.fit(tr_times, mode=cfg.transform_mode)
    sched = cosine_schedule(cfg.schedule.r, cfg.schedule.s)
    layout = FeatureLayout.from_specs(ds.feature_specs)
    net = DenoiserNet(layout, cfg.model, _subject_rng(master_seed, 101))
    train_cfg = replace(cfg.train, seed=master_seed)
    net, history = train(net, (tr_feat, tr_times, tr_events), val, tf, sched, train_cfg)
    return net, tf, sched, history, (tr_times, tr_events)


def cmd_train(cfg: RunConfig, out_dir, master_seed: int) -> int:
    t0 = time.perf_counter()
    data_cfg = cfg.require("dataset")
    out = _prepare_out(out_dir, cfg)
    ds, split, pre = dsm.load_and_split(
        data_cfg.csv, data_cfg.schema(), data_cfg.fractions, data_cfg.split_seed,
        data_cfg.time_shift_epsilon,
    )
    try:
        net, tf, sched, history, (tr_times, tr_events) = _fit_model(ds, split, cfg, master_seed)
    except TrainingDiverged as exc:
        _write_json(out / "report.json", {
            "status": "diverged",
            "train_loss": exc.history["train_loss"],
            "val_loss": exc.history["val_loss"],
        })
        raise

    ckpt_path = out / "checkpoint.survdpm"
    summary = {
        "best_epoch": history["best_epoch"],
        "best_val_loss": history["best_val_loss"],
        "epochs_run": len(history["train_loss"]),
        "seed": master_seed,
    }
    ckpt.save(ckpt_path, net, tf, sched, pre, tr_times, tr_events, training_summary=summary)

    grid = estimators.TimeGrid.from_training(tr_times, tr_events)
    report = {
        "status": "ok",
        "n_rows": ds.n,
        "n_dropped": ds.n_dropped,
        "n_train": int(split.train.size),
        "n_validation": int(split.validation.size),
        "n_test": int(split.test.size),
        "event_rate": dsm.event_rate(ds),
        "train_event_rate": float(np.mean(tr_events)),
        "grid_size": len(grid),
        "best_epoch": history["best_epoch"],
        "best_val_loss": history["best_val_loss"],
        "train_loss": [float(v) for v in history["train_loss"]],
        "val_loss": [float(v) for v in history["val_loss"]],
        "checkpoint": ckpt_path.name,
        "seed": master_seed,
    }
    _write_json(out / "report.json", report)
    plotting.loss_history(history, out / "loss_history.png")
    _write_json(out / "timing.json", {"wall_seconds": time.perf_counter() - t0})
    log.info("checkpoint written to %s", ckpt_path)
    return EXIT_OK


# -- sample ------------------------------------------------------------------


def _load_checkpoint_bundle(path, r_new: int | None):
    loaded = ckpt.load(path)
    sched = loaded.schedule
    if r_new is not None:
        if r_new < 1:
            raise ConfigError("r_new must be >= 1")
        sched = rescale_steps(sched, r_new)
    return loaded, loaded.net, loaded.transform, sched


def cmd_sample(cfg: RunConfig, out_dir, master_seed: int) -> int:
    t0 = time.perf_counter()
    sample_cfg = cfg.require("sample")
    out = _prepare_out(out_dir, cfg)
    loaded, net, tf, sched = _load_checkpoint_bundle(sample_cfg.checkpoint, sample_cfg.r_new)
    features = dsm.load_features_csv(sample_cfg.features_csv, loaded.preprocessor)

    def one(idx):
        rng = _subject_rng(master_seed, 201, idx)
        return sampler.generate(net, features[idx], sample_cfg.k, sched, tf, rng)

    outcomes = parallel_map(one, range(features.shape[0]))
    rows = []
    for idx, gen in enumerate(outcomes):
        for j in range(gen.k):
            rows.append((idx, j, repr(float(gen.times[j])), int(gen.deltas[j])))
    _write_csv(out / "samples.csv", ("subject_id", "sample_id", "t", "delta"), rows)
    _write_json(out / "timing.json", {"wall_seconds": time.perf_counter() - t0})
    log.info("wrote %d samples for %d subjects", len(rows), features.shape[0])
    return EXIT_OK


# -- evaluate ----------------------------------------------------------------


def _evaluate_outcomes(outcomes, grid, test_times, test_events, g_curve, t_max_train):
    curves = [estimators.survival_from_samples(gen, grid) for gen in outcomes]
    scores = np.array([estimators.restricted_mean(c) for c in curves])
    ev = metrics.EvaluationInput(curves, scores, test_times, test_events, g_curve)
    km_test = estimators.kaplan_meier(test_times, test_events)
    result = {
        "c_index": metrics.c_index(ev),
        "integrated_auc": metrics.integrated_auc(ev, km_test),
        "ibs": metrics.ibs(ev),
    }
    all_times = np.concatenate([gen.times for gen in outcomes])
    all_deltas = np.concatenate([gen.deltas for gen in outcomes])
    pooled = sampler.GeneratedOutcomes(all_times, all_deltas, np.zeros(0))
    gen_rate, neg_rate, exceed_rate = sampler.generation_diagnostics(pooled, t_max_train)
    result["generated_event_rate"] = gen_rate
    result["negative_time_rate"] = neg_rate
    result["range_exceeding_rate"] = exceed_rate
    return result, ev, km_test


def cmd_evaluate(cfg: RunConfig, out_dir, master_seed: int) -> int:
    t0 = time.perf_counter()
    eval_cfg = cfg.require("evaluate")
    out = _prepare_out(out_dir, cfg)
    loaded, net, tf, sched = _load_checkpoint_bundle(eval_cfg.checkpoint, eval_cfg.r_new)
    raw = dsm.parse_csv(eval_cfg.test_csv, _schema_from_specs(loaded.specs))
    test_ds = loaded.preprocessor.build_dataset(raw)

    grid = estimators.TimeGrid.from_training(loaded.train_times, loaded.train_events)
    g_curve = estimators.censoring_km(loaded.train_times, loaded.train_events)
    t_max_train = float(loaded.train_times.max())

    def one(idx):
        rng = _subject_rng(master_seed, 201, idx)
        return sampler.generate(net, test_ds.features[idx], eval_cfg.k, sched, tf, rng)

    gen_start = time.perf_counter()
    outcomes = parallel_map(one, range(test_ds.n))
    gen_seconds = time.perf_counter() - gen_start

    result, ev, km_test = _evaluate_outcomes(
        outcomes, grid, test_ds.times, test_ds.events, g_curve, t_max_train
    )
    report = {
        "schema_hash": loaded.schema_hash,
        "n_test": test_ds.n,
        "k": eval_cfg.k,
        "r_used": sched.r,
        "seed": master_seed,
        "observed_event_rate": dsm.event_rate(test_ds),
        **result,
    }
    _write_json(out / "report.json", report)

    auc_rows = []
    for t in km_test.grid:
        a = metrics.td_auc(ev, float(t))
        auc_rows.append((repr(float(t)), "" if a is None else repr(a)))
    _write_csv(out / "auc_series.csv", ("time", "auc"), auc_rows)
    bs_rows = [(repr(float(t)), repr(metrics.brier(ev, float(t)))) for t in grid.points]
    _write_csv(out / "bs_series.csv", ("time", "brier"), bs_rows)

    auc_t = [float(r[0]) for r in auc_rows if r[1] != ""]
    auc_v = [float(r[1]) for r in auc_rows if r[1] != ""]
    plotting.metric_series(
        auc_t, auc_v, [float(r[0]) for r in bs_rows], [float(r[1]) for r in bs_rows],
        out / "metric_series.png",
    )
    _write_json(out / "timing.json", {
        "wall_seconds": time.perf_counter() - t0,
        "generation_seconds": gen_seconds,
        "k": eval_cfg.k,
        "n_test": test_ds.n,
    })
    return EXIT_OK


def _schema_from_specs(specs) -> dsm.SchemaDeclaration:
    time_col = next(s.name for s in specs if s.kind == "time")
    event_col = next(s.name for s in specs if s.kind == "event")
    cats = tuple(s.name for s in specs if s.kind == "categorical")
    return dsm.SchemaDeclaration(time_col, event_col, cats)


# -- synth -------------------------------------------------------------------


def cmd_synth(cfg: RunConfig, out_dir, master_seed: int) -> int:
    synth_cfg = cfg.require("synth")
    out = _prepare_out(out_dir, cfg)
    rng = _subject_rng(master_seed, 301)
    xs = synthetic.gaussian_features(synth_cfg.n, synth_cfg.d, rng)
    model = synthetic.random_model(
        synth_cfg.d, rng, lam=synth_cfg.weibull_lambda, nu=synth_cfg.weibull_nu
    )
    c_max = synthetic.calibrate_censoring(model, xs, synth_cfg.event_rate, rng)
    model = synthetic.with_c_max(model, c_max)
    ds = synthetic.generate_dataset(model, xs, rng)

    header = [f"x{j}" for j in range(synth_cfg.d)] + ["time", "event"]
    rows = [
        [repr(float(v)) for v in xs[i]] + [repr(float(ds.times[i])), int(ds.events[i])]
        for i in range(ds.n)
    ]
    _write_csv(out / "synthetic.csv", header, rows)
    _write_json(out / "generator.json", {
        "coefficients": [float(b) for b in model.coeffs],
        "lambda": model.lam,
        "nu": model.nu,
        "c_max": model.c_max,
        "seed": master_seed,
        "event_rate_target": synth_cfg.event_rate,
        "event_rate_realized": dsm.event_rate(ds),
    })
    log.info("synthetic dataset: %d rows, event rate %.3f", ds.n, dsm.event_rate(ds))
    return EXIT_OK


# -- synth-study -------------------------------------------------------------


def cmd_synth_study(cfg: RunConfig, out_dir, master_seed: int) -> int:
    t0 = time.perf_counter()
    study = cfg.synth_study
    out = _prepare_out(out_dir, cfg)
    grid_pts = np.linspace(0.0, study.grid_max, study.grid_points)
    table: dict[int, dict[str, float]] = {k: {} for k in study.k_values}
    regime_reports = {}

    for rate in study.event_rates:
        regime = f"{int(round(rate * 100))}%"
        rng = _subject_rng(master_seed, 301, int(round(rate * 100)))
        xs = synthetic.gaussian_features(study.n, study.d, rng)
        model = synthetic.random_model(study.d, rng, lam=study.weibull_lambda, nu=study.weibull_nu)
        c_max = synthetic.calibrate_censoring(model, xs, rate, rng)
        model = synthetic.with_c_max(model, c_max)
        ds = synthetic.generate_dataset(model, xs, rng)
        split = dsm.stratified_split(ds, study.fractions, seed=master_seed + 1)
        net, tf, sched, history, _ = _fit_model(ds, split, cfg, master_seed)

        curve_dump: dict[int, list] = {}
        gen_rate_parts = []
        for k in study.k_values:
            def one(pair):
                si, row = pair
                g = _subject_rng(master_seed, 401, int(round(rate * 100)), k, si)
                gen = sampler.generate(net, ds.features[row], k, sched, tf, g)
                km = estimators.kaplan_meier(gen.times, gen.deltas)
                ks = metrics.ks_distance(
                    km, lambda t: synthetic.analytic_survival(model, xs[row], t), grid_pts
                )
                return ks, km.evaluate(grid_pts), float(np.mean(gen.deltas))

            results = parallel_map(one, enumerate(split.test))
            table[k][regime] = float(np.mean([r[0] for r in results]))
            curve_dump[k] = [r[1] for r in results[: study.curve_subjects]]
            if k == max(study.k_values):
                gen_rate_parts = [r[2] for r in results]

        # curve CSVs on the uniform grid: analytic plus per-K model curves
        for sj in range(min(study.curve_subjects, split.test.size)):
            row = split.test[sj]
            analytic = synthetic.analytic_survival(model, xs[row], grid_pts)
            header = ["time", "analytic"] + [f"k{k}" for k in study.k_values]
            rows = []
            for gi, t in enumerate(grid_pts):
                rows.append(
                    [repr(float(t)), repr(float(analytic[gi]))]
                    + [repr(float(curve_dump[k][sj][gi])) for k in study.k_values]
                )
            _write_csv(out / f"curves_rate{int(round(rate*100))}_subject{sj}.csv", header, rows)

        subj0 = split.test[0]
        overlay = {"analytic": synthetic.analytic_survival(model, xs[subj0], grid_pts)}
        for k in study.k_values:
            overlay[f"K={k}"] = curve_dump[k][0]
        plotting.survival_overlay(
            grid_pts, overlay, out / f"curves_rate{int(round(rate*100))}.png",
            title=f"event rate {regime}",
        )
        regime_reports[regime] = {
            "c_max": model.c_max,
            "observed_event_rate": dsm.event_rate(ds),
            "generated_event_rate": float(np.mean(gen_rate_parts)),
            "best_epoch": history["best_epoch"],
            "best_val_loss": history["best_val_loss"],
            "ks_by_k": {str(k): table[k][regime] for k in study.k_values},
        }
        log.info("regime %s: KS by K %s", regime, regime_reports[regime]["ks_by_k"])

    regimes = [f"{int(round(r * 100))}%" for r in study.event_rates]
    _write_csv(
        out / "ks_table.csv",
        ["k"] + regimes,
        [[k] + [repr(table[k][r]) for r in regimes] for k in study.k_values],
    )
    plotting.ks_table_figure(
        list(study.k_values), {r: [table[k][r] for k in study.k_values] for r in regimes},
        out / "ks_trend.png",
    )
    _write_json(out / "report.json", {"seed": master_seed, "regimes": regime_reports})
    _write_json(out / "timing.json", {"wall_seconds": time.perf_counter() - t0})
    return EXIT_OK


# -- ablation ----------------------------------------------------------------


def cmd_ablation(cfg: RunConfig, out_dir, master_seed: int) -> int:
    t0 = time.perf_counter()
    data_cfg = cfg.require("dataset")
    out = _prepare_out(out_dir, cfg)
    ds, split, _pre = dsm.load_and_split(
        data_cfg.csv, data_cfg.schema(), data_cfg.fractions, data_cfg.split_seed,
        data_cfg.time_shift_epsilon,
    )
    grid = estimators.TimeGrid.from_training(*_train_outcomes(ds, split))
    g_curve = estimators.censoring_km(*_train_outcomes(ds, split))
    t_max_train = float(ds.times[split.train].max())
    observed_rate = dsm.event_rate(ds)

    variants = {}
    for mode in ("transformed", "raw_ablation"):
        variant_cfg = replace(cfg, transform_mode=mode)
        net, tf, sched, history, _ = _fit_model(ds, split, variant_cfg, master_seed)

        def one(pair):
            si, row = pair
            g = _subject_rng(master_seed, 501, si)
            return sampler.generate(net, ds.features[row], cfg.ablation.k, sched, tf, g)

        outcomes = parallel_map(one, enumerate(split.test))
        result, _, _ = _evaluate_outcomes(
            outcomes, grid, ds.times[split.test], ds.events[split.test], g_curve, t_max_train
        )
        result["event_rate_error"] = abs(result["generated_event_rate"] - observed_rate)
        result["best_val_loss"] = history["best_val_loss"]
        variants[mode] = result

    if variants["transformed"]["negative_time_rate"] != 0.0:
        raise FloatingPointError(
            "transformed mode produced negative times; the decode guarantee is broken"
        )

    report = {
        "seed": master_seed,
        "k": cfg.ablation.k,
        "observed_event_rate": observed_rate,
        "transformed": variants["transformed"],
        "raw_ablation": variants["raw_ablation"],
    }
    _write_json(out / "report.json", report)
    header = ["metric", "transformed", "raw_ablation"]
    keys = ["c_index", "integrated_auc", "ibs", "generated_event_rate",
            "event_rate_error", "negative_time_rate", "range_exceeding_rate"]
    _write_csv(out / "comparison.csv", header,
               [[k, repr(variants["transformed"][k]), repr(variants["raw_ablation"][k])]
                for k in keys])
    plotting.ablation_bars(
        ["event-rate error", "negative-time rate", "range-exceeding rate"],
        {
            "transformed": [variants["transformed"][k] for k in
                            ("event_rate_error", "negative_time_rate", "range_exceeding_rate")],
            "raw": [variants["raw_ablation"][k] for k in
                    ("event_rate_error", "negative_time_rate", "range_exceeding_rate")],
        },
        "rate", out / "ablation.png",
    )
    _write_json(out / "timing.json", {"wall_seconds": time.perf_counter() - t0})
    return EXIT_OK


def _train_outcomes(ds, split):
    return ds.times[split.train], ds.events[split.train]


# -- describe ----------------------------------------------------------------


def cmd_describe(path) -> int:
    print(ckpt.describe(path))
    return EXIT_OK


# -- entry point ---------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="survdpm",
        description="Diffusion-based conditional generator for censored survival outcomes",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train", "sample", "evaluate", "synth", "synth-study", "ablation"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
    d = sub.add_parser("describe")
    d.add_argument("checkpoint", help="checkpoint file to describe")
    return parser


_COMMANDS = {
    "train": cmd_train,
    "sample": cmd_sample,
    "evaluate": cmd_evaluate,
    "synth": cmd_synth,
    "synth-study": cmd_synth_study,
    "ablation": cmd_ablation,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "describe":
            return cmd_describe(args.checkpoint)
        cfg = cfgmod.load(args.config)
        seed = args.seed if args.seed is not None else cfg.seed
        return _COMMANDS[args.command](cfg, args.out, seed)
    except (ConfigError, DataValidationError) as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except Exception as exc:  # runtime failures map to a distinct exit code
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
