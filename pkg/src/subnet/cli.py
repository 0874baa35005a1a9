"""Command-line entry point.

Commands: generate, train, eval, compare, analyze. Every command is driven
by a JSON config (flags override), and writes all outputs plus a copy of
the effective config into the run directory so each run is reproducible
from that directory alone.

Exit codes: 0 success, 2 config error, 3 numeric divergence, 4 IO error.
"""

from __future__ import annotations

import argparse
import csv
import json
import shutil
import sys
from pathlib import Path

import numpy as np

from . import analysis, baselines, data
from .autodiff import NumericError
from .model import CheckpointError, load_model
from .optim import TrainConfig, train, write_report_csv, write_timing_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


class ConfigError(ValueError):
    pass


# -- config schema (unknown keys rejected) ------------------------------------

_GENERATOR_KEYS = {"variant", "sigma_k", "sigma_e", "n_samples", "seed"}
_DATA_KEYS = {
    "generator": _GENERATOR_KEYS,
    "train_csv": None,
    "val_csv": None,
    "test_csv": None,
    "csv": None,
    "split": {"train_len", "val_len", "test_len"},
    "n_u": None,
    "n_y": None,
}
_MODEL_KEYS = {
    "n_x", "n_a", "n_b", "noise",
    "hidden_layers", "hidden_width", "activation", "bypass",
}
_TRAIN_KEYS = {
    "horizon", "batch_size", "spacing", "learning_rate",
    "max_epochs", "patience", "val_metric", "budget_s",
}
_SCHEMA = {
    "seed": None,
    "out": None,
    "data": _DATA_KEYS,
    "model": _MODEL_KEYS,
    "train": _TRAIN_KEYS,
    "eval": {"checkpoint", "k_max", "skip"},
    "compare": {"variants", "budget_s"},
    "analyze": {"horizons", "record_lengths", "n_trials", "max_horizon_sweep"},
}


def _validate(node, schema, path=""):
    if not isinstance(node, dict):
        raise ConfigError(f"config section {path or '<root>'} must be an object")
    for key, value in node.items():
        where = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown config key: {where}")
        sub = schema[key] if isinstance(schema, dict) else None
        if isinstance(sub, (dict, set)):
            _validate(value, sub, where)


def load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    _validate(cfg, _SCHEMA)
    return cfg


def _train_config(cfg, seed):
    model_cfg = cfg.get("model", {})
    train_cfg = cfg.get("train", {})
    kwargs = {}
    for key in _MODEL_KEYS:
        if key in model_cfg:
            kwargs[key] = model_cfg[key]
    for key in _TRAIN_KEYS:
        if key in train_cfg:
            kwargs[key] = train_cfg[key]
    kwargs["seed"] = seed
    try:
        return TrainConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad train/model config: {exc}") from exc


def _load_datasets(cfg, seed, need=("train", "val", "test")):
    data_cfg = cfg.get("data", {})
    if "generator" in data_cfg:
        gen = data_cfg["generator"]
        splits = data.benchmark_splits(
            seed=gen.get("seed", seed),
            variant=gen.get("variant", "base"),
            sigma_k=gen.get("sigma_k", 0.0),
            sigma_e=gen.get("sigma_e", data.SIGMA_E_20DB),
        )
        return dict(zip(("train", "val", "test"), splits))
    n_u = data_cfg.get("n_u", 1)
    n_y = data_cfg.get("n_y", 1)
    if "csv" in data_cfg:
        full = data.load_csv(data_cfg["csv"], n_u, n_y)
        split = data_cfg.get("split")
        if split is None:
            raise ConfigError("data.csv requires data.split lengths")
        parts = data.slice_splits(
            full, split["train_len"], split["val_len"], split["test_len"]
        )
        return dict(zip(("train", "val", "test"), parts))
    out = {}
    for name in need:
        key = f"{name}_csv"
        if key not in data_cfg:
            raise ConfigError(f"data.{key} (or data.generator/data.csv) is required")
        out[name] = data.load_csv(data_cfg[key], n_u, n_y)
        out[name].name = name
    return out


def _prepare_out(args, cfg):
    out = Path(args.out or cfg.get("out", "runs/run"))
    out.mkdir(parents=True, exist_ok=True)
    effective = dict(cfg)
    effective["seed"] = _seed(args, cfg)
    with open(out / "config.json", "w") as fh:
        json.dump(effective, fh, indent=2, sort_keys=True)
    return out


def _seed(args, cfg):
    return args.seed if args.seed is not None else cfg.get("seed", 0)


# -- commands ------------------------------------------------------------------


def cmd_generate(args, cfg):
    out = _prepare_out(args, cfg)
    seed = _seed(args, cfg)
    datasets = _load_datasets(cfg, seed)
    paths = {name: out / f"{name}.csv" for name in datasets}
    if not args.force:
        existing = [str(p) for p in paths.values() if p.exists()]
        if existing:
            print(
                f"refusing to overwrite {', '.join(existing)} (use --force)",
                file=sys.stderr,
            )
            return EXIT_IO
    for name, ds in datasets.items():
        data.save_csv(ds, paths[name])
        print(f"wrote {paths[name]} ({len(ds)} samples)")
    return EXIT_OK


def cmd_train(args, cfg):
    out = _prepare_out(args, cfg)
    seed = _seed(args, cfg)
    datasets = _load_datasets(cfg, seed, need=("train", "val"))
    config = _train_config(cfg, seed)
    model, report = train(
        config, datasets["train"], datasets["val"], checkpoint_path=out / "model.bin"
    )
    write_report_csv(report, out / "report.csv")
    write_timing_csv(report, out / "timing.csv")
    if report.epochs_run:
        print(
            f"best epoch {report.best_epoch}: "
            f"validation metric {report.val_metric[report.best_epoch]:.6g}"
        )
    else:
        print("no epochs run; wrote initialized model")
    print(f"wrote {out / 'model.bin'}")
    if report.diverged:
        print("training diverged; best checkpoint kept", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_eval(args, cfg):
    out = _prepare_out(args, cfg)
    seed = _seed(args, cfg)
    eval_cfg = cfg.get("eval", {})
    ckpt = args.checkpoint or eval_cfg.get("checkpoint")
    if ckpt is None:
        raise ConfigError("eval.checkpoint (or --checkpoint) is required")
    model = load_model(ckpt)
    datasets = _load_datasets(cfg, seed, need=("test",))
    test = datasets["test"]
    if test.n_u != model.n_u or test.n_y != model.n_y:
        raise ConfigError(
            f"checkpoint expects n_u={model.n_u}, n_y={model.n_y}; dataset has "
            f"n_u={test.n_u}, n_y={test.n_y}"
        )
    k_max = args.kmax if args.kmax is not None else eval_cfg.get("k_max", 0)
    sim = model.simulate(test, mode="free-run")
    test_nrms = analysis.nrms(test.y[sim.skip :], sim.y_sim[sim.skip :])
    print(f"free-run NRMS: {test_nrms:.6g} ({100 * test_nrms:.4g}%)")

    with open(out / "simulation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "y_measured", "y_sim"])
        for t in range(len(test)):
            for ch in range(test.n_y):
                writer.writerow(
                    [t, f"{test.y[t, ch]:.17g}", f"{sim.y_sim[t, ch]:.17g}"]
                )

    profile = analysis.kstep_nrms(model, test, k_max)
    t_idx, preds = model.kstep_predictions(test, k_max)
    with open(out / "kstep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "k", "y_hat", "y_measured"])
        for i, t in enumerate(t_idx):
            for k in range(k_max + 1):
                for ch in range(test.n_y):
                    writer.writerow(
                        [t, k, f"{preds[i, k, ch]:.17g}", f"{test.y[t + k, ch]:.17g}"]
                    )
    with open(out / "kstep_nrms.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "nrms"])
        for k, v in enumerate(profile.values):
            writer.writerow([k, f"{v:.17g}"])
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        writer.writerow(["free_run_nrms", f"{test_nrms:.17g}"])
        writer.writerow(["skip", sim.skip])
    print(f"wrote {out / 'simulation.csv'}, {out / 'kstep.csv'}")
    return EXIT_OK


def cmd_compare(args, cfg):
    out = _prepare_out(args, cfg)
    seed = _seed(args, cfg)
    compare_cfg = cfg.get("compare", {})
    variants = compare_cfg.get("variants", list(baselines.VARIANTS))
    for v in variants:
        if v not in baselines.VARIANTS:
            raise ConfigError(f"unknown compare variant {v!r}")
    datasets = _load_datasets(cfg, seed)
    config = _train_config(cfg, seed)
    if "budget_s" in compare_cfg:
        config.budget_s = compare_cfg["budget_s"]
    results = {}
    for variant in variants:
        model, report = baselines.run_variant(
            variant, config, datasets["train"], datasets["val"]
        )
        results[variant] = baselines.evaluate_variant(variant, model, datasets["test"])
        write_report_csv(report, out / f"curve_{variant}.csv")
        write_timing_csv(report, out / f"timing_{variant}.csv")
        print(f"{variant}: test NRMS {100 * results[variant]:.3f}%")
    rows = baselines.compare_report(results)
    baselines.write_compare_csv(rows, out / "compare.csv")
    print(f"wrote {out / 'compare.csv'}")
    return EXIT_OK


def cmd_analyze(args, cfg):
    out = _prepare_out(args, cfg)
    seed = _seed(args, cfg)
    an = cfg.get("analyze", {})
    horizons = an.get("horizons", [4, 8, 16])
    lengths = an.get("record_lengths", [256, 512, 1024])
    n_trials = an.get("n_trials", 2000)
    sweep_max = an.get("max_horizon_sweep", 64)

    with open(out / "g_of_d.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["horizon", "m_1", "m_T", "g_overlap", "g_no_overlap"])
        for horizon in range(1, sweep_max + 1):
            n_samples = 10 * horizon
            m_1, m_T = analysis.mc_start_counts(horizon, n_samples)
            writer.writerow(
                [
                    horizon, m_1, m_T,
                    f"{analysis.g_of_d(1, horizon, m_1):.17g}",
                    f"{analysis.g_of_d(horizon, horizon, m_T):.17g}",
                ]
            )

    with open(out / "overlap_mc.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["horizon", "n_samples", "var_d1", "var_dT", "mc_ratio", "analytic_ratio"]
        )
        for horizon, n_samples in zip(horizons, lengths):
            var1, varT = analysis.overlap_variance_mc(horizon, n_samples, n_trials, seed)
            m_1, m_T = analysis.mc_start_counts(horizon, n_samples)
            ratio = var1 / varT
            g_ratio = analysis.g_of_d(1, horizon, m_1) / analysis.g_of_d(
                horizon, horizon, m_T
            )
            writer.writerow(
                [
                    horizon, n_samples,
                    f"{var1:.17g}", f"{varT:.17g}",
                    f"{ratio:.6g}", f"{g_ratio:.6g}",
                ]
            )
            print(
                f"T={horizon} N={n_samples}: var(d=1)/var(d=T) = {ratio:.4f} "
                f"(analytic {g_ratio:.4f})"
            )
    print(f"wrote {out / 'g_of_d.csv'}, {out / 'overlap_mc.csv'}")
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="subnet",
        description="Encoder-based nonlinear state-space system identification",
    )
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int, help="override config seed")
    parser.add_argument(
        "--threads", type=int, default=1,
        help="BLAS thread cap; 1 (default) guarantees bit-reproducibility",
    )
    parser.add_argument("--force", action="store_true", help="overwrite outputs")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", help="write train/val/test dataset CSVs")
    sub.add_parser("train", help="train a model, write checkpoint and report")
    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on test data")
    p_eval.add_argument("--checkpoint", help="model checkpoint path")
    p_eval.add_argument("--kmax", type=int, help="k-step profile depth")
    sub.add_parser("compare", help="run baseline comparison variants")
    sub.add_parser("analyze", help="overlap variance analysis (analytic + MC)")
    return parser


def _limit_threads(n):
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(limits=n)
    except ImportError:
        pass


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "analyze": cmd_analyze,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    _limit_threads(args.threads)
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except (data.CsvFormatError, CheckpointError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, data.InstabilityError) as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
