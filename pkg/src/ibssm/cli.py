"""Command-line entry point.

Subcommands: train, eval, sweep, robustness, horizon, invariance, synth,
grad-check. Configuration comes from a JSON file (--config) with flag
overrides; every run echoes its effective configuration into the output
directory. Progress goes to stderr, data to files only.

Exit codes: 0 success, 1 configuration error, 2 runtime/numeric error.
"""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import data, engine, harness
from .config import ExperimentConfig, parse_config, write_effective_config
from .exceptions import ConfigurationError, DataError, IbssmError
from .ssm import SsmConfig

OUT_DIR_ENV = "IBSSM_OUT"
GRAD_CHECK_BOUND = 1e-4


def _log(message):
    print(message, file=sys.stderr)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ibssm",
        description="Selective state-space forecaster with a minimality regularizer.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help=f"output directory (or ${OUT_DIR_ENV})")
        p.add_argument("--dataset", help="CSV dataset path (default: synthetic)")
        p.add_argument("--lambda", dest="lam", type=float, help="single regularizer weight; replaces the grid")
        p.add_argument("--seed", type=int, help="single base seed; replaces the seed list")
        p.add_argument("--lookback", type=int)
        p.add_argument("--horizon", type=int)
        p.add_argument("--variant", choices=("rate", "decoder"))
        p.add_argument("--max-epochs", dest="max_epochs", type=int)
        p.add_argument("--timing-in-csv", action="store_true", help="include wall-clock seconds in metrics.csv (breaks byte-stable output)")

    for name, doc in (
        ("train", "train one model and write a checkpoint"),
        ("eval", "evaluate a checkpoint on the dataset's test split"),
        ("sweep", "train across the regularizer-weight grid"),
        ("robustness", "sweep with impulse-noise evaluation"),
        ("horizon", "sweep per forecast horizon"),
        ("invariance", "sweep reporting the posterior-shift divergence"),
        ("synth", "generate a synthetic CSV dataset"),
        ("grad-check", "verify gradients against finite differences"),
    ):
        p = sub.add_parser(name, help=doc)
        add_common(p)
        if name == "eval":
            p.add_argument("--checkpoint", required=True, help="checkpoint JSON written by train")
        if name == "synth":
            p.add_argument("--out-file", help="CSV destination (default <out>/synthetic.csv)")
    return parser


def _load_config(args):
    overrides = {
        "dataset": args.dataset,
        "lookback": args.lookback,
        "horizon": args.horizon,
        "variant": args.variant,
        "max_epochs": args.max_epochs,
        "out_dir": args.out or os.environ.get(OUT_DIR_ENV),
    }
    if args.lam is not None:
        if args.lam < 0:
            raise ConfigurationError(f"lambda must be non-negative, got {args.lam}")
        overrides["lambda_grid"] = [args.lam]
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    if getattr(args, "timing_in_csv", False):
        overrides["csv_timing"] = True
    return parse_config(args.config, overrides)


def _sweep_chart(sweep, value_keys, ylabel):
    xs = [s["lam"] for s in sweep.per_lambda]
    series = {}
    for key in value_keys:
        ys = [s[key] for s in sweep.per_lambda]
        if any(y is not None for y in ys):
            series[key] = (xs, ys)
    return {"series": series, "title": ylabel + " vs lambda", "xlabel": "lambda (log scale)", "ylabel": ylabel, "log_x": True}


def cmd_train(config: ExperimentConfig):
    prepared = harness.prepare(config)
    lam = config.lambda_grid[0]
    seed = config.seeds[0]
    _log(f"training lambda={lam} seed={seed} on {prepared.frame.name}")
    est = harness.fit_forecaster(config, prepared, lam, seed)
    record = harness.MetricsRecord(
        dataset=prepared.frame.name, lookback=config.lookback, horizon=config.horizon,
        lam=lam, variant=config.variant, seed=seed,
    )
    preds = est.predict(prepared.test_w)
    stats = prepared.frame.norm_stats if config.denormalized_metrics else None
    record.mse_clean, record.mae_clean = harness.forecast_metrics(preds, prepared.test_w, est.config_, stats)
    record.val_mse = est.best_val_mse_
    record.loss_pred = est.history_[-1]["train_pred"]
    record.loss_min = est.history_[-1]["train_min"]

    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    engine.save_checkpoint(
        out / "checkpoint.json",
        est.params_,
        meta={
            "model": "ssm",
            "lambda": lam,
            "seed": seed,
            "n_channels": est.n_features_in_,
            "config": config.to_dict(),
        },
    )
    harness.emit([record], out, csv_timing=config.csv_timing)
    _log(f"test mse={record.mse_clean:.6f} mae={record.mae_clean:.6f}")
    return 0


def cmd_eval(config: ExperimentConfig, checkpoint):
    params, meta = engine.load_checkpoint(checkpoint)
    stored = meta.get("config", {})
    for key in ("lookback", "horizon", "embed_dim", "state_dim", "bottleneck_dim", "stochastic", "multi_position_loss", "warmup", "target_channels"):
        if key in stored:
            setattr(config, key, stored[key])
    config.target_channels = tuple(config.target_channels) if config.target_channels else None
    prepared = harness.prepare(config)
    model_cfg = config.model_config(meta.get("n_channels", prepared.frame.n_channels))
    stats = prepared.frame.norm_stats if config.denormalized_metrics else None
    mse, mae = harness.evaluate(params, prepared.test_w, model_cfg, stats)
    record = harness.MetricsRecord(
        dataset=prepared.frame.name, lookback=config.lookback, horizon=config.horizon,
        lam=float(meta.get("lambda", 0.0)), variant=config.variant, seed=int(meta.get("seed", 0)),
        mse_clean=mse, mae_clean=mae,
    )
    harness.emit([record], config.out_dir, csv_timing=config.csv_timing)
    _log(f"test mse={mse:.6f} mae={mae:.6f}")
    return 0


def cmd_sweep(config: ExperimentConfig):
    sweep = harness.lambda_sweep(config)
    charts = {"sweep": _sweep_chart(sweep, ("mse_clean", "mae_clean", "val_mse"), "forecast error")}
    harness.emit(sweep.records, config.out_dir, charts=charts, csv_timing=config.csv_timing)
    _log(f"sweet spot lambda={sweep.sweet_lambda}")
    return 0


def cmd_robustness(config: ExperimentConfig):
    sweep = harness.lambda_sweep(config, with_noise=True)
    charts = {
        "sweep": _sweep_chart(sweep, ("mse_clean", "mse_noisy"), "forecast error"),
        "robustness": _sweep_chart(sweep, ("degradation_pct",), "degradation percent"),
    }
    harness.emit(sweep.records, config.out_dir, charts=charts, csv_timing=config.csv_timing)
    _log(f"sweet spot lambda={sweep.sweet_lambda}")
    return 0


def cmd_invariance(config: ExperimentConfig):
    sweep = harness.lambda_sweep(config, with_noise=True)
    charts = {"invariance": _sweep_chart(sweep, ("invariance_kl",), "posterior divergence")}
    harness.emit(sweep.records, config.out_dir, charts=charts, csv_timing=config.csv_timing)
    for summary in sweep.per_lambda:
        _log(f"lambda={summary['lam']}: invariance_kl={summary['invariance_kl']}")
    return 0


def cmd_horizon(config: ExperimentConfig):
    rows = harness.horizon_study(config)
    records = [r for row in rows for r in row["records"]]
    harness.emit(records, config.out_dir, csv_timing=config.csv_timing)
    table = [{k: row[k] for k in ("horizon", "sweet_lambda", "test_mse")} for row in rows]
    Path(config.out_dir, "horizon.json").write_text(json.dumps(table, indent=2) + "\n")
    for row in table:
        _log(f"horizon={row['horizon']}: sweet lambda={row['sweet_lambda']} mse={row['test_mse']}")
    return 0


def cmd_synth(config: ExperimentConfig, out_file):
    frame = data.gen_synthetic(config.synthetic)
    path = Path(out_file) if out_file else Path(config.out_dir) / "synthetic.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    data.export_csv(frame, path)
    _log(f"wrote {frame.length} rows to {path}")
    return 0


def cmd_grad_check(config: ExperimentConfig):
    model_cfg = SsmConfig(
        input_channels=2, lookback=8, horizon=2, embed_dim=4, state_dim=4, bottleneck_dim=4,
        stochastic=config.stochastic,
    )
    rng = np.random.default_rng(config.seeds[0])
    windows = rng.normal(size=(4, model_cfg.lookback + model_cfg.horizon, 2))
    results = {}
    for variant in ("rate", "decoder"):
        objective = engine.SsmObjective(model_cfg, lam=0.5, variant=variant, decoder_weight=0.5)
        params = objective.init_params(np.random.default_rng(config.seeds[0]))
        err = engine.grad_check(objective, params, windows, rng=np.random.default_rng(1))
        results[variant] = err
        print(f"grad-check {variant}: max relative error {err:.3e}")
    worst = max(results.values())
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "grad_check.json").write_text(json.dumps({"max_relative_error": worst, "per_variant": results}, indent=2) + "\n")
    print(f"grad-check max relative error {worst:.3e} (bound {GRAD_CHECK_BOUND})")
    return 0 if worst < GRAD_CHECK_BOUND else 2


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = _load_config(args)
        write_effective_config(config, config.out_dir)
        if args.command == "train":
            return cmd_train(config)
        if args.command == "eval":
            return cmd_eval(config, args.checkpoint)
        if args.command == "sweep":
            return cmd_sweep(config)
        if args.command == "robustness":
            return cmd_robustness(config)
        if args.command == "invariance":
            return cmd_invariance(config)
        if args.command == "horizon":
            return cmd_horizon(config)
        if args.command == "synth":
            return cmd_synth(config, args.out_file)
        if args.command == "grad-check":
            return cmd_grad_check(config)
        raise ConfigurationError(f"unknown command {args.command!r}")
    except (ConfigurationError, DataError) as err:
        print(f"error: config: {_one_line(err)}", file=sys.stderr)
        return 1
    except IbssmError as err:
        print(f"error: runtime: {_one_line(err)}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"error: io: {_one_line(err)}", file=sys.stderr)
        return 2


def _one_line(err):
    return " ".join(str(err).split())


if __name__ == "__main__":
    sys.exit(main())
