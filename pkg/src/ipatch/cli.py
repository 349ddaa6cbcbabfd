"""Command line front end.

Exit codes: 0 success, 1 runtime failure, 2 validation failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import torch

from . import checks
from .config import ExperimentConfig, load_config
from .data import save_csv
from .model import build, load_checkpoint, parameter_count, save_checkpoint
from .numeric import ConfigError
from .plotting import load_forecast, plot_forecast
from .trainer import (
    ablation_table,
    evaluate,
    overlap_table,
    predict,
    prepare,
    run_ablation,
    run_overlap_experiment,
    train,
    config_hash,
    write_reports,
)

log = logging.getLogger("ipatch")

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _prepare(cfg: ExperimentConfig, model_cfg=None):
    model_cfg = model_cfg or cfg.model
    series = cfg.load_series()
    return prepare(series, model_cfg.patch.L, model_cfg.horizon, cfg.split, cfg.raw.data.stride)


def _echo(args, text: str) -> None:
    if not args.quiet:
        sys.stdout.write(text)


def cmd_synth_data(cfg: ExperimentConfig, args) -> int:
    series = cfg.synth_series()
    path = cfg.output_dir / "series.csv"
    save_csv(series, path)
    _echo(args, f"wrote {path} (T={series.T}, M={series.M})\n")
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, args) -> int:
    start = time.perf_counter()
    data = _prepare(cfg)
    chash = config_hash(cfg.model, cfg.train, {"split": list(cfg.split.fractions),
                                               "boundaries": data.boundaries})
    model = build(cfg.model)
    model, history = train(model, data.samples["train"], cfg.train, data.samples["val"] or None)
    ckpt = cfg.output_dir / "checkpoint.ckpt"
    save_checkpoint(model, ckpt)
    metrics = {}
    for split, samples in data.samples.items():
        if samples:
            metrics[split] = evaluate(model, samples, split=split, scaler=data.scaler,
                                      raw_scale=cfg.raw.data.raw_scale, config_hash=chash,
                                      seed=cfg.seed).to_dict()
    report = {
        "config_hash": chash,
        "seed": cfg.seed,
        "model_config": cfg.model.to_dict(),
        "train_config": dataclasses.asdict(cfg.train),
        "boundaries": data.boundaries,
        "n_parameters": parameter_count(cfg.model),
        "history": history.to_dict(),
        "metrics": metrics,
        "checkpoint": ckpt.name,
        "wall_clock": time.perf_counter() - start,
    }
    _write_json(cfg.output_dir / "train_report.json", report)
    for split, m in metrics.items():
        _echo(args, f"{split:5s}  mse={m['mse']:.6f}  mae={m['mae']:.6f}  n={m['n_samples']}\n")
    return EXIT_OK


def cmd_eval(cfg: ExperimentConfig, args) -> int:
    ev = cfg.raw.eval
    ckpt = Path(ev.checkpoint) if ev.checkpoint else cfg.output_dir / "checkpoint.ckpt"
    if not ckpt.is_absolute() and ev.checkpoint:
        ckpt = cfg.base_dir / ckpt
    if not ckpt.exists():
        raise ConfigError(f"eval.checkpoint: {ckpt} does not exist")
    model = load_checkpoint(ckpt)
    data = _prepare(cfg, model.config)
    samples = data.samples[ev.split]
    if not samples:
        raise ConfigError(f"eval.split: the {ev.split} segment holds no complete samples")
    chash = config_hash(model.config, cfg.train, {"split": list(cfg.split.fractions),
                                                  "boundaries": data.boundaries})
    report = evaluate(model, samples, split=ev.split, scaler=data.scaler,
                      raw_scale=cfg.raw.data.raw_scale, config_hash=chash, seed=cfg.seed)
    _write_json(cfg.output_dir / "eval_report.json", report.to_dict())

    try:
        sample = samples[ev.sample]
    except IndexError:
        raise ConfigError(f"eval.sample: index {ev.sample} out of range for {len(samples)} samples") from None
    pred = predict(model, sample.input[None])[0]
    dump = {
        "channels": list(data.series.channels),
        "origin": sample.origin,
        "split": ev.split,
        "scale": "raw",
        "history": data.scaler.invert(sample.input).tolist(),
        "truth": data.scaler.invert(sample.target).tolist(),
        "prediction": data.scaler.invert(pred).tolist(),
    }
    _write_json(cfg.output_dir / "forecast.json", dump)
    _echo(args, f"{ev.split}  mse={report.mse:.6f}  mae={report.mae:.6f}  n={report.n_samples}\n")
    return EXIT_OK


def cmd_ablate(cfg: ExperimentConfig, args) -> int:
    data = _prepare(cfg)
    reports = run_ablation(data, cfg.model, cfg.train, variants=cfg.raw.ablation.variants,
                           weightings=cfg.raw.ablation.weightings,
                           raw_scale=cfg.raw.data.raw_scale)
    write_reports(reports, cfg.output_dir / "ablation.jsonl")
    table = ablation_table(reports)
    (cfg.output_dir / "ablation.csv").write_text(table, encoding="utf-8")
    _echo(args, table)
    return EXIT_OK


def cmd_compare_overlap(cfg: ExperimentConfig, args) -> int:
    data = _prepare(cfg)
    rows = run_overlap_experiment(data, cfg.model, cfg.train, cfg.strides,
                                  raw_scale=cfg.raw.data.raw_scale)
    write_reports([r.report for r in rows], cfg.output_dir / "overlap.jsonl")
    table = overlap_table(rows)
    (cfg.output_dir / "overlap.csv").write_text(table, encoding="utf-8")
    _echo(args, table)
    return EXIT_OK


def cmd_plot(args) -> int:
    out = Path(args.out or ".")
    forecast = Path(args.forecast) if args.forecast else out / "forecast.json"
    if not forecast.exists():
        raise ConfigError(f"--forecast: {forecast} does not exist")
    dump = load_forecast(forecast)
    channels = [c for c in args.channels.split(",") if c] if args.channels else None
    try:
        paths = plot_forecast(dump, out, channels)
    except KeyError as e:
        raise ConfigError(e.args[0]) from None
    for p in paths:
        _echo(args, f"wrote {p}\n")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    base = checks.TOY_CONFIG
    if args.config:
        base = load_config(args.config).model
    seed = 7 if args.seed is None else args.seed
    worst = 0.0
    for (variant, weighting), err in checks.gradient_suite(seed, base).items():
        worst = max(worst, err)
        _echo(args, f"{variant:14s} {weighting:8s} max_rel_err={err:.3e}\n")
    ok = worst < args.tol
    _echo(args, f"{'PASS' if ok else 'FAIL'}: worst {worst:.3e} (tolerance {args.tol:g})\n")
    return EXIT_OK if ok else EXIT_RUNTIME


CONFIG_COMMANDS = {
    "synth-data": (cmd_synth_data, "Write the configured synthetic series to <out>/series.csv."),
    "train": (cmd_train, "Train a model; writes checkpoint.ckpt and train_report.json."),
    "eval": (cmd_eval, "Evaluate a checkpoint; writes eval_report.json and forecast.json."),
    "ablate": (cmd_ablate, "Run the variant x weighting ablation; writes ablation.jsonl/.csv."),
    "compare-overlap": (cmd_compare_overlap,
                        "Train under each patch stride; writes overlap.jsonl/.csv."),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ipatch", description="IPatch forecasting experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="YAML experiment config" + ("" if config_required else " (optional)"))
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--quiet", action="store_true", help="suppress console output")

    for name, (_, helptext) in CONFIG_COMMANDS.items():
        common(sub.add_parser(name, help=helptext, description=helptext))

    p = sub.add_parser("plot", help="Render forecast.json as one SVG per channel.",
                       description="Render forecast.json as one SVG per channel.")
    common(p, config_required=False)
    p.add_argument("--forecast", default=None, help="forecast dump (default <out>/forecast.json)")
    p.add_argument("--channels", default=None, help="comma separated channel names (default all)")

    p = sub.add_parser("grad-check", help="Finite-difference gradient suite at toy size.",
                       description="Finite-difference gradient suite at toy size.")
    common(p, config_required=False)
    p.add_argument("--tol", type=float, default=1e-4, help="max relative error (default 1e-4)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        if args.command in CONFIG_COMMANDS:
            cfg = load_config(args.config).with_overrides(args.seed, args.out)
            cfg.output_dir.mkdir(parents=True, exist_ok=True)
            return CONFIG_COMMANDS[args.command][0](cfg, args)
        if args.command == "plot":
            if args.config and not args.out:
                args.out = str(load_config(args.config).output_dir)
            return cmd_plot(args)
        return cmd_grad_check(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, FloatingPointError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
