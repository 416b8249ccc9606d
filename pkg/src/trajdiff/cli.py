"""Command-line entry point: dataset generation, two-stage training,
prediction, evaluation, and the latency/accuracy benchmark grid.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig, load_config
from .data import (
    DataError,
    SyntheticSpec,
    generate_synthetic,
    load_ethucy,
    load_scenes,
    save_scenes,
)
from .diffusion import SamplerConfig, ScheduleError
from .engine import EngineError, NumericError, ShapeError
from .geometry import GeometryError
from .metrics import MetricsError
from .selection import SelectionConfig, SelectionError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_CONFIG_ERRORS = (ConfigError, CheckpointError, ScheduleError, SelectionError, ShapeError)
_DATA_ERRORS = (DataError, MetricsError, GeometryError, FileNotFoundError)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="JSON config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--t-p", dest="t_p", type=int, default=None)
    p.add_argument("--t-f", dest="t_f", type=int, default=None)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--h-steps", dest="h_steps", type=int, default=None)
    p.add_argument("--gamma", type=int, default=None, help="step skip for the fast sampler")
    p.add_argument("--method", choices=("ddim", "ddpm"), default=None)
    p.add_argument("--m", dest="m_samples", type=int, default=None, help="oversample count M")
    p.add_argument("--k", dest="k_select", type=int, default=None, help="selection size K")
    p.add_argument("--select", choices=("nms", "coverage", "random"), default=None)
    p.add_argument("--omega", type=float, default=None, help="NMS suppression distance (m)")
    p.add_argument("--radius-r", dest="coverage_radius", type=float, default=None,
                   help="coverage selection radius (m)")
    p.add_argument("--nms-distance", dest="nms_distance", choices=("endpoint", "ade"), default=None)
    p.add_argument("--lambda-fde", dest="lambda_fde", type=float, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--denoiser-epochs", dest="denoiser_epochs", type=int, default=None)
    p.add_argument("--scorer-epochs", dest="scorer_epochs", type=int, default=None)
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--d-c", dest="d_c", type=int, default=None)
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--head-dim", dest="head_dim", type=int, default=None)
    p.add_argument("--denoiser-layers", dest="denoiser_layers", type=int, default=None)
    p.add_argument("--encoder-layers", dest="encoder_layers", type=int, default=None)
    p.add_argument("--ffn-width", dest="ffn_width", type=int, default=None)
    p.add_argument("--scorer-dim", dest="scorer_dim", type=int, default=None)
    p.add_argument("--k-values", dest="k_values", type=str, default=None,
                   help="comma list of K values to evaluate, e.g. 1,5,10,20")
    p.add_argument("--miss-threshold", dest="miss_threshold", type=float, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--column-order", dest="column_order", choices=("xy", "yx"), default=None)
    p.add_argument("--bench-repeats", dest="bench_repeats", type=int, default=None)
    p.add_argument("--bench-warmups", dest="bench_warmups", type=int, default=None)


_CONFIG_KEYS = [
    "seed", "t_p", "t_f", "dt", "h_steps", "gamma", "method", "m_samples", "k_select",
    "select", "omega", "coverage_radius", "nms_distance", "lambda_fde", "lr", "batch_size",
    "denoiser_epochs", "scorer_epochs", "dropout", "width", "d_c", "heads", "head_dim",
    "denoiser_layers", "encoder_layers", "ffn_width", "scorer_dim", "k_values",
    "miss_threshold", "threads", "stride", "column_order", "bench_repeats", "bench_warmups",
]


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {key: getattr(args, key, None) for key in _CONFIG_KEYS}
    return load_config(args.config, overrides)


def _load_dataset(path: Path, config: RunConfig) -> list:
    if path.suffix in (".jsonl", ".scenes"):
        return load_scenes(path)
    return load_ethucy(path, t_p=config.t_p, t_f=config.t_f, stride=config.stride,
                       dt=config.dt, column_order=config.column_order)


def _prepare_out_dir(out: Path, config: RunConfig) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.json")
    return out


def cmd_synth_data(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    weights = {}
    for part in args.modes.split(","):
        name, _, w = part.partition("=")
        weights[name.strip()] = float(w)
    spec = SyntheticSpec(
        n_scenes=args.n_scenes,
        n_agents=args.agents,
        mode_weights=weights,
        speed_range=(args.speed_min, args.speed_max),
        noise_sigma=args.sigma,
        seed=config.seed if args.data_seed is None else args.data_seed,
        t_p=config.t_p,
        t_f=config.t_f,
        dt=config.dt,
        turn_angle=float(args.turn_deg) * 3.141592653589793 / 180.0,
    )
    scenes = generate_synthetic(spec)
    save_scenes(args.out, scenes)
    print(f"wrote {len(scenes)} scenes to {args.out}")
    return EXIT_OK


def cmd_train_denoiser(args: argparse.Namespace) -> int:
    from .training import jsonl_logger, train_denoiser

    config = _config_from_args(args)
    scenes = _load_dataset(args.data, config)
    out = _prepare_out_dir(args.out, config)
    log = jsonl_logger(out / "train_denoiser_log.jsonl")
    ckpt = train_denoiser(config, scenes, out / "stage1.ckpt", resume_from=args.resume, log=log)
    print(f"stage-1 checkpoint: {ckpt}")
    return EXIT_OK


def cmd_train_scorer(args: argparse.Namespace) -> int:
    from .training import jsonl_logger, train_scorer

    config = _config_from_args(args)
    scenes = _load_dataset(args.data, config)
    out = _prepare_out_dir(args.out, config)
    log = jsonl_logger(out / "train_scorer_log.jsonl")
    ckpt = train_scorer(config, scenes, args.stage1, out / "scorer.ckpt", log=log)
    print(f"scorer checkpoint: {ckpt}")
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    from .pipeline import TrajectoryPredictor, predict_scenes
    from .report import write_jsonl

    config = _config_from_args(args)
    scenes = _load_dataset(args.data, config)
    predictor = TrajectoryPredictor.from_checkpoints(config, args.stage1, args.scorer)
    records = predict_scenes(predictor, scenes, threads=config.threads)
    out = _prepare_out_dir(args.out, config)
    write_jsonl(out / "predictions.jsonl", records)
    lat = [sum(r["latency_ms"].values()) for r in records]
    fills = sum(r["fill_count"] for r in records)
    print(f"predicted {len(records)} scenes -> {out / 'predictions.jsonl'}")
    if lat:
        import numpy as np

        print(f"latency per scene: mean {np.mean(lat):.1f} ms, p50 {np.percentile(lat, 50):.1f} ms")
    if fills:
        print(f"NMS exhausted the pool in some scenes: {fills} slots filled from suppressed candidates")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    from .pipeline import evaluate_predictions
    from .report import eval_table, read_jsonl, save_eval_report

    config = _config_from_args(args)
    scenes = _load_dataset(args.data, config)
    labels = args.labels.split(",") if args.labels else [Path(p).parent.name or f"run{i}"
                                                         for i, p in enumerate(args.predictions)]
    if len(labels) != len(args.predictions):
        raise ConfigError(f"{len(args.predictions)} prediction files but {len(labels)} labels")
    labeled = []
    for label, path in zip(labels, args.predictions):
        records = read_jsonl(path)
        report = evaluate_predictions(scenes, records, config.k_values, config.miss_threshold)
        labeled.append((label, report))
    paths = save_eval_report(args.out, labeled)
    print(eval_table(labeled))
    print(f"report files: {paths['table']}, {paths['records']}, {paths['figure']}")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    from .pipeline import TrajectoryPredictor, bench_grid
    from .report import bench_tables, save_bench_report

    config = _config_from_args(args)
    scenes = _load_dataset(args.data, config)
    if args.limit_scenes:
        scenes = scenes[: args.limit_scenes]
    predictor = TrajectoryPredictor.from_checkpoints(config, args.stage1, args.scorer)
    steps_grid = [int(s) for s in args.steps.split(",")]
    m_grid = [int(m) for m in args.m_grid.split(",")]
    cells = bench_grid(predictor, scenes, steps_grid, m_grid,
                       repeats=config.bench_repeats, warmups=config.bench_warmups)
    paths = save_bench_report(args.out, cells, config.k_select)
    print(bench_tables(cells, config.k_select))
    print(f"bench files: {paths['table']}, {paths['records']}, {paths['figure']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trajdiff",
        description="Conditional-diffusion trajectory prediction with fast sampling, "
                    "candidate scoring, and suppression-based selection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic scene file")
    _add_config_flags(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n-scenes", type=int, default=100)
    p.add_argument("--agents", type=int, default=1)
    p.add_argument("--modes", type=str, default="straight=1.0",
                   help="mode=weight list, e.g. left=0.5,right=0.5")
    p.add_argument("--speed-min", type=float, default=1.0)
    p.add_argument("--speed-max", type=float, default=1.6)
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--turn-deg", type=float, default=90.0)
    p.add_argument("--data-seed", type=int, default=None,
                   help="generator seed (defaults to the config seed)")
    p.set_defaults(fn=cmd_synth_data)

    p = sub.add_parser("train-denoiser", help="stage 1: train encoder + denoiser")
    _add_config_flags(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--resume", type=Path, default=None)
    p.set_defaults(fn=cmd_train_denoiser)

    p = sub.add_parser("train-scorer", help="stage 2: train scorer on frozen stage 1")
    _add_config_flags(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--stage1", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(fn=cmd_train_scorer)

    p = sub.add_parser("predict", help="sample, score, and select trajectories")
    _add_config_flags(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--stage1", type=Path, required=True)
    p.add_argument("--scorer", type=Path, default=None)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("evaluate", help="score prediction files against ground truth")
    _add_config_flags(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--predictions", type=Path, nargs="+", required=True)
    p.add_argument("--labels", type=str, default=None, help="comma list matching --predictions")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("bench", help="latency/accuracy grid over steps and M")
    _add_config_flags(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--stage1", type=Path, required=True)
    p.add_argument("--scorer", type=Path, default=None)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--steps", type=str, default="200,100,50,20,10")
    p.add_argument("--m-grid", type=str, default="20,50,100")
    p.add_argument("--limit-scenes", type=int, default=None)
    p.set_defaults(fn=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except _CONFIG_ERRORS as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except _DATA_ERRORS as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except EngineError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
