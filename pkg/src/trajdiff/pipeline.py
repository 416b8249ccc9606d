"""End-to-end inference: encode, oversample, score, select, and the
latency/accuracy benchmark grid.

Per-scene wall-clock is split into encode / sample / score+select stages;
the benchmark's latency figure covers sampler plus scorer only (no I/O, no
encoding), warmups excluded, median over repeats.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .data import DataError, Scene
from .diffusion import NoiseSchedule, SamplerConfig, build_schedule, sample
from .engine import NumericError
from .geometry import relative_positions, to_invariant_history
from .metrics import EvalReport, evaluate_set
from .networks import Denoiser, Encoder, Scorer
from .optim import ParameterStore
from .selection import (
    PredictionSet,
    SelectionConfig,
    greedy_coverage_select,
    nms_select,
    random_select,
)
from .training import load_scorer, load_stage1


class TrajectoryPredictor:
    """Bundles the trained networks with the schedule and selection logic."""

    def __init__(self, config: RunConfig, stage1: ParameterStore,
                 scorer_store: ParameterStore | None = None):
        self.config = config
        arch = config.arch()
        self.arch = arch
        self.encoder = Encoder(stage1, arch)
        self.denoiser = Denoiser(stage1, arch)
        self.scorer = Scorer(scorer_store, arch) if scorer_store is not None else None
        self.schedule: NoiseSchedule = build_schedule(config.h_steps, config.beta_start, config.beta_end)
        if config.select != "random" and self.scorer is None:
            raise ConfigError(f"select={config.select!r} needs a scorer checkpoint (only 'random' runs without)")

    @classmethod
    def from_checkpoints(cls, config: RunConfig, stage1_path: str | Path,
                         scorer_path: str | Path | None = None) -> "TrajectoryPredictor":
        stage1, _ = load_stage1(stage1_path, config)
        scorer_store = None
        if scorer_path is not None:
            scorer_store, _ = load_scorer(scorer_path, config)
        return cls(config, stage1, scorer_store)

    def _denoiser_fn(self):
        denoiser = self.denoiser

        def fn(y, eta, c):
            return np.asarray(denoiser(y, eta, c))

        return fn

    def encode_scene(self, scene: Scene) -> tuple[np.ndarray, "object"]:
        histories = np.stack([to_invariant_history(t.past).displacements for t in scene.tracks])
        ctx = np.asarray(self.encoder(histories))
        return ctx[0], to_invariant_history(scene.focal.past)

    def predict_scene(self, scene: Scene, scene_index: int = 0,
                      sampler: SamplerConfig | None = None,
                      selection: SelectionConfig | None = None,
                      select: str | None = None) -> tuple[PredictionSet, dict]:
        """Full two-stage inference for one scene.

        Returns the K selected world-frame trajectories plus per-stage
        wall-clock seconds ("encode", "sample", "score_select") and sampler
        accounting.
        """
        cfg = self.config
        sampler = sampler or SamplerConfig(method=cfg.method, gamma=cfg.gamma,
                                           m=cfg.m_samples, seed=cfg.seed)
        selection = selection or SelectionConfig(k=cfg.k_select, omega=cfg.omega,
                                                 radius=cfg.coverage_radius,
                                                 distance=cfg.nms_distance)
        select = select or cfg.select
        sampler.validate(self.schedule.h, selection.k)

        t0 = time.perf_counter()
        focal_ctx, hist = self.encode_scene(scene)
        t_encode = time.perf_counter() - t0

        rng = np.random.default_rng([sampler.seed, scene_index])
        t0 = time.perf_counter()
        result = sample(self._denoiser_fn(), focal_ctx, sampler, self.schedule,
                        shape=(cfg.t_f, 2), rng=rng)
        t_sample = time.perf_counter() - t0
        disp = result.samples
        if disp.shape[0] < selection.k:
            raise NumericError(
                f"scene {scene.scene_id}: only {disp.shape[0]} finite candidates "
                f"(of {sampler.m}) but k={selection.k}"
            )

        t0 = time.perf_counter()
        world = hist.anchor + np.cumsum(disp @ hist.rotation.T, axis=-2)
        if select == "random":
            pred = random_select(world, selection.k, seed=rng)
        elif select == "coverage":
            pred = greedy_coverage_select(world, selection)
        else:
            raw = np.asarray(self.scorer(relative_positions(disp), focal_ctx))
            pred = nms_select(world, raw, selection)
        t_select = time.perf_counter() - t0

        timings = {
            "encode_s": t_encode,
            "sample_s": t_sample,
            "score_select_s": t_select,
            "denoiser_calls": result.denoiser_calls,
            "failed_samples": result.failed,
        }
        return pred, timings


def predict_scenes(predictor: TrajectoryPredictor, scenes: list[Scene],
                   threads: int = 1, select: str | None = None,
                   sampler: SamplerConfig | None = None,
                   selection: SelectionConfig | None = None) -> list[dict]:
    """Per-scene prediction records (trajectories, scores, stage latencies)."""

    def run(item):
        i, scene = item
        pred, timings = predictor.predict_scene(scene, scene_index=i, sampler=sampler,
                                                selection=selection, select=select)
        return {
            "scene_id": scene.scene_id,
            "method": pred.method,
            "trajectories": pred.trajectories.tolist(),
            "scores": None if pred.scores is None else pred.scores.tolist(),
            "indices": pred.indices.tolist(),
            "fill_count": pred.fill_count,
            "latency_ms": {
                "encode": timings["encode_s"] * 1e3,
                "sample": timings["sample_s"] * 1e3,
                "score_select": timings["score_select_s"] * 1e3,
            },
            "denoiser_calls": timings["denoiser_calls"],
            "failed_samples": timings["failed_samples"],
        }

    items = list(enumerate(scenes))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, items))
    return [run(item) for item in items]


def evaluate_predictions(scenes: list[Scene], prediction_records: list[dict],
                         k_values: tuple[int, ...], miss_threshold: float) -> EvalReport:
    """Match predictions to ground truth by scene id and score them."""
    by_id = {s.scene_id: s for s in scenes}
    missing = [r["scene_id"] for r in prediction_records if r["scene_id"] not in by_id]
    if missing:
        raise DataError(f"predictions reference unknown scene ids: {missing[:10]}")
    report = EvalReport(k_values=tuple(k_values), miss_threshold=miss_threshold)
    for record in prediction_records:
        scene = by_id[record["scene_id"]]
        if scene.focal.future is None:
            raise DataError(f"scene {scene.scene_id} has no ground-truth future")
        row = evaluate_set(scene.focal.future, np.asarray(record["trajectories"]),
                           k_values=tuple(k_values), miss_threshold=miss_threshold)
        lat = record.get("latency_ms")
        total = None if lat is None else sum(lat.values())
        report.add_scene(scene.scene_id, row, latency_ms=total)
    return report


@dataclass
class BenchCell:
    steps: int
    method: str
    m: int
    latency_ms: float            # median over repeats of the per-scene mean
    repeat_latencies_ms: list[float]
    metrics: dict[str, float]
    denoiser_calls: int


def bench_grid(predictor: TrajectoryPredictor, scenes: list[Scene],
               steps_grid: list[int], m_grid: list[int],
               repeats: int = 5, warmups: int = 2) -> list[BenchCell]:
    """Latency/accuracy cells mirroring the two-panel steps-vs-M layout.

    Panel one walks ``steps_grid`` at ``m_grid[0]`` samples; panel two holds
    the smallest step count and walks the rest of ``m_grid``.  A step count
    equal to H runs the stochastic sampler; anything smaller runs the
    deterministic skipper with gamma = H / steps (H must divide evenly).
    Timing covers sampler + scorer + selection per scene; metrics come from
    the (deterministic) final repeat.
    """
    if not steps_grid or not m_grid:
        raise ConfigError("steps and M grids must be non-empty")
    cfg = predictor.config
    h = predictor.schedule.h
    cells_spec: list[tuple[int, int]] = [(s, m_grid[0]) for s in steps_grid]
    smallest = min(steps_grid)
    cells_spec += [(smallest, m) for m in m_grid[1:]]

    cells = []
    for steps, m in cells_spec:
        if steps == h:
            sampler = SamplerConfig(method="ddpm", gamma=1, m=m, seed=cfg.seed)
        else:
            if h % steps != 0:
                raise ConfigError(f"steps={steps} does not divide h={h} for the skip sampler")
            sampler = SamplerConfig(method="ddim", gamma=h // steps, m=m, seed=cfg.seed)
        if m < cfg.k_select:
            raise ConfigError(f"bench cell m={m} below k={cfg.k_select}")

        repeat_lat = []
        records = None
        for rep in range(warmups + repeats):
            per_scene = []
            recs = []
            for i, scene in enumerate(scenes):
                pred, timings = predictor.predict_scene(scene, scene_index=i, sampler=sampler)
                per_scene.append((timings["sample_s"] + timings["score_select_s"]) * 1e3)
                recs.append({
                    "scene_id": scene.scene_id,
                    "trajectories": pred.trajectories.tolist(),
                })
            if rep >= warmups:
                repeat_lat.append(float(np.mean(per_scene)))
                records = recs
        report = evaluate_predictions(scenes, records, k_values=(cfg.k_select,),
                                      miss_threshold=cfg.miss_threshold)
        agg = report.aggregate()
        cells.append(BenchCell(
            steps=steps,
            method=sampler.method,
            m=m,
            latency_ms=float(np.median(repeat_lat)),
            repeat_latencies_ms=repeat_lat,
            metrics={k: v for k, v in agg.items() if not k.startswith("latency")},
            denoiser_calls=h if sampler.method == "ddpm" else h // sampler.gamma,
        ))
    return cells
