"""Two-stage training: noise-prediction regression for the encoder+denoiser,
then score regression for the candidate scorer against frozen stage-1 weights.

All randomness (batch order, diffusion steps, noise draws, dropout masks) is
derived from (config seed, epoch index), so resuming from a checkpoint
reproduces the exact losses an uninterrupted run would have seen.
"""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path
from typing import Callable

import numpy as np

from . import engine as E
from .checkpoint import load_checkpoint, save_checkpoint, validate_manifest
from .config import RunConfig
from .data import DataError, Scene
from .diffusion import SamplerConfig, build_schedule, diffusion_loss, sample
from .geometry import relative_positions, to_invariant_future, to_invariant_history
from .networks import Denoiser, Encoder, Scorer
from .optim import ParameterStore, adamw_step
from .selection import gt_scores, scorer_loss

LogFn = Callable[[dict], None]


def _noop_log(record: dict) -> None:
    pass


def store_fingerprint(store: ParameterStore) -> str:
    """Order-independent SHA-256 over parameter names and values."""
    digest = hashlib.sha256()
    for name in sorted(store.values):
        digest.update(name.encode("utf-8"))
        digest.update(np.ascontiguousarray(store.values[name]).tobytes())
    return digest.hexdigest()


def _focal_selector(n: int) -> np.ndarray:
    sel = np.zeros((1, n))
    sel[0, 0] = 1.0
    return sel


class SceneTensors:
    """Invariant-frame arrays for one scene, precomputed once."""

    def __init__(self, scene: Scene):
        self.scene = scene
        self.histories = np.stack([to_invariant_history(t.past).displacements for t in scene.tracks])
        focal_hist = to_invariant_history(scene.focal.past)
        self.focal_history = focal_hist
        if scene.focal.future is None:
            self.y0 = None
        else:
            self.y0 = to_invariant_future(scene.focal.future, focal_hist)

    @property
    def n_agents(self) -> int:
        return self.histories.shape[0]


def _prepare(scenes: list[Scene], require_future: bool) -> list[SceneTensors]:
    if not scenes:
        raise DataError("empty scene list")
    prepared = [SceneTensors(s) for s in scenes]
    if require_future and any(p.y0 is None for p in prepared):
        missing = [p.scene.scene_id for p in prepared if p.y0 is None][:5]
        raise DataError(f"training needs futures for every focal agent; missing for {missing}")
    return prepared


def _batches_by_agent_count(prepared: list[SceneTensors], batch_size: int,
                            rng: np.random.Generator) -> list[list[int]]:
    """Shuffled batches whose scenes share an agent count (rectangular stacking)."""
    groups: dict[int, list[int]] = {}
    for i, p in enumerate(prepared):
        groups.setdefault(p.n_agents, []).append(i)
    batches = []
    for n in sorted(groups):
        idx = np.asarray(groups[n])
        rng.shuffle(idx)
        for start in range(0, len(idx), batch_size):
            batches.append([int(j) for j in idx[start:start + batch_size]])
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def _encode_focal(encoder: Encoder, histories: np.ndarray, rng) -> np.ndarray:
    """Context row for the focal agent (index 0) of each scene in the batch."""
    ctx = encoder(histories, rng=rng)  # (B, N, d_c)
    sel = _focal_selector(ctx.shape[1])
    return E.reshape(E.matmul(sel, ctx), (ctx.shape[0], ctx.shape[2]))


def train_denoiser(
    config: RunConfig,
    scenes: list[Scene],
    out_path: str | Path,
    resume_from: str | Path | None = None,
    log: LogFn = _noop_log,
) -> Path:
    """Stage 1: joint encoder+denoiser noise regression; writes a checkpoint."""
    prepared = _prepare(scenes, require_future=True)
    schedule = build_schedule(config.h_steps, config.beta_start, config.beta_end)
    arch = config.arch()

    start_epoch = 0
    if resume_from is not None:
        store, manifest = load_checkpoint(resume_from)
        validate_manifest(manifest, {"kind": "stage1", **arch.manifest()}, str(resume_from))
        start_epoch = int(manifest.get("epoch", 0))
    else:
        store = ParameterStore(seed=config.seed)
    encoder = Encoder(store, arch)
    denoiser = Denoiser(store, arch)

    for epoch in range(start_epoch, config.denoiser_epochs):
        rng = np.random.default_rng([config.seed, 1, epoch])
        losses = []
        t0 = time.perf_counter()
        for batch in _batches_by_agent_count(prepared, config.batch_size, rng):
            hist = np.stack([prepared[i].histories for i in batch])
            y0 = np.stack([prepared[i].y0 for i in batch])
            b = len(batch)
            eta = rng.integers(1, schedule.h + 1, size=b)
            eps = rng.standard_normal((b, config.t_f, 2))
            ab = schedule.alpha_bar[eta][:, None, None]
            y_eta = np.sqrt(ab) * y0 + np.sqrt(1.0 - ab) * eps

            with E.Tape() as tape:
                ctx = _encode_focal(encoder, hist, rng)
                eps_hat = denoiser(y_eta, eta, ctx, rng=rng)
                loss = diffusion_loss(eps, eps_hat)
            grads = tape.gradients(loss, store.values)
            adamw_step(store, grads, lr=config.lr, weight_decay=config.weight_decay)
            losses.append(float(loss))
        log({
            "stage": "denoiser",
            "epoch": epoch + 1,
            "loss": float(np.mean(losses)),
            "batches": len(losses),
            "seconds": round(time.perf_counter() - t0, 3),
        })

    manifest = {
        "kind": "stage1",
        **arch.manifest(),
        "h_steps": config.h_steps,
        "beta_start": config.beta_start,
        "beta_end": config.beta_end,
        "epoch": config.denoiser_epochs,
    }
    out_path = Path(out_path)
    save_checkpoint(out_path, store, manifest)
    return out_path


def load_stage1(path: str | Path, config: RunConfig) -> tuple[ParameterStore, dict]:
    store, manifest = load_checkpoint(path)
    validate_manifest(manifest, {"kind": "stage1", **config.arch().manifest()}, str(path))
    return store, manifest


def rank_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Spearman correlation between two score vectors."""
    from scipy.stats import spearmanr

    rho = spearmanr(a, b).statistic
    return float(0.0 if np.isnan(rho) else rho)


def prepare_scorer_batches(
    config: RunConfig,
    prepared: list[SceneTensors],
    encoder: Encoder,
    denoiser: Denoiser,
    schedule,
) -> list[dict]:
    """Frozen-model candidates and targets for every scene, sampled once.

    The per-scene sampler seed is fixed, so sampling once up front is
    byte-identical to resampling every epoch with the same seeds.
    """
    sampler = SamplerConfig(method="ddim", gamma=config.gamma, m=config.m_samples, seed=config.seed)

    def denoiser_fn(y, eta, c):
        return np.asarray(denoiser(y, eta, c))

    chunk = max(1, 1024 // config.m_samples)
    out = []
    for start in range(0, len(prepared), chunk):
        part = prepared[start:start + chunk]
        hist = [p.histories for p in part]
        same_n = len({h.shape[0] for h in hist}) == 1
        if same_n:
            ctx = np.asarray(_encode_focal(encoder, np.stack(hist), rng=None))
        else:
            ctx = np.stack([np.asarray(encoder(h))[0] for h in hist])
        rng = np.random.default_rng([config.seed, 2, start])
        result = sample(denoiser_fn, ctx, sampler, schedule, shape=(config.t_f, 2), rng=rng)
        for j, p in enumerate(part):
            disp = result.samples[j]                      # (M, T_f, 2)
            rel = relative_positions(disp)                # scorer frame
            world = p.focal_history.anchor + np.cumsum(
                disp @ p.focal_history.rotation.T, axis=-2)
            psi = gt_scores(p.scene.focal.future, world, lam=config.lambda_fde)
            out.append({"context": ctx[j], "candidates": rel, "psi": psi})
    return out


def train_scorer(
    config: RunConfig,
    scenes: list[Scene],
    stage1_path: str | Path,
    out_path: str | Path,
    log: LogFn = _noop_log,
) -> Path:
    """Stage 2: train the scorer against frozen stage-1 weights.

    The frozen store is fingerprinted before and after; a mismatch aborts.
    """
    prepared = _prepare(scenes, require_future=True)
    stage1, _ = load_stage1(stage1_path, config)
    arch = config.arch()
    encoder = Encoder(stage1, arch)
    denoiser = Denoiser(stage1, arch)
    schedule = build_schedule(config.h_steps, config.beta_start, config.beta_end)

    frozen_before = store_fingerprint(stage1)
    batches_src = prepare_scorer_batches(config, prepared, encoder, denoiser, schedule)

    scorer_store = ParameterStore(seed=config.seed + 1)
    scorer = Scorer(scorer_store, arch)

    def mean_rank_corr() -> float:
        corrs = []
        for item in batches_src:
            raw = np.asarray(scorer(item["candidates"], item["context"]))
            corrs.append(rank_correlation(-item["psi"], raw))
        return float(np.mean(corrs))

    corr_before = mean_rank_corr()
    for epoch in range(config.scorer_epochs):
        rng = np.random.default_rng([config.seed, 3, epoch])
        order = rng.permutation(len(batches_src))
        losses = []
        t0 = time.perf_counter()
        group = max(1, 512 // config.m_samples)
        for start in range(0, len(order), group):
            idx = order[start:start + group]
            cands = np.stack([batches_src[i]["candidates"] for i in idx])
            ctx = np.stack([batches_src[i]["context"] for i in idx])
            psi = np.stack([batches_src[i]["psi"] for i in idx])
            with E.Tape() as tape:
                raw = scorer(cands, ctx, rng=rng)
                loss = scorer_loss(raw, psi, temperature=config.score_temperature)
            grads = tape.gradients(loss, scorer_store.values)
            adamw_step(scorer_store, grads, lr=config.lr, weight_decay=config.weight_decay)
            losses.append(float(loss))
        log({
            "stage": "scorer",
            "epoch": epoch + 1,
            "loss": float(np.mean(losses)),
            "batches": len(losses),
            "seconds": round(time.perf_counter() - t0, 3),
        })
    corr_after = mean_rank_corr()

    frozen_after = store_fingerprint(stage1)
    if frozen_before != frozen_after:
        raise E.EngineError("frozen stage-1 weights changed during scorer training")
    log({
        "stage": "scorer",
        "frozen_hash": frozen_before,
        "frozen_unchanged": True,
        "rank_corr_before": corr_before,
        "rank_corr_after": corr_after,
    })

    manifest = {
        "kind": "scorer",
        **arch.manifest(),
        "h_steps": config.h_steps,
        "beta_start": config.beta_start,
        "beta_end": config.beta_end,
        "epoch": config.scorer_epochs,
        "stage1_fingerprint": frozen_before,
    }
    out_path = Path(out_path)
    save_checkpoint(out_path, scorer_store, manifest)
    return out_path


def load_scorer(path: str | Path, config: RunConfig) -> tuple[ParameterStore, dict]:
    store, manifest = load_checkpoint(path)
    validate_manifest(manifest, {"kind": "scorer", **config.arch().manifest()}, str(path))
    return store, manifest


def jsonl_logger(path: str | Path, echo: bool = True) -> LogFn:
    """Structured log records to a file, with a human-readable echo line."""
    fh = open(path, "a", encoding="utf-8")

    def log(record: dict) -> None:
        fh.write(json.dumps(record) + "\n")
        fh.flush()
        if echo:
            parts = [f"{k}={v}" for k, v in record.items()]
            print("[train] " + " ".join(parts))

    return log
