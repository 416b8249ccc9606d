"""Ground-truth score targets, the scorer objective, and candidate selection.

Three ways to cut M oversampled candidates down to K: score-sorted greedy
suppression of near-duplicates, greedy coverage maximization, and a seeded
uniform subset.  All are deterministic given their inputs (plus seed for the
random baseline).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import cross_entropy_soft
from .metrics import ade_many, fde_many

DEFAULT_LAMBDA = 1.5
DEFAULT_OMEGA = 8.0
DEFAULT_COVERAGE_RADIUS = 2.0


class SelectionError(ValueError):
    pass


@dataclass
class SelectionConfig:
    k: int = 20
    omega: float = DEFAULT_OMEGA          # suppression distance, meters
    radius: float = DEFAULT_COVERAGE_RADIUS  # coverage ball radius, meters
    distance: str = "endpoint"            # "endpoint" | "ade" pairwise distance

    def validate(self) -> None:
        if self.k < 1:
            raise SelectionError(f"need k >= 1, got {self.k}")
        if self.omega <= 0 or self.radius <= 0:
            raise SelectionError(f"omega and radius must be positive, got {self.omega}, {self.radius}")
        if self.distance not in ("endpoint", "ade"):
            raise SelectionError(f"unknown distance {self.distance!r}")


@dataclass
class PredictionSet:
    """Final K trajectories in selection order (score order for NMS)."""

    trajectories: np.ndarray           # (K, T_f, 2) world positions
    indices: np.ndarray                # (K,) into the candidate set
    scores: np.ndarray | None = None   # softmax-normalized, same order
    fill_count: int = 0
    fill_mask: np.ndarray | None = None  # True where the slot was exhaustion fill
    method: str = "nms"


def gt_scores(truth: np.ndarray, candidates: np.ndarray, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """Per-candidate closeness to the ground truth: ADE + lam * FDE."""
    truth = np.asarray(truth, dtype=np.float64)
    candidates = np.asarray(candidates, dtype=np.float64)
    if candidates.ndim != 3 or candidates.shape[1:] != truth.shape:
        raise SelectionError(f"candidates {candidates.shape} do not match truth {truth.shape}")
    return ade_many(truth, candidates) + lam * fde_many(truth, candidates)


def score_targets(psi: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Target distribution over candidates: softmax(-psi / T), lower error first."""
    psi = np.asarray(psi, dtype=np.float64)
    logits = -psi / temperature
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def scorer_loss(raw_scores, psi: np.ndarray, temperature: float = 1.0):
    """Cross-entropy between softmax(raw scores) and the psi-derived targets.

    Differentiable through ``raw_scores``; the targets are data.
    """
    return cross_entropy_soft(raw_scores, score_targets(psi, temperature))


def pairwise_distances(candidates: np.ndarray, distance: str) -> np.ndarray:
    """(M, M) trajectory distances: endpoint Euclidean or full-trajectory ADE."""
    candidates = np.asarray(candidates, dtype=np.float64)
    if distance == "endpoint":
        pts = candidates[:, -1, :]
        diff = pts[:, None, :] - pts[None, :, :]
        return np.linalg.norm(diff, axis=-1)
    if distance == "ade":
        diff = candidates[:, None] - candidates[None, :]
        return np.linalg.norm(diff, axis=-1).mean(axis=-1)
    raise SelectionError(f"unknown distance {distance!r}")


def nms_select(candidates: np.ndarray, raw_scores: np.ndarray, config: SelectionConfig) -> PredictionSet:
    """Score-sorted greedy selection suppressing near-duplicates within omega.

    If suppression exhausts the pool before K are accepted, the remaining
    slots are filled with the highest-scoring suppressed candidates; the
    output is ordered by descending score either way.
    """
    config.validate()
    candidates = np.asarray(candidates, dtype=np.float64)
    raw_scores = np.asarray(raw_scores, dtype=np.float64).reshape(-1)
    m = candidates.shape[0]
    if raw_scores.shape[0] != m:
        raise SelectionError(f"{m} candidates but {raw_scores.shape[0]} scores")
    if m < config.k:
        raise SelectionError(f"cannot select k={config.k} from m={m} candidates")

    dist = pairwise_distances(candidates, config.distance)
    order = np.argsort(-raw_scores, kind="stable")
    accepted: list[int] = []
    suppressed: list[int] = []
    for idx in order:
        if all(dist[idx, j] > config.omega for j in accepted):
            accepted.append(int(idx))
        else:
            suppressed.append(int(idx))
    chosen = accepted[: config.k]
    fill_count = config.k - len(chosen)
    fills = set(suppressed[:fill_count]) if fill_count > 0 else set()
    chosen = chosen + sorted(fills)
    final = np.asarray(sorted(chosen, key=lambda i: (-raw_scores[i], i)), dtype=np.int64)

    shifted = raw_scores - raw_scores.max()
    probs = np.exp(shifted) / np.exp(shifted).sum()
    return PredictionSet(
        trajectories=candidates[final],
        indices=final,
        scores=probs[final],
        fill_count=fill_count,
        fill_mask=np.asarray([int(i) in fills for i in final], dtype=bool),
        method="nms",
    )


def greedy_coverage_select(candidates: np.ndarray, config: SelectionConfig) -> PredictionSet:
    """Greedy maximization of how many candidates lie within ``radius`` of the set.

    Pairwise distance is full-trajectory ADE.  Each round adds the candidate
    that maximizes total coverage of the M candidates; ties break toward the
    lower candidate index.
    """
    config.validate()
    candidates = np.asarray(candidates, dtype=np.float64)
    m = candidates.shape[0]
    if m < config.k:
        raise SelectionError(f"cannot select k={config.k} from m={m} candidates")

    within = pairwise_distances(candidates, "ade") < config.radius  # (M, M)
    covered = np.zeros(m, dtype=bool)
    selected: list[int] = []
    for _ in range(config.k):
        best_idx, best_gain = -1, -1
        for c in range(m):
            if c in selected:
                continue
            gain = int((covered | within[c]).sum())
            if gain > best_gain:
                best_idx, best_gain = c, gain
        selected.append(best_idx)
        covered |= within[best_idx]
    indices = np.asarray(selected, dtype=np.int64)
    return PredictionSet(trajectories=candidates[indices], indices=indices, method="coverage")


def coverage_objective(candidates: np.ndarray, indices, radius: float) -> int:
    """Number of candidates within ``radius`` (ADE) of the chosen subset."""
    within = pairwise_distances(np.asarray(candidates, dtype=np.float64), "ade") < radius
    mask = np.zeros(candidates.shape[0], dtype=bool)
    for i in indices:
        mask |= within[int(i)]
    return int(mask.sum())


def random_select(candidates: np.ndarray, k: int, seed: int | np.random.Generator = 0) -> PredictionSet:
    """Seeded uniform K-subset without replacement."""
    candidates = np.asarray(candidates, dtype=np.float64)
    m = candidates.shape[0]
    if m < k:
        raise SelectionError(f"cannot select k={k} from m={m} candidates")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    indices = np.sort(rng.choice(m, size=k, replace=False)).astype(np.int64)
    return PredictionSet(trajectories=candidates[indices], indices=indices, method="random")
