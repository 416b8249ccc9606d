"""Standard displacement-error metrics over prediction sets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_MISS_THRESHOLD = 2.0
DEFAULT_K_VALUES = (1, 5, 10, 20)


class MetricsError(ValueError):
    pass


def _check_pair(truth: np.ndarray, pred: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if truth.shape != pred.shape[-truth.ndim:] or truth.shape[-1] != 2:
        raise MetricsError(f"trajectory shapes differ: truth {truth.shape} vs prediction {pred.shape}")
    return truth, pred


def ade(truth, pred) -> float:
    """Mean Euclidean distance over time steps, meters."""
    truth, pred = _check_pair(truth, pred)
    return float(np.linalg.norm(pred - truth, axis=-1).mean())


def fde(truth, pred) -> float:
    """Euclidean distance at the final step, meters."""
    truth, pred = _check_pair(truth, pred)
    return float(np.linalg.norm(pred[..., -1, :] - truth[-1, :], axis=-1))


def ade_many(truth: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """ADE of each candidate (M, T, 2) against one truth (T, 2)."""
    truth, candidates = _check_pair(truth, candidates)
    return np.linalg.norm(candidates - truth[None], axis=-1).mean(axis=-1)


def fde_many(truth: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    truth, candidates = _check_pair(truth, candidates)
    return np.linalg.norm(candidates[:, -1, :] - truth[-1][None], axis=-1)


def evaluate_set(
    truth: np.ndarray,
    predictions: np.ndarray,
    k_values: tuple[int, ...] = DEFAULT_K_VALUES,
    miss_threshold: float = DEFAULT_MISS_THRESHOLD,
) -> dict[str, float]:
    """Per-scene min-over-top-K metrics for every requested K.

    ``predictions`` must already be in selection order; top-K means the
    first K rows.  Returns keys ``minade_K``/``minfde_K``/``mr_K``.
    """
    truth = np.asarray(truth, dtype=np.float64)
    predictions = np.asarray(predictions, dtype=np.float64)
    k_values = tuple(k_values)
    if predictions.ndim != 3 or predictions.shape[0] < max(k_values):
        raise MetricsError(
            f"need at least {max(k_values)} predictions in selection order, got shape {predictions.shape}"
        )
    ades = ade_many(truth, predictions)
    fdes = fde_many(truth, predictions)
    row: dict[str, float] = {}
    for k in k_values:
        row[f"minade_{k}"] = float(ades[:k].min())
        row[f"minfde_{k}"] = float(fdes[:k].min())
        row[f"mr_{k}"] = float(fdes[:k].min() > miss_threshold)
    return row


@dataclass
class EvalReport:
    """Per-scene metric rows plus aggregate means and latency statistics."""

    k_values: tuple[int, ...]
    miss_threshold: float
    rows: list[dict] = field(default_factory=list)
    latencies_ms: list[float] = field(default_factory=list)

    def add_scene(self, scene_id: str, metrics_row: dict[str, float],
                  latency_ms: float | None = None) -> None:
        self.rows.append({"scene_id": scene_id, **metrics_row})
        if latency_ms is not None:
            self.latencies_ms.append(float(latency_ms))

    @property
    def n_scenes(self) -> int:
        return len(self.rows)

    def aggregate(self) -> dict[str, float]:
        if not self.rows:
            return {}
        out: dict[str, float] = {"n_scenes": float(len(self.rows))}
        keys = [k for k in self.rows[0] if k != "scene_id"]
        for key in keys:
            out[key] = float(np.mean([row[key] for row in self.rows]))
        if self.latencies_ms:
            lat = np.asarray(self.latencies_ms)
            out["latency_ms_mean"] = float(lat.mean())
            out["latency_ms_p50"] = float(np.percentile(lat, 50))
            out["latency_ms_p95"] = float(np.percentile(lat, 95))
        return out
