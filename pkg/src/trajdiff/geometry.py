"""Translation- and rotation-invariant trajectory representation.

World-frame tracks are converted to per-agent displacement sequences rotated
by the agent's heading at the current timestamp, and back.  The inverse is
exact: decode(encode(track)) reproduces the raw future to float64 precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HEADING_DEGENERACY_NORM = 1e-6


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class InvariantHistory:
    """Agent-frame history: heading, rotation, displacements, world anchor."""

    heading: float
    rotation: np.ndarray        # (2, 2), world <- agent frame
    displacements: np.ndarray   # (T_p, 2), first row exactly zero
    anchor: np.ndarray          # (2,), last observed world position


def rotation_matrix(heading: float) -> np.ndarray:
    c, s = np.cos(heading), np.sin(heading)
    return np.array([[c, -s], [s, c]], dtype=np.float64)


def compute_heading(past: np.ndarray) -> float:
    """Heading angle from the most recent non-degenerate displacement.

    Falls back step by step for stationary endpoints; a fully stationary
    track gets heading 0.
    """
    past = np.asarray(past, dtype=np.float64)
    if past.ndim != 2 or past.shape[0] < 2 or past.shape[1] != 2:
        raise GeometryError(f"past must be (T_p>=2, 2), got {past.shape}")
    diffs = np.diff(past, axis=0)
    for k in range(diffs.shape[0] - 1, -1, -1):
        dx, dy = diffs[k]
        if np.hypot(dx, dy) >= HEADING_DEGENERACY_NORM:
            return float(np.arctan2(dy, dx))
    return 0.0


def to_invariant_history(past: np.ndarray) -> InvariantHistory:
    """Encode a world-frame past into heading-aligned displacements."""
    past = np.asarray(past, dtype=np.float64)
    heading = compute_heading(past)
    rot = rotation_matrix(heading)
    disp = np.zeros_like(past)
    disp[1:] = np.diff(past, axis=0) @ rot  # row-vector form of R^T d
    return InvariantHistory(heading=heading, rotation=rot, displacements=disp, anchor=past[-1].copy())


def to_invariant_future(future: np.ndarray, history: InvariantHistory) -> np.ndarray:
    """Encode a world-frame future as rotated displacements off the anchor."""
    if future is None:
        raise GeometryError("track has no future to encode")
    future = np.asarray(future, dtype=np.float64)
    if future.ndim != 2 or future.shape[1] != 2:
        raise GeometryError(f"future must be (T_f, 2), got {future.shape}")
    prev = np.vstack([history.anchor[None, :], future[:-1]])
    return (future - prev) @ history.rotation


def displacements_to_positions(disp: np.ndarray, history: InvariantHistory) -> np.ndarray:
    """Decode agent-frame displacements back to world positions.

    Anchored at the last observed position; exact inverse of
    :func:`to_invariant_future`.
    """
    disp = np.asarray(disp, dtype=np.float64)
    if disp.ndim != 2 or disp.shape[1] != 2:
        raise GeometryError(f"displacements must be (T_f, 2), got {disp.shape}")
    world_steps = disp @ history.rotation.T
    return history.anchor[None, :] + np.cumsum(world_steps, axis=0)


def relative_positions(disp: np.ndarray) -> np.ndarray:
    """Agent-frame positions (cumulative displacements), origin at the anchor.

    Used to feed candidates to the scorer in the invariant frame; supports a
    leading batch axis.
    """
    return np.cumsum(np.asarray(disp, dtype=np.float64), axis=-2)
