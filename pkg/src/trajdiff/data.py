"""Scene data model, benchmark-format ingestion, synthetic scene generation,
leave-one-out splits, and the canonical line-delimited scene serialization.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCENE_FORMAT_VERSION = 1

PEDESTRIAN_SUBSETS = ("ETH", "Hotel", "Univ", "Zara1", "Zara2")

SUBSET_FILENAMES = {
    "ETH": "eth.txt",
    "Hotel": "hotel.txt",
    "Univ": "univ.txt",
    "Zara1": "zara1.txt",
    "Zara2": "zara2.txt",
}


class DataError(ValueError):
    pass


@dataclass
class AgentTrack:
    agent_id: int
    past: np.ndarray                 # (T_p, 2) world-frame meters
    future: np.ndarray | None = None  # (T_f, 2) or None at pure inference

    def __post_init__(self) -> None:
        self.past = np.asarray(self.past, dtype=np.float64)
        if self.future is not None:
            self.future = np.asarray(self.future, dtype=np.float64)
        if self.past.ndim != 2 or self.past.shape[0] < 2 or self.past.shape[1] != 2:
            raise DataError(f"agent {self.agent_id}: past must be (T_p>=2, 2), got {self.past.shape}")
        if not np.all(np.isfinite(self.past)):
            raise DataError(f"agent {self.agent_id}: non-finite past coordinates")
        if self.future is not None and not np.all(np.isfinite(self.future)):
            raise DataError(f"agent {self.agent_id}: non-finite future coordinates")


@dataclass
class Scene:
    """One prediction instance; ``tracks[0]`` is the focal agent."""

    scene_id: str
    dt: float
    tracks: list[AgentTrack]
    mode: str | None = None
    mode_endpoints: dict[str, list[float]] | None = None

    @property
    def focal(self) -> AgentTrack:
        return self.tracks[0]

    @property
    def n_agents(self) -> int:
        return len(self.tracks)


# --------------------------------------------------------------------------
# Canonical serialization (JSON lines, one scene per record, versioned)
# --------------------------------------------------------------------------

def scene_to_record(scene: Scene) -> dict:
    return {
        "version": SCENE_FORMAT_VERSION,
        "scene_id": scene.scene_id,
        "dt": scene.dt,
        "mode": scene.mode,
        "mode_endpoints": scene.mode_endpoints,
        "tracks": [
            {
                "agent_id": t.agent_id,
                "past": np.asarray(t.past).tolist(),
                "future": None if t.future is None else np.asarray(t.future).tolist(),
            }
            for t in scene.tracks
        ],
    }


def scene_from_record(record: dict) -> Scene:
    version = record.get("version")
    if version != SCENE_FORMAT_VERSION:
        raise DataError(f"unsupported scene record version {version!r}")
    tracks = [
        AgentTrack(
            agent_id=int(t["agent_id"]),
            past=np.asarray(t["past"], dtype=np.float64),
            future=None if t.get("future") is None else np.asarray(t["future"], dtype=np.float64),
        )
        for t in record["tracks"]
    ]
    return Scene(
        scene_id=str(record["scene_id"]),
        dt=float(record["dt"]),
        tracks=tracks,
        mode=record.get("mode"),
        mode_endpoints=record.get("mode_endpoints"),
    )


def save_scenes(path: str | Path, scenes: list[Scene]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for scene in scenes:
            fh.write(json.dumps(scene_to_record(scene)) + "\n")


def load_scenes(path: str | Path) -> list[Scene]:
    scenes = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                scenes.append(scene_from_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise DataError(f"{path}:{lineno}: malformed scene record: {e}") from None
    return scenes


# --------------------------------------------------------------------------
# Benchmark text-format ingestion (frame, id, x, y rows)
# --------------------------------------------------------------------------

def load_ethucy(
    path: str | Path,
    t_p: int = 8,
    t_f: int = 12,
    stride: int = 1,
    dt: float = 0.4,
    column_order: str = "xy",
) -> list[Scene]:
    """Sliding-window scenes from a whitespace-separated annotation file.

    Rows are (frame, agent id, x, y) at the native annotation rate; set
    ``column_order="yx"`` for files with swapped coordinate columns.  For
    every focal agent, each run of ``t_p + t_f`` consecutive annotated
    frames yields one scene; neighbors join a scene only when observed at
    all ``t_p`` history frames (their futures are kept when complete).
    Windows advance by ``stride`` frames and never span files.
    """
    if column_order not in ("xy", "yx"):
        raise DataError(f"column_order must be 'xy' or 'yx', got {column_order!r}")
    if stride < 1:
        raise DataError(f"stride must be >= 1, got {stride}")
    per_frame: dict[int, dict[int, tuple[float, float]]] = {}
    seen: set[tuple[int, int]] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 4:
                raise DataError(f"{path}:{lineno}: expected 4 columns (frame id x y), got {len(parts)}")
            try:
                frame = int(float(parts[0]))
                agent = int(float(parts[1]))
                a, b = float(parts[2]), float(parts[3])
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed row {line.strip()!r}") from None
            x, y = (a, b) if column_order == "xy" else (b, a)
            if not (math.isfinite(x) and math.isfinite(y)):
                raise DataError(f"{path}:{lineno}: non-finite coordinates")
            if (frame, agent) in seen:
                raise DataError(f"{path}:{lineno}: duplicate (frame, agent) pair ({frame}, {agent})")
            seen.add((frame, agent))
            per_frame.setdefault(frame, {})[agent] = (x, y)

    frames = sorted(per_frame)
    window = t_p + t_f
    scenes: list[Scene] = []
    stem = Path(path).stem
    for start in range(0, len(frames) - window + 1, stride):
        win_frames = frames[start:start + window]
        hist_frames = win_frames[:t_p]
        fut_frames = win_frames[t_p:]
        # agents present at every history frame
        present = set(per_frame[hist_frames[0]])
        for f in hist_frames[1:]:
            present &= set(per_frame[f])
        for focal in sorted(present):
            if not all(focal in per_frame[f] for f in fut_frames):
                continue
            tracks = [_window_track(per_frame, focal, hist_frames, fut_frames)]
            for other in sorted(present - {focal}):
                tracks.append(_window_track(per_frame, other, hist_frames, fut_frames))
            scenes.append(Scene(
                scene_id=f"{stem}:{win_frames[0]}:{focal}",
                dt=dt,
                tracks=tracks,
            ))
    return scenes


def _window_track(per_frame, agent: int, hist_frames, fut_frames) -> AgentTrack:
    past = np.asarray([per_frame[f][agent] for f in hist_frames], dtype=np.float64)
    future = None
    if all(agent in per_frame[f] for f in fut_frames):
        future = np.asarray([per_frame[f][agent] for f in fut_frames], dtype=np.float64)
    return AgentTrack(agent_id=agent, past=past, future=future)


def leave_one_out_splits(subset_name: str) -> tuple[list[str], list[str]]:
    """Train on four pedestrian subsets, test on the named one."""
    if subset_name not in PEDESTRIAN_SUBSETS:
        raise DataError(f"unknown subset {subset_name!r}; valid: {list(PEDESTRIAN_SUBSETS)}")
    train = [s for s in PEDESTRIAN_SUBSETS if s != subset_name]
    return train, [subset_name]


def resolve_subset_files(data_dir: str | Path, names: list[str]) -> list[Path]:
    paths = []
    for name in names:
        p = Path(data_dir) / SUBSET_FILENAMES[name]
        if not p.exists():
            raise DataError(f"annotation file for subset {name} not found at {p}")
        paths.append(p)
    return paths


# --------------------------------------------------------------------------
# Synthetic scenes
# --------------------------------------------------------------------------

SYNTHETIC_MODES = ("straight", "left", "right", "stop")


@dataclass
class SyntheticSpec:
    """Constant-speed agents whose futures branch by a sampled maneuver mode."""

    n_scenes: int = 100
    n_agents: int = 1
    mode_weights: dict[str, float] = field(default_factory=lambda: {"straight": 1.0})
    speed_range: tuple[float, float] = (1.0, 1.6)
    noise_sigma: float = 0.05
    seed: int = 0
    t_p: int = 8
    t_f: int = 12
    dt: float = 0.4
    turn_angle: float = math.pi / 2  # total heading change over the future

    def validate(self) -> None:
        if self.n_scenes < 1 or self.n_agents < 1:
            raise DataError("need n_scenes >= 1 and n_agents >= 1")
        if self.noise_sigma < 0:
            raise DataError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        for mode in self.mode_weights:
            if mode not in SYNTHETIC_MODES:
                raise DataError(f"unknown mode {mode!r}; valid: {list(SYNTHETIC_MODES)}")
        total = sum(self.mode_weights.values())
        if not math.isclose(total, 1.0, rel_tol=0, abs_tol=1e-9):
            raise DataError(f"mode weights must sum to 1, got {total}")


def _mode_future(mode: str, start: np.ndarray, heading: float, speed: float,
                 t_f: int, dt: float, turn_angle: float) -> np.ndarray:
    """Noise-free future positions for one maneuver mode."""
    pos = start.copy()
    h = heading
    points = []
    for j in range(t_f):
        if mode == "straight":
            step = speed * dt
        elif mode == "left":
            h += turn_angle / t_f
            step = speed * dt
        elif mode == "right":
            h -= turn_angle / t_f
            step = speed * dt
        elif mode == "stop":
            decay = max(0.0, 1.0 - (j + 1) / (t_f / 2))
            step = speed * decay * dt
        else:
            raise DataError(f"unknown mode {mode!r}")
        pos = pos + step * np.array([math.cos(h), math.sin(h)])
        points.append(pos.copy())
    return np.asarray(points)


def generate_synthetic(spec: SyntheticSpec) -> list[Scene]:
    """Deterministic-by-seed scene set with per-scene maneuver labels.

    Every scene also records the noise-free endpoint each mode in the
    mixture would reach from the focal agent's true state, enabling
    mode-coverage analysis downstream.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    modes = sorted(spec.mode_weights)
    weights = np.asarray([spec.mode_weights[m] for m in modes])
    scenes: list[Scene] = []
    for s in range(spec.n_scenes):
        tracks = []
        scene_mode = None
        endpoints: dict[str, list[float]] = {}
        for a in range(spec.n_agents):
            heading = rng.uniform(0.0, 2.0 * math.pi)
            speed = rng.uniform(*spec.speed_range)
            start = rng.uniform(-20.0, 20.0, size=2)
            mode = modes[int(rng.choice(len(modes), p=weights))]
            direction = np.array([math.cos(heading), math.sin(heading)])
            past_clean = start[None, :] + np.arange(spec.t_p)[:, None] * speed * spec.dt * direction[None, :]
            anchor = past_clean[-1]
            future_clean = _mode_future(mode, anchor, heading, speed, spec.t_f, spec.dt, spec.turn_angle)
            past = past_clean + rng.normal(0.0, spec.noise_sigma, size=past_clean.shape)
            future = future_clean + rng.normal(0.0, spec.noise_sigma, size=future_clean.shape)
            if a == 0:
                scene_mode = mode
                for m in modes:
                    endpoints[m] = _mode_future(m, anchor, heading, speed, spec.t_f, spec.dt,
                                                spec.turn_angle)[-1].tolist()
            tracks.append(AgentTrack(agent_id=a, past=past, future=future))
        scenes.append(Scene(
            scene_id=f"synthetic:{spec.seed}:{s}",
            dt=spec.dt,
            tracks=tracks,
            mode=scene_mode,
            mode_endpoints=endpoints,
        ))
    return scenes
