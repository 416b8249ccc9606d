"""Run configuration: one flat record of every hyperparameter, loadable from
a JSON key-value file with full command-line override.

The same defaults drive training, prediction, and the benchmark harness;
cross-field constraints (skip divides step count, oversample covers the
selection size) are validated before any work starts.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .networks import Arch


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # horizons / data
    t_p: int = 8
    t_f: int = 12
    dt: float = 0.4
    column_order: str = "xy"
    stride: int = 1

    # diffusion
    h_steps: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.05
    gamma: int = 20
    method: str = "ddim"          # "ddim" | "ddpm"
    m_samples: int = 100

    # selection
    k_select: int = 20
    select: str = "nms"           # "nms" | "coverage" | "random"
    omega: float = 8.0
    coverage_radius: float = 2.0
    nms_distance: str = "endpoint"
    lambda_fde: float = 1.5
    score_temperature: float = 1.0

    # architecture
    d_c: int = 128
    width: int = 128
    heads: int = 4
    head_dim: int = 32
    denoiser_layers: int = 5
    encoder_layers: int = 2
    ffn_width: int = 256
    scorer_dim: int = 128
    lane_dim: int = 8

    # training
    lr: float = 5e-4
    weight_decay: float = 0.01
    batch_size: int = 32
    denoiser_epochs: int = 80
    scorer_epochs: int = 20
    dropout: float = 0.1
    seed: int = 0

    # evaluation
    k_values: tuple[int, ...] = (1, 5, 10, 20)
    miss_threshold: float = 2.0
    threads: int = 1

    # benchmark harness
    bench_repeats: int = 5
    bench_warmups: int = 2

    def validate(self) -> "RunConfig":
        if self.t_p < 2 or self.t_f < 1:
            raise ConfigError(f"need t_p >= 2 and t_f >= 1, got t_p={self.t_p}, t_f={self.t_f}")
        if self.h_steps < 1:
            raise ConfigError(f"need h_steps >= 1, got {self.h_steps}")
        if not (0.0 < self.beta_start < self.beta_end < 1.0):
            raise ConfigError(f"need 0 < beta_start < beta_end < 1, got [{self.beta_start}, {self.beta_end}]")
        if self.method not in ("ddim", "ddpm"):
            raise ConfigError(f"method must be 'ddim' or 'ddpm', got {self.method!r}")
        if self.method == "ddim" and self.h_steps % self.gamma != 0:
            raise ConfigError(f"gamma={self.gamma} must divide h_steps={self.h_steps}")
        if self.m_samples < self.k_select:
            raise ConfigError(f"m_samples={self.m_samples} must be >= k_select={self.k_select}")
        if self.select not in ("nms", "coverage", "random"):
            raise ConfigError(f"select must be nms|coverage|random, got {self.select!r}")
        if self.nms_distance not in ("endpoint", "ade"):
            raise ConfigError(f"nms_distance must be endpoint|ade, got {self.nms_distance!r}")
        if max(self.k_values) > self.k_select:
            raise ConfigError(f"k_values {self.k_values} exceed k_select={self.k_select}")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.heads * self.head_dim <= 0:
            raise ConfigError("heads and head_dim must be positive")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        return self

    def arch(self) -> Arch:
        return Arch(
            t_p=self.t_p,
            t_f=self.t_f,
            d_c=self.d_c,
            width=self.width,
            heads=self.heads,
            head_dim=self.head_dim,
            denoiser_layers=self.denoiser_layers,
            encoder_layers=self.encoder_layers,
            ffn_width=self.ffn_width,
            scorer_dim=self.scorer_dim,
            lane_dim=self.lane_dim,
            dropout=self.dropout,
        )

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["k_values"] = list(self.k_values)
        return out

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


_FIELD_TYPES = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, value):
    if name == "k_values":
        if isinstance(value, str):
            value = [v for v in value.split(",") if v]
        return tuple(int(v) for v in value)
    f = _FIELD_TYPES[name]
    if f.type in ("int",):
        return int(value)
    if f.type in ("float",):
        return float(value)
    if f.type in ("str",):
        return str(value)
    return value


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from an optional JSON file plus explicit overrides.

    Unknown keys are rejected so typos fail loudly rather than silently
    falling back to defaults.
    """
    values: dict = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                loaded = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        values.update(loaded)
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})

    unknown = [k for k in values if k not in _FIELD_TYPES]
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}; valid: {sorted(_FIELD_TYPES)}")
    try:
        coerced = {k: _coerce(k, v) for k, v in values.items()}
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad config value: {e}") from None
    return RunConfig(**coerced).validate()
