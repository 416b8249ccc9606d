"""Named parameter storage and a decoupled-weight-decay Adam optimizer."""

from __future__ import annotations

import numpy as np

from .engine import EngineError

DEFAULT_LR = 5e-4


class ParameterStore:
    """Named float64 parameters plus AdamW moment accumulators.

    Parameters are replaced (never mutated in place) on update, so arrays
    already captured by a tape or a forward pass stay valid.  Initialization
    is driven by the store's seeded generator: weight matrices are uniform in
    +-sqrt(1/fan_in), biases and other vectors start at zero unless asked
    otherwise.
    """

    def __init__(self, seed: int = 0):
        self.values: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0
        self.rng = np.random.default_rng(seed)

    def parameter(self, name: str, shape: tuple[int, ...], init: str = "fan_in") -> np.ndarray:
        """Create (or return the existing) parameter ``name``."""
        if name in self.values:
            existing = self.values[name]
            if existing.shape != tuple(shape):
                raise EngineError(f"parameter {name!r} exists with shape {existing.shape}, requested {tuple(shape)}")
            return existing
        if init == "fan_in":
            bound = float(np.sqrt(1.0 / shape[0]))
            value = self.rng.uniform(-bound, bound, size=shape)
        elif init == "zeros":
            value = np.zeros(shape)
        elif init == "ones":
            value = np.ones(shape)
        else:
            raise EngineError(f"unknown init {init!r}")
        value = np.asarray(value, dtype=np.float64)
        self.values[name] = value
        self.m[name] = np.zeros(shape)
        self.v[name] = np.zeros(shape)
        return value

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def names(self) -> list[str]:
        return list(self.values)

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.values.values()))

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        """Overwrite a subset of parameter values (shapes must match)."""
        for name, arr in values.items():
            arr = np.asarray(arr, dtype=np.float64)
            if name not in self.values:
                raise EngineError(f"unknown parameter {name!r}")
            if self.values[name].shape != arr.shape:
                raise EngineError(
                    f"shape mismatch for {name!r}: store {self.values[name].shape} vs loaded {arr.shape}"
                )
            self.values[name] = arr


def adamw_step(
    store: ParameterStore,
    gradients: dict[str, np.ndarray],
    lr: float = DEFAULT_LR,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> None:
    """One AdamW update over every parameter in ``store``.

    Weight decay is decoupled (applied directly to the parameter, scaled by
    lr) and the moment estimates are bias-corrected.  Every parameter must
    have a gradient of matching shape.
    """
    missing = [name for name in store.values if name not in gradients]
    if missing:
        raise EngineError(f"missing gradients for parameters: {missing}")
    store.step_count += 1
    t = store.step_count
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in store.values.items():
        g = np.asarray(gradients[name], dtype=np.float64)
        if g.shape != p.shape:
            raise EngineError(f"gradient shape mismatch for {name!r}: {g.shape} vs {p.shape}")
        m = store.m[name] = beta1 * store.m[name] + (1.0 - beta1) * g
        v = store.v[name] = beta2 * store.v[name] + (1.0 - beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        store.values[name] = p - lr * weight_decay * p - lr * update
