"""Noise schedule, forward noising, and the DDPM/DDIM reverse samplers.

Step indices follow the convention eta in [0, H]: eta = 0 is clean data,
eta = H is (near-)standard Gaussian.  ``alpha_bar(0)`` is defined as 1 so
the deterministic step-skipping sampler can target step 0 uniformly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .engine import NumericError, mse

DEFAULT_H = 200
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.05


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Linearly increasing per-step variances and their running products."""

    h: int
    beta: np.ndarray       # (H,), beta[eta-1] is the step-eta variance
    alpha: np.ndarray      # (H,), 1 - beta
    alpha_bar: np.ndarray  # (H+1,), alpha_bar[eta] = prod_{s<=eta} alpha_s, alpha_bar[0] = 1

    def beta_at(self, eta: int) -> float:
        return float(self.beta[eta - 1])

    def alpha_at(self, eta: int) -> float:
        return float(self.alpha[eta - 1])

    def alpha_bar_at(self, eta: int) -> float:
        return float(self.alpha_bar[eta])


def build_schedule(h: int = DEFAULT_H, beta_start: float = DEFAULT_BETA_START,
                   beta_end: float = DEFAULT_BETA_END) -> NoiseSchedule:
    """Linear beta schedule over ``h`` steps, endpoints inclusive."""
    if h < 1:
        raise ScheduleError(f"need h >= 1, got {h}")
    if not (0.0 < beta_start < beta_end < 1.0) and h > 1:
        raise ScheduleError(f"need 0 < beta_start < beta_end < 1, got [{beta_start}, {beta_end}]")
    if h == 1:
        if not (0.0 < beta_start < 1.0):
            raise ScheduleError(f"need 0 < beta_start < 1, got {beta_start}")
        beta = np.array([beta_start], dtype=np.float64)
    else:
        beta = np.linspace(beta_start, beta_end, h, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.concatenate([[1.0], np.cumprod(alpha)])
    return NoiseSchedule(h=h, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def forward_noise(y0: np.ndarray, eta: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form jump from clean data to noise level ``eta``."""
    y0 = np.asarray(y0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != y0.shape:
        raise ScheduleError(f"noise shape {eps.shape} differs from sample shape {y0.shape}")
    if not 1 <= eta <= schedule.h:
        raise ScheduleError(f"eta must be in [1, {schedule.h}], got {eta}")
    ab = schedule.alpha_bar_at(eta)
    return np.sqrt(ab) * y0 + np.sqrt(1.0 - ab) * eps


def ddpm_step(y: np.ndarray, eta: int, eps_hat: np.ndarray, z: np.ndarray,
              schedule: NoiseSchedule) -> np.ndarray:
    """One stochastic reverse step eta -> eta-1."""
    a = schedule.alpha_at(eta)
    b = schedule.beta_at(eta)
    ab = schedule.alpha_bar_at(eta)
    mean = (y - (b / np.sqrt(1.0 - ab)) * eps_hat) / np.sqrt(a)
    return mean + np.sqrt(b) * z


def ddim_step(y: np.ndarray, eta: int, eta_prev: int, eps_hat: np.ndarray,
              schedule: NoiseSchedule) -> np.ndarray:
    """Deterministic reverse jump eta -> eta_prev (eta_prev may be 0)."""
    if not 0 <= eta_prev < eta <= schedule.h:
        raise ScheduleError(f"need 0 <= eta_prev < eta <= {schedule.h}, got {eta_prev} < {eta}")
    ab = schedule.alpha_bar_at(eta)
    ab_prev = schedule.alpha_bar_at(eta_prev)
    x0_pred = (y - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)
    return np.sqrt(ab_prev) * x0_pred + np.sqrt(1.0 - ab_prev) * eps_hat


@dataclass
class SamplerConfig:
    """How to run the reverse process for one scene."""

    method: str = "ddim"     # "ddim" | "ddpm"
    gamma: int = 20          # DDIM skip; denoiser runs H/gamma times
    m: int = 100             # oversampled candidate count
    seed: int = 0

    def validate(self, h: int, k: int | None = None) -> None:
        if self.method not in ("ddim", "ddpm"):
            raise ScheduleError(f"unknown sampler method {self.method!r}")
        if self.m < 1:
            raise ScheduleError(f"need m >= 1, got {self.m}")
        if self.method == "ddim":
            if self.gamma < 1:
                raise ScheduleError(f"need gamma >= 1, got {self.gamma}")
            if h % self.gamma != 0:
                raise ScheduleError(f"gamma={self.gamma} must divide h={h}")
        if k is not None and self.m < k:
            raise ScheduleError(f"oversample m={self.m} must be >= selection k={k}")


@dataclass
class SampleResult:
    """Denoised displacement candidates plus sampler accounting."""

    samples: np.ndarray          # (..., M, T_f, 2); failed chains removed
    denoiser_calls: int
    elapsed_s: float
    failed: int = 0
    per_sample_s: float = field(init=False)

    def __post_init__(self) -> None:
        n = self.samples.shape[-3] if self.samples.ndim >= 3 else 0
        self.per_sample_s = self.elapsed_s / max(1, n)


def _reverse_plan(config: SamplerConfig, h: int) -> list[tuple[int, int]]:
    """(eta, eta_prev) pairs walked by the reverse chain, highest first."""
    if config.method == "ddpm":
        return [(eta, eta - 1) for eta in range(h, 0, -1)]
    etas = list(range(h, 0, -config.gamma))
    return [(eta, max(eta - config.gamma, 0)) for eta in etas]


def sample(
    denoiser: Callable[[np.ndarray, int, np.ndarray], np.ndarray],
    context: np.ndarray,
    config: SamplerConfig,
    schedule: NoiseSchedule,
    shape: tuple[int, int] = (12, 2),
    rng: np.random.Generator | None = None,
) -> SampleResult:
    """Draw M candidates per context row by running the reverse chain batched.

    ``denoiser(y, eta, c)`` must accept a stacked batch ``y`` of shape
    (n, T_f, 2) with matching per-row context ``c`` (n, d_c) and return the
    predicted source noise.  ``context`` is one row (d_c,) or a batch
    (B, d_c); the result then carries (M, T_f, 2) or (B, M, T_f, 2).
    All chains share the read-only weights and advance in lockstep, so the
    whole reverse process is a handful of wide forward passes.

    A chain whose denoiser output goes non-finite is dropped and the chain
    rerun batch excludes it; the count is reported in ``failed``.
    """
    config.validate(schedule.h)
    context = np.asarray(context, dtype=np.float64)
    batched = context.ndim == 2
    ctx_rows = context if batched else context[None, :]
    b = ctx_rows.shape[0]
    m = config.m
    rng = rng or np.random.default_rng(config.seed)

    ctx_full = np.repeat(ctx_rows, m, axis=0)
    y = rng.standard_normal((b * m, *shape))
    plan = _reverse_plan(config, schedule.h)

    calls = 0
    t0 = time.perf_counter()
    alive = np.ones(b * m, dtype=bool)
    for eta, eta_prev in plan:
        eps_hat = denoiser(y, eta, ctx_full)
        calls += 1
        bad = ~np.all(np.isfinite(eps_hat), axis=(-1, -2))
        if bad.any():
            alive &= ~bad
            eps_hat = np.where(bad[:, None, None], 0.0, eps_hat)
        if config.method == "ddpm":
            z = rng.standard_normal(y.shape) if eta > 1 else np.zeros_like(y)
            y = ddpm_step(y, eta, eps_hat, z, schedule)
        else:
            y = ddim_step(y, eta, eta_prev, eps_hat, schedule)
    elapsed = time.perf_counter() - t0

    failed = int((~alive).sum())
    if failed:
        if not batched:
            y = y[alive]
        else:
            # keep the batch rectangular: a failure anywhere is only
            # tolerable in the single-scene path
            raise NumericError(f"denoiser produced non-finite output for {failed} chains in a batched call")
    if batched:
        y = y.reshape(b, m, *shape)
    return SampleResult(samples=y, denoiser_calls=calls, elapsed_s=elapsed, failed=failed)


def diffusion_loss(eps_true, eps_hat) -> np.ndarray:
    """Noise-regression objective: mean squared error over all elements."""
    return mse(eps_hat, eps_true)
