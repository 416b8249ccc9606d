"""Conditional-diffusion trajectory prediction with fast step-skipping
sampling, attention-based candidate scoring, and suppression selection."""

__version__ = "0.1.0"

from .config import RunConfig, load_config
from .data import Scene, AgentTrack, SyntheticSpec, generate_synthetic, load_ethucy
from .diffusion import NoiseSchedule, SamplerConfig, build_schedule, sample
from .networks import Arch, Encoder, Denoiser, Scorer
from .selection import SelectionConfig, PredictionSet

__all__ = [
    "RunConfig",
    "load_config",
    "Scene",
    "AgentTrack",
    "SyntheticSpec",
    "generate_synthetic",
    "load_ethucy",
    "NoiseSchedule",
    "SamplerConfig",
    "build_schedule",
    "sample",
    "Arch",
    "Encoder",
    "Denoiser",
    "Scorer",
    "SelectionConfig",
    "PredictionSet",
]
