"""Denoising diffusion over cluster-size and edge-selection features."""

from .denoiser import ModelConfig, ReferenceDenoiser
from .edm import Conditioning, FeatureTriple, NoiseConfig, edm_loss, noise_features, reverse_sde_sample
from .pipeline import (
    SampleConfig,
    SamplingError,
    TrainConfig,
    sample_deterministic,
    sample_free,
    train,
)

__all__ = [
    "Conditioning",
    "FeatureTriple",
    "ModelConfig",
    "NoiseConfig",
    "ReferenceDenoiser",
    "SampleConfig",
    "SamplingError",
    "TrainConfig",
    "edm_loss",
    "noise_features",
    "reverse_sde_sample",
    "sample_deterministic",
    "sample_free",
    "train",
]
