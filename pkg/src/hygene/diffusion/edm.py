"""EDM noise model, preconditioned loss and the deterministic Heun sampler."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from ..hcore import BipartiteGraph
from ..spectral import NodeEmbeddings


@dataclass(frozen=True)
class FeatureTriple:
    """Per-left-node, per-right-node and per-edge scalar features."""

    vl: np.ndarray
    vr: np.ndarray
    e: np.ndarray

    def blocks(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.vl, self.vr, self.e

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> FeatureTriple:
        return FeatureTriple(fn(self.vl), fn(self.vr), fn(self.e))

    def zip(self, other: FeatureTriple, fn) -> FeatureTriple:
        return FeatureTriple(fn(self.vl, other.vl), fn(self.vr, other.vr), fn(self.e, other.e))

    def shape_of(self, host: BipartiteGraph) -> bool:
        return len(self.vl) == host.n_left and len(self.vr) == host.n_right and len(self.e) == host.num_edges

    @classmethod
    def zeros_like(cls, host: BipartiteGraph) -> FeatureTriple:
        return cls(np.zeros(host.n_left), np.zeros(host.n_right), np.zeros(host.num_edges))

    @classmethod
    def standard_normal(cls, host: BipartiteGraph, rng: np.random.Generator) -> FeatureTriple:
        return cls(
            rng.standard_normal(host.n_left),
            rng.standard_normal(host.n_right),
            rng.standard_normal(host.num_edges),
        )


@dataclass(frozen=True)
class Conditioning:
    """Inputs the denoiser is conditioned on besides the noised features.

    ``parents`` maps every left and right node of the host to the node of
    the coarser graph it was copied from; ``None`` means every node is its
    own parent.
    """

    embeddings: NodeEmbeddings
    target_size: int
    reduction_fraction: float
    parents: tuple[np.ndarray, np.ndarray] | None = None


class Denoiser(Protocol):
    def __call__(
        self, x: FeatureTriple, sigma: float, host: BipartiteGraph, cond: Conditioning
    ) -> FeatureTriple: ...


@dataclass(frozen=True)
class NoiseConfig:
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    sigma_data: float = 0.5
    p_mean: float = -1.2
    p_std: float = 1.2
    sampler_steps: int = 32
    rho: float = 7.0

    def __post_init__(self) -> None:
        if not (0 < self.sigma_min < self.sigma_max):
            raise ValueError("need 0 < sigma_min < sigma_max")
        if self.sigma_data <= 0 or self.sampler_steps < 1:
            raise ValueError("sigma_data must be positive and sampler_steps >= 1")

    def sample_training_sigma(self, rng: np.random.Generator) -> float:
        return float(np.exp(self.p_mean + self.p_std * rng.standard_normal()))


@dataclass(frozen=True)
class Precond:
    c_skip: float
    c_out: float
    c_in: float
    c_noise: float
    weight: float


def preconditioning(sigma: float, sigma_data: float) -> Precond:
    s2, d2 = sigma * sigma, sigma_data * sigma_data
    return Precond(
        c_skip=d2 / (s2 + d2),
        c_out=sigma * sigma_data / np.sqrt(s2 + d2),
        c_in=1.0 / np.sqrt(s2 + d2),
        c_noise=float(np.log(sigma)) / 4.0,
        weight=(s2 + d2) / (sigma * sigma_data) ** 2,
    )


def noise_features(x0: FeatureTriple, sigma: float, rng: np.random.Generator) -> FeatureTriple:
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    return x0.map(lambda a: a + sigma * rng.standard_normal(a.shape))


def weighted_error(pred: FeatureTriple, x0: FeatureTriple, sigma: float, sigma_data: float) -> float:
    """EDM-weighted squared error, averaged within each block and summed over blocks."""
    w = preconditioning(sigma, sigma_data).weight
    total = 0.0
    for p, t in zip(pred.blocks(), x0.blocks()):
        if p.size:
            total += float(np.mean((p - t) ** 2))
    return w * total


def edm_loss(
    d: Denoiser,
    x0: FeatureTriple,
    host: BipartiteGraph,
    cond: Conditioning,
    sigma: float,
    rng: np.random.Generator | None = None,
    sigma_data: float = 0.5,
    noise: FeatureTriple | None = None,
) -> float:
    """Noise ``x0`` at level ``sigma``, denoise it with ``d`` and return the weighted error."""
    if noise is None:
        if rng is None:
            raise ValueError("either rng or noise is required")
        noise = FeatureTriple.standard_normal(host, rng)
    x = x0.zip(noise, lambda a, n: a + sigma * n)
    return weighted_error(d(x, sigma, host, cond), x0, sigma, sigma_data)


def sigma_schedule(cfg: NoiseConfig) -> np.ndarray:
    """Karras schedule from sigma_max down to sigma_min, followed by 0."""
    n = cfg.sampler_steps
    if n == 1:
        return np.array([cfg.sigma_max, 0.0])
    i = np.arange(n)
    inv = 1.0 / cfg.rho
    t = (cfg.sigma_max**inv + i / (n - 1) * (cfg.sigma_min**inv - cfg.sigma_max**inv)) ** cfg.rho
    return np.append(t, 0.0)


def reverse_sde_sample(
    d: Denoiser,
    host: BipartiteGraph,
    cond: Conditioning,
    cfg: NoiseConfig,
    rng: np.random.Generator,
) -> FeatureTriple:
    """Deterministic Heun integration of the probability-flow ODE from sigma_max to 0."""
    ts = sigma_schedule(cfg)
    x = FeatureTriple.standard_normal(host, rng).map(lambda a: a * ts[0])
    for t_cur, t_next in zip(ts[:-1], ts[1:]):
        den = d(x, float(t_cur), host, cond)
        slope = x.zip(den, lambda a, b: (a - b) / t_cur)
        x_next = x.zip(slope, lambda a, s: a + (t_next - t_cur) * s)
        if t_next > 0:
            den2 = d(x_next, float(t_next), host, cond)
            slope2 = x_next.zip(den2, lambda a, b: (a - b) / t_next)
            avg = slope.zip(slope2, lambda s1, s2: 0.5 * (s1 + s2))
            x_next = x.zip(avg, lambda a, s: a + (t_next - t_cur) * s)
        x = x_next
    return x
