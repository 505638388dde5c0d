"""Run configuration: one TOML file with a section per stage."""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .datagen import DatasetSpec
from .diffusion.denoiser import ModelConfig
from .diffusion.edm import NoiseConfig
from .diffusion.pipeline import CoarsenConfig, PerturbConfig, SampleConfig, TrainConfig
from .evaluate import EvalConfig


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


@dataclass(frozen=True)
class SamplingPlan:
    count: int = 40
    n_target: int | None = None  # None: cycle through the reference set's sizes
    variant: str = "deterministic"
    cap_factor: int = 10


@dataclass(frozen=True)
class RunConfig:
    seed: int | None = None
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    sample: SamplingPlan = field(default_factory=SamplingPlan)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @property
    def sample_config(self) -> SampleConfig:
        t = self.train
        return SampleConfig(
            rho_min=t.coarsen.rho_min,
            rho_max=t.coarsen.rho_max,
            spectral_k=t.spectral_k,
            embed_dim=t.model.embed_dim,
            cap_factor=self.sample.cap_factor,
            noise=t.noise,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build(cls, section: dict, name: str, **nested):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    try:
        return cls(**section, **nested)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


SECTIONS = ("seed", "dataset", "coarsen", "perturb", "model", "noise", "train", "sample", "eval")


def config_from_dict(raw: dict) -> RunConfig:
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")
    seed = raw.get("seed")
    if seed is not None and (not isinstance(seed, int) or seed < 0):
        raise ConfigError("seed must be a non-negative integer")
    dataset = dict(raw.get("dataset", {}))
    dataset.setdefault("seed", seed if seed is not None else 0)
    train_sec = dict(raw.get("train", {}))
    train = _build(
        TrainConfig,
        train_sec,
        "train",
        coarsen=_build(CoarsenConfig, raw.get("coarsen", {}), "coarsen"),
        perturb=_build(PerturbConfig, raw.get("perturb", {}), "perturb"),
        model=_build(ModelConfig, raw.get("model", {}), "model"),
        noise=_build(NoiseConfig, raw.get("noise", {}), "noise"),
    )
    plan = _build(SamplingPlan, raw.get("sample", {}), "sample")
    if plan.variant not in ("deterministic", "free") or plan.count < 0:
        raise ConfigError("[sample]: variant must be deterministic|free and count >= 0")
    return RunConfig(
        seed=seed,
        dataset=_build(DatasetSpec, dataset, "dataset"),
        train=train,
        sample=plan,
        eval=_build(EvalConfig, raw.get("eval", {}), "eval"),
    )


def read_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_config(path) -> RunConfig:
    return config_from_dict(read_config(path))
