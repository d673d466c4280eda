"""Experiment configuration: one JSON document drives every command.

Defaults: a 4-channel 16x16 latent, T=200 linear-beta schedule, embedding at
0.3T on channel 3 with a radius-8 disk, channel averaging at gamma 1.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attacks import AttackSpec
from .diffusion import AnalyticDiffusion, GaussianMixturePrior, NoiseSchedule
from .watermark import WatermarkKey, generate_key

# Fixed offsets so the prior and key derive distinct streams from one seed.
_PRIOR_STREAM = 0x5EED1
_KEY_STREAM = 0x5EED2
_SET_STREAM = 0x5EED3

DEFAULT_ATTACKS = [
    {"variant": "jpeg_like"},
    {"variant": "gaussian_blur"},
    {"variant": "gaussian_noise"},
    {"variant": "color_jitter"},
    {"variant": "resize_restore"},
    {"variant": "random_drop"},
    {"variant": "median_blur"},
    {"variant": "diffpure"},
    {"variant": "averaging"},
]


@dataclass
class ExperimentConfig:
    # tensor shape
    channels: int = 4
    height: int = 16
    width: int = 16
    # schedule
    steps: int = 200
    beta_min: float = 1e-4
    beta_max: float = 0.1
    # prior: "isotropic" or "low_rank"
    prior_kind: str = "isotropic"
    prior_std: float = 1.0
    prior_components: int = 1
    prior_rank: int = 8
    prior_scale: float = 3.0
    prior_tau: float = 1e-6
    prior_separation: float = 10.0
    # key
    radius: int = 8
    channel: int = 3
    t_star_fraction: float = 0.3
    centered: bool = False
    calibration: int = 64
    # pipeline
    scenario: str = "server"
    gamma: float = 1.0
    attacks: list = field(default_factory=lambda: [dict(a) for a in DEFAULT_ATTACKS])
    trials: int = 50
    seed: int = 0
    out_dir: str = "out"
    # theory verification
    theory_lambda: float = 1.0
    theory_samples: int = 2000
    theory_probes: int = 256
    lemma1_d: int = 64
    lemma1_samples: int = 100_000
    lemma_rank: int = 3
    lemma_d: int = 32
    lemma2_samples: int = 50_000
    lemma3_samples: int = 10_000

    def __post_init__(self):
        if not 0.0 < self.t_star_fraction <= 1.0:
            raise ValueError("t_star_fraction must lie in (0, 1]")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.scenario not in ("user", "server"):
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.prior_kind not in ("isotropic", "low_rank"):
            raise ValueError(f"unknown prior kind {self.prior_kind!r}")
        for doc in self.attacks:
            AttackSpec.from_dict(doc)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.channels, self.height, self.width)

    @property
    def t_star(self) -> int:
        return max(1, round(self.t_star_fraction * self.steps))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def with_overrides(self, assignments: list[str]) -> "ExperimentConfig":
        """Apply ``field=json_value`` strings on top of this config."""
        doc = self.to_dict()
        for item in assignments:
            if "=" not in item:
                raise ValueError(f"override {item!r} is not of the form field=value")
            name, raw = item.split("=", 1)
            name = name.strip()
            if name not in doc:
                raise ValueError(f"unknown config field {name!r}")
            try:
                doc[name] = json.loads(raw)
            except json.JSONDecodeError:
                doc[name] = raw
        return self.from_dict(doc)


def build_schedule(cfg: ExperimentConfig) -> NoiseSchedule:
    return NoiseSchedule.linear_beta(cfg.steps, cfg.beta_min, cfg.beta_max)


def build_prior(cfg: ExperimentConfig) -> GaussianMixturePrior:
    if cfg.prior_kind == "isotropic":
        return GaussianMixturePrior.isotropic(cfg.shape, std=cfg.prior_std)
    rng = np.random.default_rng(cfg.seed ^ _PRIOR_STREAM)
    return GaussianMixturePrior.random_low_rank(
        cfg.shape,
        rank=cfg.prior_rank,
        rng=rng,
        n_components=cfg.prior_components,
        scale=cfg.prior_scale,
        tau=cfg.prior_tau,
        separation=cfg.prior_separation,
    )


def build_model(cfg: ExperimentConfig) -> AnalyticDiffusion:
    return AnalyticDiffusion(build_prior(cfg), build_schedule(cfg))


def build_key(cfg: ExperimentConfig, model: AnalyticDiffusion) -> WatermarkKey:
    return generate_key(
        cfg.shape,
        channel=cfg.channel,
        radius=cfg.radius,
        t_star=cfg.t_star,
        seed=cfg.seed ^ _KEY_STREAM,
        centered=cfg.centered,
        model=model,
        calibration=cfg.calibration,
    )
