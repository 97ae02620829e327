"""
Stress protocols: feed noised, attacked or synthesized samples to a
classifier and summarize its confidence per column (mean, std, n).

Attacked samples are generated against a *source* model, which may
differ from the model under test; that is how transfer from a baseline
to its augmented descendants is measured.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from advaug.adversarial import AttackConfig
from advaug.datagen import Dataset, poisson_noise_inject, uniform_noise_inject
from advaug.errors import ConfigError
from advaug.froc import stress_summary
from advaug.heads import confidence
from advaug.networks import DenseNet
from advaug.pools import PoolRequest, generate_pool
from advaug.synthesizer import SynthesizerBundle
from advaug.util import make_rng

logger = logging.getLogger(__name__)

PROTOCOLS = (
    "uniform",
    "poisson",
    "adv-patch",
    "adv-noise",
    "adv-negative",
    "syn-random",
    "syn-pgd",
)

# protocols whose samples come from attacking a source model
ATTACKING = ("adv-patch", "adv-noise", "adv-negative", "syn-pgd")


@dataclass(frozen=True)
class StressConfig:
    protocol: str
    seed: int
    count: int = 100
    magnitudes: tuple = (0.0, 0.3, 0.6, 0.9)
    scales: tuple = (50.0, 1.0)
    attack: AttackConfig = field(default_factory=AttackConfig)
    value_range: tuple = (0.0, 1.0)
    head: Optional[str] = None
    workers: int = 1

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigError(
                f"unknown protocol {self.protocol!r}; expected one of {PROTOCOLS}"
            )
        if self.count < 1:
            raise ConfigError(f"count must be >= 1, got {self.count}")

    def as_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "seed": self.seed,
            "count": self.count,
            "magnitudes": list(self.magnitudes),
            "scales": list(self.scales),
            "attack": self.attack.as_dict(),
            "value_range": list(self.value_range),
            "head": self.head,
        }


def column(values) -> dict:
    mean, std = stress_summary(values)
    return {"mean": mean, "std": std, "n": int(np.size(values))}


def _subset(dataset: Dataset, label: int) -> Dataset:
    chosen = dataset.positives() if label == 1 else dataset.negatives()
    if len(chosen) == 0:
        kind = "positive" if label == 1 else "negative"
        raise ConfigError(f"stress protocol needs {kind} samples")
    return chosen


class StressRun:
    def __init__(
        self,
        config: StressConfig,
        model: DenseNet,
        dataset: Optional[Dataset] = None,
        source: Optional[DenseNet] = None,
        bundle: Optional[SynthesizerBundle] = None,
    ):
        self.config = config
        self.model = model
        self.dataset = dataset
        self.source = source if source is not None else model
        self.bundle = bundle

    def respond(self, x) -> np.ndarray:
        return confidence(self.model, x, self.config.head)

    def _pool(self, kind: str, count: int, key: int, dataset=None):
        request = PoolRequest(
            kind=kind,
            count=count,
            seed=int(make_rng(self.config.seed, key).integers(2**63)),
            attack=self.config.attack,
            value_range=self.config.value_range,
            head=self.config.head,
        )
        return generate_pool(
            request, self.source, self.bundle, dataset, self.config.workers
        )

    def _require_dataset(self) -> Dataset:
        if self.dataset is None:
            raise ConfigError(f"{self.config.protocol} needs a dataset")
        return self.dataset

    def uniform(self) -> dict:
        positives = _subset(self._require_dataset(), 1)
        columns = {}
        for key, magnitude in enumerate(self.config.magnitudes):
            rng = make_rng(self.config.seed, key)
            noisy = uniform_noise_inject(
                positives.x, magnitude, rng, self.config.value_range
            )
            columns[f"uniform-{magnitude:g}"] = column(self.respond(noisy))
        return columns

    def poisson(self) -> dict:
        positives = _subset(self._require_dataset(), 1)
        columns = {}
        for key, scale in enumerate(self.config.scales):
            rng = make_rng(self.config.seed, key)
            noisy = poisson_noise_inject(positives.x, scale, rng)
            columns[f"poisson-x{scale:g}"] = column(self.respond(noisy))
        return columns

    def adv_patch(self) -> dict:
        positives = _subset(self._require_dataset(), 1)
        pool = self._pool("perturbed-positive", len(positives), 0, positives)
        clean = self.respond(positives.x)
        attacked = self.respond(pool.payloads())
        return {
            "clean": column(clean),
            "adversarial": column(attacked),
            "drop": column(clean - attacked),
        }

    def adv_noise(self) -> dict:
        shape = self._sample_shape()
        low, high = self.config.value_range
        rng = make_rng(self.config.seed, 1)
        raw = rng.uniform(low, high, size=(self.config.count, *shape))
        pool = self._pool("noise-negative", self.config.count, 0, self.dataset)
        return {
            "uniform-noise": column(self.respond(raw)),
            "pgd-noise": column(self.respond(pool.payloads())),
        }

    def adv_negative(self) -> dict:
        negatives = _subset(self._require_dataset(), 0)
        pool = self._pool("perturbed-negative", len(negatives), 0, negatives)
        return {
            "negative": column(self.respond(negatives.x)),
            "pgd-negative": column(self.respond(pool.payloads())),
        }

    def synthetic(self, kind: str) -> dict:
        if self.bundle is None:
            raise ConfigError(f"{self.config.protocol} needs a synthesizer bundle")
        pool = self._pool(kind, self.config.count, 0, self.dataset)
        return {kind: column(self.respond(pool.payloads()))}

    def _sample_shape(self) -> tuple:
        if self.dataset is not None:
            return self.dataset.sample_shape
        return (self.model.in_extent,)

    def columns(self) -> dict:
        protocol = self.config.protocol
        if protocol == "uniform":
            return self.uniform()
        if protocol == "poisson":
            return self.poisson()
        if protocol == "adv-patch":
            return self.adv_patch()
        if protocol == "adv-noise":
            return self.adv_noise()
        if protocol == "adv-negative":
            return self.adv_negative()
        if protocol == "syn-random":
            return self.synthetic("synthetic-random")
        return self.synthetic("synthetic-pgd")


def run_stress(
    config: StressConfig,
    model: DenseNet,
    dataset: Optional[Dataset] = None,
    source: Optional[DenseNet] = None,
    bundle: Optional[SynthesizerBundle] = None,
) -> dict:
    run = StressRun(config, model, dataset, source, bundle)
    columns = run.columns()
    for name, values in columns.items():
        logger.info(
            "%s/%s: %.3f +- %.3f", config.protocol, name, values["mean"], values["std"]
        )
    report = {
        "protocol": config.protocol,
        "model_fingerprint": model.fingerprint(),
        "config": config.as_dict(),
        "columns": columns,
    }
    if config.protocol in ATTACKING:
        report["source_fingerprint"] = run.source.fingerprint()
    return report
