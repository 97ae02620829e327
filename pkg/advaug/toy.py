"""
The two-moons experiment: how random and PGD-searched synthetic
positives and noise negatives reshape a classifier's decision boundary
when one moon is only sparsely sampled.

Six models, all sharing data and seeds:

  full        baseline on the complete data
  subsampled  baseline on the long-tail positives (the model attacked)
  syn-random  + random synthetic positives
  uniform     + random synthetic positives, uniform noise negatives
  pgd-syn     + PGD synthetic positives, uniform noise negatives
  pgd-noise   + PGD synthetic positives, uniform and PGD noise negatives
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from advaug.adversarial import AttackConfig
from advaug.datagen import (
    Dataset,
    positive_moon_distance,
    subsample_positives,
    two_moons,
)
from advaug.errors import ConfigError
from advaug.heads import confidence
from advaug.networks import DenseNet
from advaug.plotting import GridSpec, evaluate_grid
from advaug.pools import PoolRequest, generate_pool
from advaug.synthesizer import (
    SynthesizerBundle,
    SynthesizerConfig,
    build_synthesizer,
    train_synthesizer,
)
from advaug.trainer import (
    SamplingSchedule,
    TrainConfig,
    finetune_augmented,
    train_baseline,
)
from advaug.util import make_rng

logger = logging.getLogger(__name__)

PANELS = ("full", "subsampled", "syn-random", "uniform", "pgd-syn", "pgd-noise")

TITLES = {
    "full": "(a) full data",
    "subsampled": "(b) long-tail positives",
    "syn-random": "(c) + random synthetic",
    "uniform": "(d) + uniform noise",
    "pgd-syn": "(e) + PGD synthetic",
    "pgd-noise": "(f) + PGD noise",
}

SCHEDULES = {
    "syn-random": SamplingSchedule(
        positive={"real": 0.5, "synthetic-random": 0.5},
        negative={"real": 1.0},
    ),
    "uniform": SamplingSchedule(
        positive={"real": 0.5, "synthetic-random": 0.5},
        negative={"real": 0.5, "noise-uniform": 0.5},
    ),
    "pgd-syn": SamplingSchedule(
        positive={"real": 0.5, "synthetic-pgd": 0.5},
        negative={"real": 0.5, "noise-uniform": 0.5},
    ),
    "pgd-noise": SamplingSchedule(
        positive={"real": 0.5, "synthetic-pgd": 0.5},
        negative={"real": 0.5, "noise-uniform": 0.25, "noise-negative": 0.25},
    ),
}

COVERAGE_BAND = 0.25


@dataclass(frozen=True)
class ToyConfig:
    seed: int = 0
    n_per_class: int = 500
    noise_std: float = 0.15
    positives_kept: int = 20
    longtail_rate: float = 3.0
    hidden: int = 32
    baseline_epochs: int = 60
    finetune_epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.01
    synthesizer_epochs: int = 300
    # the 2-D toy needs a firmer pull toward the prior than patches do
    lambda_kl: float = 0.01
    pool_size: int = 100
    noise_box: tuple = (-1.5, 2.5)
    latent_attack: AttackConfig = field(
        default_factory=lambda: AttackConfig(
            epsilon=1.0, alpha=0.1, iterations=20, init="zero", step="gradient"
        )
    )
    noise_attack: AttackConfig = field(
        default_factory=lambda: AttackConfig(
            epsilon=0.5, alpha=0.05, iterations=20, step="gradient"
        )
    )
    grid: GridSpec = field(default_factory=GridSpec)

    def __post_init__(self):
        if self.positives_kept > self.n_per_class:
            raise ConfigError("cannot keep more positives than were drawn")
        if self.pool_size < 1:
            raise ConfigError(f"pool size must be >= 1, got {self.pool_size}")

    def as_dict(self) -> dict:
        return asdict(self)

    def train_config(self, epochs: int, stream: int) -> TrainConfig:
        return TrainConfig(
            epochs=epochs,
            batch_size=self.batch_size,
            seed=int(make_rng(self.seed, stream).integers(2**31)),
            patience=epochs,
            learning_rate=self.learning_rate,
            validation_fraction=0.0,
        )


@dataclass
class ToyPanel:
    name: str
    model: DenseNet
    dataset: Dataset
    extra: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)

    @property
    def title(self) -> str:
        return TITLES[self.name]


@dataclass
class ToyResult:
    config: ToyConfig
    full: Dataset
    subsampled: Dataset
    panels: list[ToyPanel]
    synthetic: dict
    bundle: Optional[SynthesizerBundle] = None

    def panel(self, name: str) -> ToyPanel:
        return next(p for p in self.panels if p.name == name)

    def report(self) -> dict:
        return {
            "seed": self.config.seed,
            "config": self.config.as_dict(),
            "panels": [
                {"name": p.name, "fingerprint": p.model.fingerprint(), **p.metrics}
                for p in self.panels
            ],
            "synthetic": self.synthetic,
        }


def new_classifier(hidden: int, rng: np.random.Generator) -> DenseNet:
    return DenseNet.from_extents(
        [2, hidden, hidden, 2], ["relu", "relu", "identity"], rng, head="ce"
    )


def bounding_box(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return x.min(axis=0), x.max(axis=0)


def panel_metrics(model: DenseNet, spec: GridSpec, full: Dataset) -> dict:
    """
    coverage: share of grid cells near the positive moon called positive.
    outside_positive_fraction: share of cells outside the data box called
    positive.
    """
    grid = evaluate_grid(model, spec)
    points = grid.points
    positive = grid.positive().ravel()

    near = positive_moon_distance(points) < COVERAGE_BAND
    low, high = bounding_box(full.x)
    outside = np.any((points < low) | (points > high), axis=1)

    accuracy = np.mean((confidence(model, full.x) >= 0.5) == (full.labels == 1))
    return {
        "coverage": float(positive[near].mean()) if near.any() else 0.0,
        "outside_positive_fraction": (
            float(positive[outside].mean()) if outside.any() else 0.0
        ),
        "positive_fraction": float(positive.mean()),
        "full_data_accuracy": float(accuracy),
    }


def run_toy(config: ToyConfig, workers: int = 1) -> ToyResult:
    seed = config.seed
    full = two_moons(config.n_per_class, config.noise_std, make_rng(seed, 0))
    subsampled = subsample_positives(
        full, config.positives_kept, make_rng(seed, 1), config.longtail_rate
    )

    init = new_classifier(config.hidden, make_rng(seed, 2))
    full_model, _ = train_baseline(
        init.copy(), full, config.train_config(config.baseline_epochs, 3)
    )
    baseline, _ = train_baseline(
        init.copy(), subsampled, config.train_config(config.baseline_epochs, 3)
    )
    logger.info("toy baselines trained")

    synth_config = SynthesizerConfig(
        latent_dim=2,
        epochs=config.synthesizer_epochs,
        batch_size=config.positives_kept,
        lambda_kl=config.lambda_kl,
        learning_rate=config.learning_rate,
        output_kind="points",
    )
    bundle = build_synthesizer((2,), synth_config, make_rng(seed, 4))
    train_synthesizer(
        bundle, subsampled.positives().x, synth_config, make_rng(seed, 5)
    )

    def pool(kind, attack, stream):
        request = PoolRequest(
            kind=kind,
            count=config.pool_size,
            seed=int(make_rng(seed, stream).integers(2**31)),
            attack=attack,
            value_range=config.noise_box,
        )
        return generate_pool(request, baseline, bundle, subsampled, workers)

    pools = {
        "synthetic-random": pool("synthetic-random", config.latent_attack, 6),
        "synthetic-pgd": pool("synthetic-pgd", config.latent_attack, 7),
        "noise-uniform": pool("noise-uniform", config.noise_attack, 8),
        "noise-negative": pool("noise-negative", config.noise_attack, 9),
    }
    pool_data = {kind: p.as_dataset() for kind, p in pools.items()}
    pool_fps = {kind: p.fingerprint for kind, p in pools.items()}

    panels = [
        ToyPanel("full", full_model, full),
        ToyPanel("subsampled", baseline, subsampled),
    ]
    for stream, (name, schedule) in enumerate(SCHEDULES.items(), start=10):
        used = schedule.pool_kinds()
        model, _ = finetune_augmented(
            baseline.copy(),
            subsampled,
            {kind: pool_data[kind] for kind in used},
            schedule,
            config.train_config(config.finetune_epochs, stream),
            {kind: pool_fps[kind] for kind in used},
        )
        extra = []
        for kind, marker, color in (
            ("synthetic-random", "^", "tab:orange"),
            ("synthetic-pgd", "^", "tab:orange"),
            ("noise-uniform", "x", "tab:green"),
            ("noise-negative", "x", "k"),
        ):
            if kind in used:
                extra.append((pool_data[kind].x, marker, color))
        panels.append(ToyPanel(name, model, subsampled, extra))

    for panel in panels:
        panel.metrics = panel_metrics(panel.model, config.grid, full)
        logger.info("panel %s: %s", panel.name, panel.metrics)

    synthetic = {
        "random_mean_confidence": float(
            confidence(baseline, pool_data["synthetic-random"].x).mean()
        ),
        "pgd_mean_confidence": float(
            confidence(baseline, pool_data["synthetic-pgd"].x).mean()
        ),
        "pool_fingerprints": pool_fps,
    }
    return ToyResult(config, full, subsampled, panels, synthetic, bundle)
