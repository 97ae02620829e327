"""
Shared fixtures for the lab's tests.

Trained models are session-scoped: they are deterministic given their
seeds, and several test modules read them without modifying them. Tests
that train or fine-tune further take a .copy() first.
"""

import numpy as np
import pytest

from advaug.datagen import blob_patches, two_moons
from advaug.networks import DenseNet
from advaug.pools import PoolRequest, generate_pool
from advaug.synthesizer import SynthesizerConfig, build_synthesizer
from advaug.trainer import (
    SamplingSchedule,
    TrainConfig,
    finetune_augmented,
    train_baseline,
)
from advaug.util import make_rng


def new_classifier(in_extent, hidden=(32, 32), seed=1):
    extents = [in_extent, *hidden, 2]
    activations = ["relu"] * len(hidden) + ["identity"]
    return DenseNet.from_extents(extents, activations, make_rng(seed, 1))


@pytest.fixture(scope="session")
def moons():
    return two_moons(200, 0.1, make_rng(0))


@pytest.fixture(scope="session")
def moons_model(moons):
    config = TrainConfig(
        epochs=40, batch_size=32, seed=0, learning_rate=0.01, validation_fraction=0.0
    )
    model, _ = train_baseline(new_classifier(2), moons, config)
    return model


@pytest.fixture(scope="session")
def patches():
    return blob_patches(60, 16, make_rng(0))


@pytest.fixture(scope="session")
def patch_model(patches):
    config = TrainConfig(
        epochs=30, batch_size=32, seed=0, learning_rate=0.005, validation_fraction=0.0
    )
    model, _ = train_baseline(new_classifier(256, hidden=(32,)), patches, config)
    return model


@pytest.fixture(scope="session")
def augmented_patch_model(patch_model, patches):
    """patch_model fine-tuned on its own perturbed positives and noise negatives."""
    pools = {
        kind: generate_pool(
            PoolRequest(kind, 120, seed), patch_model, dataset=patches
        ).as_dataset()
        for seed, kind in enumerate(["perturbed-positive", "noise-negative"])
    }
    schedule = SamplingSchedule(
        positive={"real": 0.5, "perturbed-positive": 0.5},
        negative={"real": 0.5, "noise-negative": 0.5},
    )
    config = TrainConfig(
        epochs=20, batch_size=32, seed=0, learning_rate=0.005, validation_fraction=0.0
    )
    model, _ = finetune_augmented(patch_model.copy(), patches, pools, schedule, config)
    return model


@pytest.fixture(scope="session")
def patch_bundle():
    config = SynthesizerConfig(latent_dim=8, hidden=16, output_kind="patch")
    return build_synthesizer((16, 16), config, make_rng(0, 2))


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
