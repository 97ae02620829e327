import math

import numpy as np
import pytest

from advaug import autodiff as ad
from advaug.adversarial import (
    AttackConfig,
    attack_from_noise,
    attack_latent,
    attack_patch,
    delta_norm,
    fuse,
    pgd_maximize,
    project,
    threshold_mask,
)
from advaug.autodiff import Tape, Tensor
from advaug.datagen import two_moons
from advaug.errors import ConfigError, ShapeError
from advaug.networks import DenseNet
from advaug.synthesizer import SynthesizerConfig, build_synthesizer
from advaug.util import make_rng

from . import linear_classifier


@pytest.mark.parametrize(
    "delta,epsilon,norm,expected",
    [
        ([0.2, -0.3, 0.1], 0.15, "linf", [0.15, -0.15, 0.1]),
        ([0.05, -0.05], 0.15, "linf", [0.05, -0.05]),
        ([3.0, 4.0], 1.0, "l2", [0.6, 0.8]),
        ([0.3, 0.4], 1.0, "l2", [0.3, 0.4]),
        ([0.3, -0.4], 0.0, "linf", [0.0, 0.0]),
        ([0.3, -0.4], 0.0, "l2", [0.0, 0.0]),
    ],
)
def test_project_onto_the_ball(delta, epsilon, norm, expected):
    np.testing.assert_allclose(project(delta, epsilon, norm), expected, atol=1e-12)


def test_project_keeps_tensors_as_tensors():
    projected = project(Tensor([2.0, -2.0]), 1.0)
    assert isinstance(projected, Tensor)
    np.testing.assert_array_equal(projected.data, [1.0, -1.0])


def test_project_rejects_bad_arguments():
    with pytest.raises(ConfigError, match="epsilon"):
        project([0.0], -0.1)
    with pytest.raises(ConfigError, match="norm"):
        project([0.0], 0.1, "l1")


def test_delta_norm():
    assert delta_norm(np.array([0.1, -0.3]), "linf") == pytest.approx(0.3)
    assert delta_norm(np.array([3.0, 4.0]), "l2") == pytest.approx(5.0)
    assert delta_norm(np.zeros(0), "linf") == 0.0


def test_linear_loss_saturates_the_ball(rng):
    config = AttackConfig(epsilon=0.15, alpha=0.05, iterations=10, init="zero")
    result = pgd_maximize(lambda delta: delta.sum(), (4,), config, rng)

    saturated = math.ceil(0.15 / 0.05)
    np.testing.assert_allclose(result.delta, np.full(4, 0.15), atol=1e-12)
    assert result.norms[saturated] == pytest.approx(0.15, abs=1e-12)
    assert result.norms[saturated - 1] < 0.15
    assert len(result.trajectory) == 11
    assert result.trajectory[-1] == pytest.approx(0.6, abs=1e-12)
    assert all(b >= a for a, b in zip(result.trajectory, result.trajectory[1:]))


@pytest.mark.parametrize(
    "norm,target,expected",
    [
        ("linf", [0.5, -0.05, 1.0], [0.15, -0.05, 0.15]),
        ("l2", [3.0, 4.0], [0.09, 0.12]),
    ],
)
def test_concave_loss_converges_to_the_projected_optimum(norm, target, expected):
    target = np.asarray(target)
    config = AttackConfig(
        epsilon=0.15, alpha=0.25, iterations=60, norm=norm, step="gradient"
    )

    def loss_fn(delta):
        return -ad.square(delta - Tensor(target)).sum()

    result = pgd_maximize(loss_fn, target.shape, config, np.random.default_rng(4))
    np.testing.assert_allclose(result.delta, expected, atol=1e-6)


def _tanh_loss(weights):
    def loss_fn(delta):
        return ad.tanh(ad.matmul(ad.reshape(delta, (1, 5)), weights)).sum()

    return loss_fn


@pytest.mark.parametrize("norm", ["linf", "l2"])
@pytest.mark.parametrize("step", ["gradient", "sign"])
def test_every_iterate_stays_in_the_ball(norm, step):
    rng = np.random.default_rng(9)
    for _ in range(1000):
        epsilon = rng.uniform(0.01, 1.0)
        config = AttackConfig(
            epsilon=epsilon,
            alpha=rng.uniform(0.01, 2.0),
            iterations=5,
            norm=norm,
            step=step,
        )
        weights = Tensor(rng.normal(scale=3.0, size=(5, 3)))
        result = pgd_maximize(_tanh_loss(weights), (5,), config, rng)
        assert len(result.norms) == 6
        assert max(result.norms) <= epsilon + 1e-12


def test_zero_epsilon_pins_delta(rng):
    config = AttackConfig(epsilon=0.0, iterations=5)
    result = pgd_maximize(lambda delta: delta.sum(), (3,), config, rng)
    np.testing.assert_array_equal(result.delta, np.zeros(3))
    assert result.norms == [0.0] * 6


@pytest.mark.parametrize(
    "overrides",
    [
        {"epsilon": -0.1},
        {"alpha": 0.0},
        {"iterations": 0},
        {"norm": "l1"},
        {"init": "gaussian"},
        {"step": "momentum"},
        {"target_label": 2},
    ],
)
def test_attack_config_rejects_invalid_values(overrides):
    with pytest.raises(ConfigError):
        AttackConfig(**overrides)


def test_attack_config_defaults_come_from_settings():
    config = AttackConfig.from_settings(iterations=None, alpha=0.01)
    assert config.epsilon == 0.15
    assert config.iterations == 20
    assert config.alpha == 0.01
    assert config.step == "sign"
    assert config.label_for(1) == 1
    assert AttackConfig(target_label=0).label_for(1) == 0


def test_threshold_mask_and_fuse():
    mask = threshold_mask(np.array([0.2, 0.7, 0.5]))
    np.testing.assert_array_equal(mask, [0.0, 1.0, 0.0])
    np.testing.assert_array_equal(
        threshold_mask(np.array([3.0, 7.0]), value_range=(0, 10)), [0.0, 1.0]
    )

    x_tilde = Tensor(np.array([0.9, 0.8, 0.1]), requires_grad=True)
    with Tape() as tape:
        fused = fuse(x_tilde, np.array([0.3, 0.3, 0.3]), mask)
        total = fused.sum()
    np.testing.assert_allclose(fused.data, [0.3, 0.8, 0.3])
    (grad,) = tape.gradient(total, [x_tilde])
    np.testing.assert_array_equal(grad.data, mask)

    with pytest.raises(ShapeError, match="matching shapes"):
        fuse(np.zeros(3), np.zeros(2), np.zeros(3))


def test_patch_attack_lowers_the_positive_response(rng):
    config = AttackConfig(epsilon=0.15, alpha=0.05, iterations=20, init="zero")
    result = attack_patch(linear_classifier(), np.zeros(2), 1, config, rng)

    np.testing.assert_allclose(result.delta, [-0.15, 0.0], atol=1e-12)
    assert result.before == pytest.approx(0.5)
    assert result.after == pytest.approx(1.0 / (1.0 + math.exp(0.15)))
    assert result.response_drop > 0.0
    assert result.success


def test_patch_attack_clamps_into_the_value_range(rng):
    config = AttackConfig(epsilon=0.15, alpha=0.05, iterations=20, init="zero")
    x = np.array([0.05, 0.5])
    result = attack_patch(linear_classifier(), x, 1, config, rng, value_range=(0, 1))

    np.testing.assert_allclose(result.sample, [0.0, 0.5], atol=1e-12)
    assert not result.success


@pytest.mark.slow
def test_default_attack_drops_trained_positive_responses(moons_model):
    positives = two_moons(50, 0.1, make_rng(7)).positives()
    drops = [
        attack_patch(moons_model, x, 1, AttackConfig(), make_rng(8, i)).response_drop
        for i, x in enumerate(positives.x)
    ]
    assert np.median(drops) > 0.2


def test_noise_attack_pushes_toward_a_positive_call():
    config = AttackConfig(epsilon=0.15, alpha=0.05, iterations=20)
    result = attack_from_noise(
        linear_classifier(), (2,), (0.0, 1.0), config, np.random.default_rng(2)
    )

    start = result.extras["start"]
    assert np.all((result.sample >= 0.0) & (result.sample <= 1.0))
    assert result.sample[0] == pytest.approx(min(start[0] + 0.15, 1.0))
    assert result.after > result.before

    with pytest.raises(ConfigError, match="empty value range"):
        attack_from_noise(linear_classifier(), (2,), (1.0, 1.0), config, None)


def test_latent_attack_stays_within_the_latent_ball(rng):
    bundle = build_synthesizer((2,), SynthesizerConfig(hidden=8), make_rng(0, 2))
    z0 = np.array([0.3, -0.2])
    config = AttackConfig(epsilon=0.15, alpha=0.05, iterations=10)
    result = attack_latent(bundle, linear_classifier(), None, z0, config, rng)

    assert result.sample.shape == (2,)
    assert delta_norm(result.code - z0, "linf") <= 0.15 + 1e-12
    assert max(result.norms) <= 0.15 + 1e-12
    assert len(result.trajectory) == 11


def test_latent_attack_fuses_patches_into_the_background(patch_bundle, rng):
    classifier = DenseNet.from_extents([256, 2], ["identity"], make_rng(1))
    background = np.full((16, 16), 0.2)
    config = AttackConfig(iterations=3, mask_threshold=0.5)
    result = attack_latent(
        patch_bundle, classifier, background, np.zeros(8), config, rng
    )

    assert result.sample.shape == (16, 16)
    kept = result.sample <= 0.5
    np.testing.assert_array_equal(result.sample[kept], background[kept])
