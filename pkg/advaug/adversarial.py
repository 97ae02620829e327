"""
Projected gradient ascent and the three attack modes built on it:

  * latent: search a generator's input code for samples the classifier
    gets wrong (hard synthetic positives),
  * patch: perturb real samples within a small ball,
  * noise: start from uniform noise and push it toward a positive call.

The perturbation delta is always the leaf being optimized; the ball
bounds delta alone and is re-applied after every step, the last one
included.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Literal, Optional

import numpy as np

from advaug import autodiff as ad
from advaug.autodiff import Tape, Tensor
from advaug.errors import ConfigError, NonFiniteError, ShapeError
from advaug.heads import confidence, head_loss
from advaug.networks import DenseNet
from advaug.synthesizer import SynthesizerBundle, decode

logger = logging.getLogger(__name__)

Norm = Literal["linf", "l2"]
Init = Literal["zero", "random"]
Step = Literal["gradient", "sign"]

NORMS = ("linf", "l2")
INITS = ("zero", "random")
STEPS = ("gradient", "sign")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 0.15
    alpha: float = 0.05
    iterations: int = 20
    norm: Norm = "linf"
    init: Init = "random"
    step: Step = "sign"
    target_label: Optional[int] = None
    success_threshold: float = 0.5
    mask_threshold: Optional[float] = None

    def __post_init__(self):
        # epsilon == 0 is allowed and pins delta at zero
        if self.epsilon < 0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.norm not in NORMS:
            raise ConfigError(f"unknown norm {self.norm!r}; expected one of {NORMS}")
        if self.init not in INITS:
            raise ConfigError(f"unknown init {self.init!r}; expected one of {INITS}")
        if self.step not in STEPS:
            raise ConfigError(f"unknown step {self.step!r}; expected one of {STEPS}")
        if self.target_label not in (None, 0, 1):
            raise ConfigError(f"target label must be 0 or 1, got {self.target_label}")

    @classmethod
    def from_settings(cls, **overrides) -> "AttackConfig":
        from django.conf import settings

        values = {
            "epsilon": settings.PGD_EPSILON,
            "alpha": settings.PGD_ALPHA,
            "iterations": settings.PGD_ITERATIONS,
            "norm": settings.PGD_NORM,
            "init": settings.PGD_INIT,
            "step": settings.PGD_STEP,
            "success_threshold": settings.ATTACK_SUCCESS_THRESHOLD,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def as_dict(self) -> dict:
        return asdict(self)

    def label_for(self, default: int) -> int:
        return default if self.target_label is None else self.target_label


@dataclass
class AttackResult:
    delta: np.ndarray
    trajectory: list[float]
    norms: list[float]
    before: float = float("nan")
    after: float = float("nan")
    success: bool = False
    sample: Optional[np.ndarray] = None
    code: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict)

    @property
    def response_drop(self) -> float:
        return self.before - self.after


def delta_norm(delta: np.ndarray, norm: str) -> float:
    if norm == "linf":
        return float(np.max(np.abs(delta))) if delta.size else 0.0
    return float(np.linalg.norm(delta.reshape(-1)))


def project(delta, epsilon: float, norm: str = "linf"):
    """Nearest point of the epsilon-ball; leaves points inside untouched."""
    if epsilon < 0:
        raise ConfigError(f"epsilon must be >= 0, got {epsilon}")
    if norm not in NORMS:
        raise ConfigError(f"unknown norm {norm!r}")

    as_tensor = isinstance(delta, Tensor)
    array = delta.data if as_tensor else np.asarray(delta, dtype=np.float64)

    if norm == "linf":
        projected = np.clip(array, -epsilon, epsilon)
    else:
        length = float(np.linalg.norm(array.reshape(-1)))
        if length > epsilon:
            projected = array * (epsilon / length)
        else:
            projected = array.copy()

    return Tensor(projected) if as_tensor else projected


def _initial_delta(shape, config: AttackConfig, rng: np.random.Generator):
    if config.init == "zero" or config.epsilon == 0:
        return np.zeros(shape)
    return project(
        rng.uniform(-config.epsilon, config.epsilon, size=shape),
        config.epsilon,
        config.norm,
    )


def _ascent_step(grad: np.ndarray, config: AttackConfig) -> np.ndarray:
    if config.step == "sign":
        return config.alpha * np.sign(grad)
    return config.alpha * grad


def pgd_maximize(
    loss_fn: Callable[[Tensor], Tensor],
    shape,
    config: AttackConfig,
    rng: np.random.Generator,
    constrain: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> AttackResult:
    """
    delta <- P(delta + alpha * sign(grad L(delta))), `iterations` times;
    `step="gradient"` uses the raw gradient instead of its sign.

    The trajectory holds the loss at every iterate including the final
    one. `constrain` runs after each projection and must keep delta
    inside the ball (clamping toward zero does).
    """
    delta = _initial_delta(shape, config, rng)
    if constrain is not None:
        delta = constrain(delta)

    trajectory: list[float] = []
    norms = [delta_norm(delta, config.norm)]

    for iteration in range(config.iterations):
        try:
            leaf = Tensor(delta, requires_grad=True)
            with Tape() as tape:
                loss = loss_fn(leaf)
            (grad,) = tape.gradient(loss, [leaf])
        except NonFiniteError as exc:
            raise NonFiniteError(
                f"attack diverged at iteration {iteration}: {exc}",
                iteration=iteration,
            )
        trajectory.append(loss.item())

        delta = project(
            delta + _ascent_step(grad.data, config), config.epsilon, config.norm
        )
        if constrain is not None:
            delta = constrain(delta)
        norms.append(delta_norm(delta, config.norm))

    try:
        with ad.no_grad():
            trajectory.append(loss_fn(Tensor(delta)).item())
    except NonFiniteError as exc:
        raise NonFiniteError(
            f"attack diverged at iteration {config.iterations}: {exc}",
            iteration=config.iterations,
        )

    return AttackResult(delta=delta, trajectory=trajectory, norms=norms)


def threshold_mask(
    x_tilde, threshold: Optional[float] = None, value_range=(0.0, 1.0)
) -> np.ndarray:
    """1 where x_tilde exceeds the threshold (default: mid-range), else 0. Constant."""
    array = x_tilde.data if isinstance(x_tilde, Tensor) else np.asarray(x_tilde)
    if threshold is None:
        threshold = 0.5 * (value_range[0] + value_range[1])
    return (array > threshold).astype(np.float64)


def fuse(x_tilde, x, mask) -> Tensor:
    """x_tilde * m + x * (1 - m); differentiable in x_tilde only."""
    x_tilde = ad.as_tensor(x_tilde)
    background = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if not (x_tilde.shape == background.shape == mask.shape):
        raise ShapeError(
            f"fuse needs matching shapes, got {x_tilde.shape}, "
            f"{background.shape} and {mask.shape}"
        )
    return x_tilde * Tensor(mask) + Tensor(background * (1.0 - mask))


def _response(classifier: DenseNet, x, head) -> float:
    return float(confidence(classifier, x, head)[0])


def _finish(result: AttackResult, before: float, after: float, config, label):
    result.before = before
    result.after = after
    if label == 1:
        result.success = after < config.success_threshold
    else:
        result.success = after >= config.success_threshold
    return result


def attack_latent(
    bundle: SynthesizerBundle,
    classifier: DenseNet,
    background: Optional[np.ndarray],
    z0: np.ndarray,
    config: AttackConfig,
    rng: np.random.Generator,
    head=None,
    value_range=(0.0, 1.0),
) -> AttackResult:
    """
    Maximize the classifier loss for label 1 over the latent offset.
    Patch generators are fused into `background` through the threshold
    mask; point generators have no background and are used as decoded.
    """
    z0 = np.asarray(z0, dtype=np.float64).reshape(bundle.latent_dim)
    label = config.label_for(1)
    shape = bundle.sample_shape

    def synthesize(delta: Tensor) -> Tensor:
        z = Tensor(z0) + delta
        x_tilde = ad.reshape(decode(bundle, z), shape)
        if background is None:
            return x_tilde
        mask = threshold_mask(x_tilde, config.mask_threshold, value_range)
        return fuse(x_tilde, background, mask)

    def loss_fn(delta: Tensor) -> Tensor:
        return head_loss(classifier, synthesize(delta), [label], head)

    with ad.no_grad():
        start = synthesize(Tensor(np.zeros(bundle.latent_dim))).data
    result = pgd_maximize(loss_fn, (bundle.latent_dim,), config, rng)
    with ad.no_grad():
        sample = synthesize(Tensor(result.delta)).data

    result.sample = sample
    result.code = z0 + result.delta
    return _finish(
        result,
        _response(classifier, start, head),
        _response(classifier, sample, head),
        config,
        label,
    )


def attack_patch(
    classifier: DenseNet,
    x: np.ndarray,
    label: int,
    config: AttackConfig,
    rng: np.random.Generator,
    head=None,
    value_range=None,
) -> AttackResult:
    """Input-space attack on a real sample against its own label."""
    x = np.asarray(x, dtype=np.float64)
    label = config.label_for(label)

    constrain = None
    if value_range is not None:
        low, high = value_range

        def constrain(delta):
            return np.clip(x + delta, low, high) - x

    def loss_fn(delta: Tensor) -> Tensor:
        return head_loss(classifier, Tensor(x) + delta, [label], head)

    result = pgd_maximize(loss_fn, x.shape, config, rng, constrain)
    result.sample = x + result.delta
    return _finish(
        result,
        _response(classifier, x, head),
        _response(classifier, result.sample, head),
        config,
        label,
    )


def attack_from_noise(
    classifier: DenseNet,
    shape,
    value_range,
    config: AttackConfig,
    rng: np.random.Generator,
    head=None,
) -> AttackResult:
    """
    Start from uniform noise and ascend the loss of label 0, i.e. push
    the classifier toward a positive call. Every iterate stays within
    value_range.
    """
    low, high = value_range
    if not low < high:
        raise ConfigError(f"empty value range {value_range}")
    start = rng.uniform(low, high, size=tuple(shape))
    result = attack_patch(
        classifier,
        start,
        0,
        config,
        rng,
        head,
        value_range=(low, high),
    )
    result.extras["start"] = start
    return result
