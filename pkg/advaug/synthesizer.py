"""
Hard-positive synthesizer: a VAE (encoder + generator) trained jointly
against a WGAN-GP critic with spectral-normalized layers.

The encoder emits a mean and a log-sigma per latent unit; the generator
decodes latent codes into points or k x k patches. Encoder and generator
minimize

    L1(x_tilde, x) + lambda_kl * KL(N(mu, sigma^2) || N(0, 1))
        - lambda_adv * (mean D(x_tilde) - mean D(x))

while the critic minimizes the Wasserstein estimate plus the gradient
penalty on random interpolates.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from advaug import autodiff as ad
from advaug.autodiff import Tape, Tensor
from advaug.errors import ConfigError, NonFiniteError, ShapeError
from advaug.networks import DenseNet
from advaug.util import canonical_json, read_json, sha256_text, write_json

logger = logging.getLogger(__name__)

SYNTHESIZER_FORMAT = "advaug-synthesizer"
SYNTHESIZER_VERSION = 1

OutputKind = Literal["points", "patch"]


@dataclass(frozen=True)
class SynthesizerConfig:
    latent_dim: int = 2
    hidden: int = 32
    lambda_kl: float = 1e-5
    lambda_adv: float = 0.1
    gp_weight: float = 10.0
    power_iters: int = 1
    epochs: int = 200
    batch_size: int = 20
    learning_rate: float = 0.001
    output_kind: OutputKind = "points"

    def __post_init__(self):
        if self.latent_dim < 1 or self.hidden < 1:
            raise ConfigError("latent_dim and hidden must be >= 1")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.lambda_kl < 0 or self.lambda_adv < 0 or self.gp_weight < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.power_iters < 1:
            raise ConfigError("power_iters must be >= 1")
        if self.output_kind not in ("points", "patch"):
            raise ConfigError(f"unknown output kind {self.output_kind!r}")

    @classmethod
    def from_settings(cls, **overrides) -> "SynthesizerConfig":
        from django.conf import settings

        if overrides.get("output_kind") == "patch":
            latent_dim = settings.LATENT_DIM_PATCH
        else:
            latent_dim = settings.LATENT_DIM_POINTS
        values = {
            "latent_dim": latent_dim,
            "lambda_kl": settings.SYNTH_LAMBDA_KL,
            "lambda_adv": settings.SYNTH_LAMBDA_ADV,
            "gp_weight": settings.WGAN_GP_WEIGHT,
            "power_iters": settings.SPECTRAL_POWER_ITERS,
            "learning_rate": settings.ADAM_LEARNING_RATE,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass
class LatentCode:
    z: Tensor
    mu: Optional[Tensor] = None
    sigma: Optional[Tensor] = None


@dataclass
class SynthesizerBundle:
    encoder: DenseNet
    generator: DenseNet
    critic: DenseNet
    latent_dim: int
    sample_shape: tuple
    lambda_kl: float = 1e-5
    lambda_adv: float = 0.1
    gp_weight: float = 10.0
    lineage: list = field(default_factory=list)

    def __post_init__(self):
        self.sample_shape = tuple(self.sample_shape)
        if self.generator.in_extent != self.latent_dim:
            raise ShapeError(
                f"generator input {self.generator.in_extent} != latent "
                f"dimension {self.latent_dim}"
            )
        if self.encoder.out_extent != 2 * self.latent_dim:
            raise ShapeError("encoder must emit a mean and a log-sigma per latent unit")
        if self.critic.out_extent != 1:
            raise ShapeError("critic output must be scalar")

    @property
    def sample_extent(self) -> int:
        return math.prod(self.sample_shape)

    def to_dict(self) -> dict:
        return {
            "format": SYNTHESIZER_FORMAT,
            "version": SYNTHESIZER_VERSION,
            "latent_dim": self.latent_dim,
            "sample_shape": list(self.sample_shape),
            "lambda_kl": self.lambda_kl,
            "lambda_adv": self.lambda_adv,
            "gp_weight": self.gp_weight,
            "lineage": self.lineage,
            "encoder": self.encoder.to_dict(),
            "generator": self.generator.to_dict(),
            "critic": self.critic.to_dict(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "SynthesizerBundle":
        return cls(
            encoder=DenseNet.from_dict(payload["encoder"]),
            generator=DenseNet.from_dict(payload["generator"]),
            critic=DenseNet.from_dict(payload["critic"]),
            latent_dim=int(payload["latent_dim"]),
            sample_shape=tuple(payload["sample_shape"]),
            lambda_kl=float(payload["lambda_kl"]),
            lambda_adv=float(payload["lambda_adv"]),
            gp_weight=float(payload["gp_weight"]),
            lineage=payload.get("lineage", []),
        )

    def fingerprint(self) -> str:
        return sha256_text(canonical_json(self.to_dict()))

    def save(self, path):
        write_json(path, self.to_dict())

    @classmethod
    def load(cls, path) -> "SynthesizerBundle":
        return cls.from_dict(read_json(path, SYNTHESIZER_FORMAT))


def build_synthesizer(
    sample_shape, config: SynthesizerConfig, rng: np.random.Generator
) -> SynthesizerBundle:
    sample_shape = tuple(sample_shape)
    d = math.prod(sample_shape)
    h, latent = config.hidden, config.latent_dim
    output = "sigmoid" if config.output_kind == "patch" else "identity"

    encoder = DenseNet.from_extents(
        [d, h, h, 2 * latent], ["relu", "relu", "identity"], rng
    )
    generator = DenseNet.from_extents([latent, h, h, d], ["relu", "relu", output], rng)
    # tanh keeps the penalty's second derivatives smooth
    critic = DenseNet.from_extents(
        [d, h, h, 1],
        ["tanh", "tanh", "identity"],
        rng,
        spectral=True,
        power_iters=config.power_iters,
    )
    return SynthesizerBundle(
        encoder=encoder,
        generator=generator,
        critic=critic,
        latent_dim=latent,
        sample_shape=sample_shape,
        lambda_kl=config.lambda_kl,
        lambda_adv=config.lambda_adv,
        gp_weight=config.gp_weight,
    )


def encode(bundle: SynthesizerBundle, x) -> tuple[Tensor, Tensor]:
    out = bundle.encoder(x)
    d = bundle.latent_dim
    if out.ndim == 1:
        mu, log_sigma = out[:d], out[d:]
    else:
        mu, log_sigma = out[:, :d], out[:, d:]
    return mu, ad.exp(log_sigma)


def decode(bundle: SynthesizerBundle, z) -> Tensor:
    return bundle.generator(z)


def reparameterize(mu: Tensor, sigma: Tensor, rng: np.random.Generator) -> LatentCode:
    if mu.shape != sigma.shape:
        raise ShapeError(f"mu {mu.shape} and sigma {sigma.shape} differ")
    noise = Tensor(rng.standard_normal(mu.shape))
    return LatentCode(z=mu + sigma * noise, mu=mu, sigma=sigma)


def kl_to_standard_normal(mu: Tensor, sigma: Tensor) -> Tensor:
    """Sum over latent units of 0.5 (mu^2 + sigma^2 - 1 - 2 ln sigma); batch mean."""
    terms = 0.5 * (ad.square(mu) + ad.square(sigma) - 1.0 - 2.0 * ad.log(sigma))
    if terms.ndim <= 1:
        return terms.sum()
    return terms.sum(axis=-1).mean()


def wgan_gp_critic_loss(
    d_real: Tensor, d_fake: Tensor, grad_norms: Tensor, gp_weight: float = 10.0
) -> Tensor:
    penalty = ad.square(grad_norms - 1.0).mean()
    return d_fake.mean() - d_real.mean() + gp_weight * penalty


def interpolate_gradient_norms(
    critic: DenseNet,
    real: np.ndarray,
    fake: np.ndarray,
    rng: np.random.Generator,
    tape: Tape,
) -> Tensor:
    """Per-sample norm of grad D at uniform convex combinations of real and fake."""
    if real.ndim != 2 or real.shape != fake.shape:
        raise ShapeError(
            f"expected matching (n, d) batches, got {real.shape} and {fake.shape}"
        )
    n = real.shape[0]
    t = rng.uniform(size=(n, 1))
    point = Tensor(t * real + (1.0 - t) * fake, requires_grad=True)
    with tape:
        score = critic(point).sum()
    (grad,) = tape.gradient(score, [point], create_graph=True)
    with tape:
        return ad.l2_norm(grad, axis=1)


@dataclass
class SynthesizerLosses:
    critic: Tensor
    generator: Tensor
    reconstruction: Tensor
    kl: Tensor
    adversarial: Tensor

    def as_floats(self) -> dict:
        return {name: value.item() for name, value in vars(self).items()}


def synthesizer_total_loss(
    bundle: SynthesizerBundle,
    batch: np.ndarray,
    rng: np.random.Generator,
    tape: Tape,
    training: bool = False,
) -> SynthesizerLosses:
    """Both objectives recorded on one (persistent) tape."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.shape[0] == 0:
        raise ConfigError("synthesizer batch is empty")
    n = batch.shape[0]
    flat = batch.reshape(n, -1)

    with tape:
        x = Tensor(flat)
        mu, sigma = encode(bundle, x)
        code = reparameterize(mu, sigma, rng)
        x_tilde = decode(bundle, code.z)

        reconstruction = ad.absolute(x_tilde - x).sum(axis=1).mean()
        kl = kl_to_standard_normal(mu, sigma)

        d_real = bundle.critic(x, update_spectral=training)
        d_fake = bundle.critic(x_tilde)
        adversarial = d_fake.mean() - d_real.mean()
        generator = (
            reconstruction + bundle.lambda_kl * kl - bundle.lambda_adv * adversarial
        )

        d_fake_fixed = bundle.critic(x_tilde.detach())

    norms = interpolate_gradient_norms(
        bundle.critic, flat, x_tilde.data, rng, tape
    )
    with tape:
        critic = wgan_gp_critic_loss(d_real, d_fake_fixed, norms, bundle.gp_weight)

    return SynthesizerLosses(
        critic=critic,
        generator=generator,
        reconstruction=reconstruction,
        kl=kl,
        adversarial=adversarial,
    )


def train_synthesizer(
    bundle: SynthesizerBundle,
    data: np.ndarray,
    config: SynthesizerConfig,
    rng: np.random.Generator,
) -> list[dict]:
    """
    Per batch: one critic step, then one encoder+generator step, both
    from the same recorded forward pass. Returns per-step loss records.
    """
    from advaug.trainer import Adam

    data = np.asarray(data, dtype=np.float64)
    if data.shape[0] == 0:
        raise ConfigError("no samples to train the synthesizer on")

    critic_params = bundle.critic.parameters()
    model_params = bundle.encoder.parameters() + bundle.generator.parameters()
    critic_opt = Adam(critic_params, lr=config.learning_rate)
    model_opt = Adam(model_params, lr=config.learning_rate)

    history = []
    n = data.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = data[order[start : start + config.batch_size]]
            tape = Tape(persistent=True)
            try:
                losses = synthesizer_total_loss(bundle, batch, rng, tape, training=True)
                critic_grads = tape.gradient(losses.critic, critic_params)
                model_grads = tape.gradient(losses.generator, model_params)
                critic_opt.step(critic_grads)
                model_opt.step(model_grads)
            except NonFiniteError as exc:
                raise NonFiniteError(
                    f"synthesizer diverged in epoch {epoch}: {exc}",
                    batch_index=len(history),
                )
            history.append({"epoch": epoch, **losses.as_floats()})

        if history and (epoch + 1) % 50 == 0:
            last = history[-1]
            logger.info(
                "synthesizer epoch %d: recon %.4f kl %.4f critic %.4f",
                epoch + 1,
                last["reconstruction"],
                last["kl"],
                last["critic"],
            )
    return history


def decode_samples(bundle: SynthesizerBundle, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64).reshape(-1, bundle.latent_dim)
    with ad.no_grad():
        out = decode(bundle, Tensor(z)).data
    return out.reshape((z.shape[0],) + bundle.sample_shape)


def sample_random(
    bundle: SynthesizerBundle, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Decode z ~ N(0, I); the random-sampling counterpart of the latent attack."""
    return decode_samples(bundle, rng.standard_normal((n, bundle.latent_dim)))
