"""
Classifier heads on a two-unit output layer.

Column 0 carries positive evidence, column 1 negative. The
cross-entropy head reads sigmoid(o_pos - o_neg); the beta head maps both
outputs through softplus and reads the Beta mean alpha / (alpha + beta).
Switching a trained CE model to the beta head is therefore a pure head
change, which is how the CE-then-beta staging works.
"""

from dataclasses import dataclass
from typing import Literal, Union

import numpy as np

from advaug import autodiff as ad
from advaug.autodiff import Tensor
from advaug.errors import ConfigError, ShapeError
from advaug.networks import DenseNet

HeadKind = Literal["ce", "beta"]
HEADS = ("ce", "beta")

PROBABILITY_CLAMP = 1e-7


@dataclass(frozen=True)
class EvidenceOutput:
    e_pos: Tensor
    e_neg: Tensor

    @property
    def alpha(self) -> Tensor:
        return self.e_pos + 1.0

    @property
    def beta(self) -> Tensor:
        return self.e_neg + 1.0

    @property
    def strength(self) -> Tensor:
        return self.alpha + self.beta

    @property
    def confidence(self) -> Tensor:
        return self.alpha / self.strength

    @property
    def uncertainty(self) -> Tensor:
        return 2.0 / self.strength


def check_head(head: str) -> str:
    if head not in HEADS:
        raise ConfigError(f"unknown head {head!r}; expected one of {HEADS}")
    return head


def resolve_head(model: DenseNet, head=None) -> str:
    return check_head(head or model.head or "ce")


def classify(model: DenseNet, x, head=None) -> Union[Tensor, EvidenceOutput]:
    head = resolve_head(model, head)
    if model.out_extent != 2:
        raise ShapeError(f"classifier needs 2 output units, has {model.out_extent}")

    out = model(x)
    if out.ndim == 1:
        pos, neg = out[0], out[1]
    else:
        pos, neg = out[:, 0], out[:, 1]

    if head == "ce":
        return ad.sigmoid(pos - neg)
    return EvidenceOutput(e_pos=ad.softplus(pos), e_neg=ad.softplus(neg))


def confidence(model: DenseNet, x, head=None) -> np.ndarray:
    """Scalar positive-class readout per sample, outside any tape."""
    with ad.no_grad():
        result = classify(model, x, head)
        if isinstance(result, EvidenceOutput):
            result = result.confidence
    return np.atleast_1d(result.data).copy()


def _labels_like(labels, like: Tensor) -> Tensor:
    g = np.asarray(labels, dtype=np.float64).reshape(like.shape)
    if not np.all((g == 0.0) | (g == 1.0)):
        raise ConfigError("labels must be 0 or 1")
    return Tensor(g)


def loss_cross_entropy(p: Tensor, labels) -> Tensor:
    """Mean of -g log p - (1 - g) log(1 - p), p clamped to [1e-7, 1 - 1e-7]."""
    g = _labels_like(labels, p)
    p = ad.clamp(p, PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP)
    per_sample = -(g * ad.log(p) + (1.0 - g) * ad.log(1.0 - p))
    return per_sample.mean()


def anneal_weight(epoch: int, anneal_epochs: int) -> float:
    if anneal_epochs <= 0:
        return 1.0
    return min(1.0, epoch / anneal_epochs)


def beta_kl_to_uniform(a: Tensor, b: Tensor) -> Tensor:
    """KL(Beta(a, b) || Beta(1, 1)), elementwise."""
    total = a + b
    digamma_total = ad.digamma(total)
    return (
        ad.lgamma(total)
        - ad.lgamma(a)
        - ad.lgamma(b)
        + (a - 1.0) * (ad.digamma(a) - digamma_total)
        + (b - 1.0) * (ad.digamma(b) - digamma_total)
    )


def loss_beta_evidence(evidence: EvidenceOutput, labels, anneal: float = 1.0) -> Tensor:
    """
    Expected squared error of the one-hot target under Beta(alpha, beta),
    plus `anneal` times the KL to the uniform Beta after removing the
    evidence that supports the true class.
    """
    g = _labels_like(labels, evidence.e_pos)
    alpha, beta = evidence.alpha, evidence.beta
    strength = alpha + beta
    p_pos = alpha / strength
    p_neg = beta / strength

    error = ad.square(g - p_pos) + ad.square((1.0 - g) - p_neg)
    variance = (p_pos * (1.0 - p_pos) + p_neg * (1.0 - p_neg)) / (strength + 1.0)
    per_sample = error + variance

    if anneal > 0.0:
        misleading_pos = alpha * (1.0 - g) + g
        misleading_neg = beta * g + (1.0 - g)
        per_sample = per_sample + anneal * beta_kl_to_uniform(
            misleading_pos, misleading_neg
        )
    return per_sample.mean()


def head_loss(model: DenseNet, x, labels, head=None, anneal: float = 1.0) -> Tensor:
    head = resolve_head(model, head)
    result = classify(model, x, head)
    if head == "ce":
        return loss_cross_entropy(result, labels)
    return loss_beta_evidence(result, labels, anneal)
