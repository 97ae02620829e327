"""
Dense networks, spectral normalization and the checkpoint container.

One class serves as classifier, encoder, generator and critic; the
layer extents and per-layer activations decide which. Weights are
stored (in, out) so a batch is `x @ W + b`.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from advaug import autodiff as ad
from advaug.autodiff import Tensor
from advaug.errors import ConfigError, FormatError, ShapeError
from advaug.util import (
    array_from_payload,
    array_payload,
    canonical_json,
    read_json,
    sha256_text,
    write_json,
)

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "advaug-checkpoint"
CHECKPOINT_VERSION = 1

SIGMA_FLOOR = 1e-12
INIT_KINDS = ("he-uniform", "zeros")


@dataclass
class SpectralState:
    """Persistent power-iteration vectors for one weight matrix."""

    left: np.ndarray  # length fan_in
    right: np.ndarray  # length fan_out
    power_iters: int = 1


def _unit(vector: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vector))
    if norm < SIGMA_FLOOR:
        return fallback
    return vector / norm


def power_iterate(weight: np.ndarray, state: SpectralState, iters: int):
    left, right = state.left, state.right
    for _ in range(iters):
        left = _unit(weight @ right, left)
        right = _unit(weight.T @ left, right)
    return left, right


def spectral_normalize(
    weight: Tensor,
    state: SpectralState,
    power_iters: Optional[int] = None,
    update: bool = True,
) -> Tensor:
    """
    W / sigma_hat with sigma_hat = leftᵀ W right from power iteration.

    The vectors are constants for autodiff; sigma_hat still depends on W
    so gradients see the normalization. With update=False the stored
    vectors are used but not advanced (frozen inference).
    """
    iters = state.power_iters if power_iters is None else power_iters
    if iters < 1:
        raise ConfigError(f"power iterations must be >= 1, got {iters}")
    if weight.ndim != 2:
        raise ShapeError(f"spectral_normalize needs a matrix, got {weight.shape}")

    left, right = power_iterate(weight.data, state, iters)
    if update:
        state.left, state.right = left, right

    row = Tensor(left.reshape(1, -1))
    column = Tensor(right.reshape(-1, 1))
    sigma = ad.reshape(row @ weight @ column, ())
    return weight / ad.maximum(sigma, SIGMA_FLOOR)


@dataclass
class DenseLayer:
    weight: Tensor
    bias: Tensor
    activation: str
    spectral: Optional[SpectralState] = None

    @property
    def fan_in(self) -> int:
        return self.weight.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weight.shape[1]


@dataclass
class DenseNet:
    layers: list[DenseLayer]
    head: Optional[str] = None
    lineage: list[dict] = field(default_factory=list)

    @classmethod
    def from_extents(
        cls,
        extents,
        activations,
        rng: np.random.Generator,
        init: str = "he-uniform",
        spectral: bool = False,
        power_iters: int = 1,
        head: Optional[str] = None,
    ) -> "DenseNet":
        extents = list(extents)
        activations = list(activations)
        if len(extents) < 2 or any(e < 1 for e in extents):
            raise ConfigError(f"invalid layer extents {extents}")
        if len(activations) != len(extents) - 1:
            raise ConfigError(
                f"{len(extents) - 1} layers need as many activations, "
                f"got {len(activations)}"
            )
        if init not in INIT_KINDS:
            raise ConfigError(f"unknown init {init!r}; expected one of {INIT_KINDS}")

        layers = []
        for fan_in, fan_out, kind in zip(extents, extents[1:], activations):
            if kind not in ad.ACTIVATIONS:
                raise ConfigError(f"unknown activation {kind!r}")
            if init == "zeros":
                weight = np.zeros((fan_in, fan_out))
            else:
                limit = math.sqrt(6.0 / fan_in)
                weight = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            state = None
            if spectral:
                state = SpectralState(
                    left=_unit(rng.standard_normal(fan_in), np.ones(fan_in)),
                    right=_unit(rng.standard_normal(fan_out), np.ones(fan_out)),
                    power_iters=power_iters,
                )
            layers.append(
                DenseLayer(
                    weight=Tensor(weight, requires_grad=True),
                    bias=Tensor(np.zeros(fan_out), requires_grad=True),
                    activation=kind,
                    spectral=state,
                )
            )
        return cls(layers=layers, head=head)

    @property
    def extents(self) -> list[int]:
        return [self.layers[0].fan_in] + [layer.fan_out for layer in self.layers]

    @property
    def in_extent(self) -> int:
        return self.layers[0].fan_in

    @property
    def out_extent(self) -> int:
        return self.layers[-1].fan_out

    def parameters(self) -> list[Tensor]:
        params = []
        for layer in self.layers:
            params.extend((layer.weight, layer.bias))
        return params

    def _as_batch(self, x: Tensor) -> tuple[Tensor, bool]:
        d = self.in_extent
        if x.ndim >= 2 and math.prod(x.shape[1:]) == d:
            return ad.reshape(x, (x.shape[0], d)), False
        if x.size == d:
            return ad.reshape(x, (1, d)), True
        raise ShapeError(f"input of shape {x.shape} does not match extent {d}")

    def forward(self, x, update_spectral: bool = False) -> Tensor:
        """A single sample gives a vector, a batch gives (n, out)."""
        h, single = self._as_batch(ad.as_tensor(x))
        for layer in self.layers:
            weight = layer.weight
            if layer.spectral is not None:
                weight = spectral_normalize(
                    weight, layer.spectral, update=update_spectral
                )
            row = ad.reshape(layer.bias, (1, layer.fan_out))
            bias = ad.expand(row, (h.shape[0], layer.fan_out))
            h = ad.activation(layer.activation, h @ weight + bias)
        if single:
            return ad.reshape(h, (self.out_extent,))
        return h

    __call__ = forward

    def predict(self, x) -> np.ndarray:
        """Forward pass outside any tape."""
        with ad.no_grad():
            return self.forward(x).data

    # checkpoint container -----------------------------------------------

    def to_dict(self) -> dict:
        layers = []
        for layer in self.layers:
            entry = {
                "activation": layer.activation,
                "weight": array_payload(layer.weight.data),
                "bias": array_payload(layer.bias.data),
            }
            if layer.spectral is not None:
                entry["spectral"] = {
                    "left": array_payload(layer.spectral.left),
                    "right": array_payload(layer.spectral.right),
                    "power_iters": layer.spectral.power_iters,
                }
            layers.append(entry)
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "extents": self.extents,
            "head": self.head,
            "lineage": self.lineage,
            "layers": layers,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "DenseNet":
        if payload.get("format") != CHECKPOINT_FORMAT:
            raise FormatError(f"not a {CHECKPOINT_FORMAT!r} container")
        if payload.get("version") != CHECKPOINT_VERSION:
            version = payload.get("version")
            raise FormatError(f"unsupported checkpoint version {version!r}")
        try:
            extents = payload["extents"]
            raw_layers = payload["layers"]
            if len(raw_layers) != len(extents) - 1:
                raise FormatError("layer count does not match extents")
            layers = []
            for fan_in, fan_out, raw in zip(extents, extents[1:], raw_layers):
                spectral = None
                if raw.get("spectral") is not None:
                    spectral = SpectralState(
                        left=array_from_payload(raw["spectral"]["left"], (fan_in,)),
                        right=array_from_payload(raw["spectral"]["right"], (fan_out,)),
                        power_iters=int(raw["spectral"]["power_iters"]),
                    )
                layers.append(
                    DenseLayer(
                        weight=Tensor(
                            array_from_payload(raw["weight"], (fan_in, fan_out)),
                            requires_grad=True,
                        ),
                        bias=Tensor(
                            array_from_payload(raw["bias"], (fan_out,)),
                            requires_grad=True,
                        ),
                        activation=raw["activation"],
                        spectral=spectral,
                    )
                )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed checkpoint: {exc!r}")
        return cls(
            layers=layers,
            head=payload.get("head"),
            lineage=payload.get("lineage", []),
        )

    def fingerprint(self) -> str:
        return sha256_text(canonical_json(self.to_dict()))

    def copy(self) -> "DenseNet":
        return DenseNet.from_dict(self.to_dict())

    def load_weights_from(self, other: "DenseNet"):
        """Overwrite parameters (and spectral vectors) in place."""
        for mine, theirs in zip(self.layers, other.layers):
            mine.weight.data = theirs.weight.data.copy()
            mine.bias.data = theirs.bias.data.copy()
            if theirs.spectral is not None:
                mine.spectral = SpectralState(
                    theirs.spectral.left.copy(),
                    theirs.spectral.right.copy(),
                    theirs.spectral.power_iters,
                )

    def save(self, path):
        write_json(path, self.to_dict())
        logger.info("saved checkpoint %s (%s)", path, self.fingerprint()[:12])

    @classmethod
    def load(cls, path) -> "DenseNet":
        return cls.from_dict(read_json(path, CHECKPOINT_FORMAT))
