"""
Training loops: Adam, stratified batch composition, baseline training
and fine-tuning with augmentation pools.

A batch is assembled stratum by stratum: the schedule fixes how many
samples each stratum contributes (largest-remainder rounding of its
fraction), and each stratum is drawn from its own shuffled queue without
replacement, refilled when it runs dry. Strata that contribute nothing
to a batch never touch the random stream, so a real-only fine-tune
replays the baseline trajectory exactly.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional

import numpy as np

from advaug.autodiff import Tape, Tensor, no_grad
from advaug.datagen import Dataset
from advaug.errors import ConfigError, NonFiniteError, ShapeError
from advaug.heads import anneal_weight, check_head, confidence, head_loss
from advaug.networks import DenseNet
from advaug.util import make_rng

logger = logging.getLogger(__name__)

MIX_TOLERANCE = 1e-9


# ----------------------------------------------------------------------
# Adam
# ----------------------------------------------------------------------


@dataclass
class OptimizerState:
    first: list[np.ndarray]
    second: list[np.ndarray]
    step: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_shapes(cls, shapes, **hyper) -> "OptimizerState":
        return cls(
            first=[np.zeros(shape) for shape in shapes],
            second=[np.zeros(shape) for shape in shapes],
            **hyper,
        )


def adam_step(state: OptimizerState, params, grads) -> list[np.ndarray]:
    """One bias-corrected Adam update; returns new parameter arrays."""
    params = [np.asarray(p, dtype=np.float64) for p in params]
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    if len(params) != len(grads) or len(params) != len(state.first):
        raise ShapeError(
            f"{len(params)} parameters, {len(grads)} gradients and "
            f"{len(state.first)} moment slots"
        )

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**state.step
    correction2 = 1.0 - b2**state.step

    updated = []
    for i, (param, grad) in enumerate(zip(params, grads)):
        if param.shape != grad.shape or param.shape != state.first[i].shape:
            raise ShapeError(
                f"parameter {i}: shape {param.shape} vs gradient {grad.shape}"
            )
        state.first[i] = b1 * state.first[i] + (1.0 - b1) * grad
        state.second[i] = b2 * state.second[i] + (1.0 - b2) * grad * grad
        m_hat = state.first[i] / correction1
        v_hat = state.second[i] / correction2
        updated.append(
            param - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
        )
    return updated


class Adam:
    """Adam over a fixed list of parameter tensors, updated in place."""

    def __init__(
        self,
        params,
        lr: float = 0.001,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        if lr <= 0:
            raise ConfigError(f"learning rate must be > 0, got {lr}")
        self.params = list(params)
        self.state = OptimizerState.for_shapes(
            [p.shape for p in self.params],
            learning_rate=lr,
            beta1=betas[0],
            beta2=betas[1],
            epsilon=eps,
        )

    def step(self, grads):
        arrays = [g.data if isinstance(g, Tensor) else g for g in grads]
        updated = adam_step(self.state, [p.data for p in self.params], arrays)
        for param, value in zip(self.params, updated):
            if not np.all(np.isfinite(value)):
                raise NonFiniteError(
                    f"Adam step {self.state.step} produced non-finite weights"
                )
            param.data = value


# ----------------------------------------------------------------------
# sampling schedule
# ----------------------------------------------------------------------


def _check_mix(name: str, mix: Mapping[str, float]):
    if not mix:
        raise ConfigError(f"{name} mix is empty")
    if any(value < 0 for value in mix.values()):
        raise ConfigError(f"{name} mix has negative fractions: {dict(mix)}")
    total = sum(mix.values())
    if abs(total - 1.0) > MIX_TOLERANCE:
        raise ConfigError(f"{name} mix sums to {total}, not 1")


@dataclass(frozen=True)
class SamplingSchedule:
    positive: dict = field(default_factory=lambda: {"real": 1.0})
    negative: dict = field(default_factory=lambda: {"real": 1.0})
    positive_fraction: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.positive_fraction <= 1.0:
            raise ConfigError(
                f"positive fraction must be within [0, 1], got {self.positive_fraction}"
            )
        _check_mix("positive", self.positive)
        _check_mix("negative", self.negative)

    @classmethod
    def from_dict(cls, payload: Mapping) -> "SamplingSchedule":
        try:
            return cls(
                positive=dict(payload["positive"]),
                negative=dict(payload["negative"]),
                positive_fraction=float(payload.get("positive_fraction", 0.5)),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed sampling schedule: {exc!r}")

    @classmethod
    def from_settings(cls) -> "SamplingSchedule":
        from django.conf import settings

        return cls.from_dict(settings.SAMPLING_SCHEDULE)

    @classmethod
    def real_only(cls) -> "SamplingSchedule":
        return cls()

    @classmethod
    def poisson(cls) -> "SamplingSchedule":
        """Poisson-noised patches take the noise-negative slots, labels kept."""
        return cls(
            positive={"real": 0.5, "synthetic-pgd": 0.25, "perturbed-positive": 0.25},
            negative={"real": 0.5, "poisson": 0.5},
        )

    def as_dict(self) -> dict:
        return asdict(self)

    def strata(self) -> list[tuple[str, str, float]]:
        """(side, source, batch fraction), positives first, mix order kept."""
        found = []
        for side, mix, share in (
            ("positive", self.positive, self.positive_fraction),
            ("negative", self.negative, 1.0 - self.positive_fraction),
        ):
            for source, fraction in mix.items():
                found.append((side, source, share * fraction))
        return found

    def pool_kinds(self) -> list[str]:
        return sorted(
            {source for _, source, share in self.strata() if share > 0}
            - {"real"}
        )

    def counts(self, batch_size: int) -> list[int]:
        """Per-stratum sample counts summing to batch_size (largest remainder)."""
        if batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {batch_size}")
        exact = [share * batch_size for _, _, share in self.strata()]
        counts = [math.floor(value + MIX_TOLERANCE) for value in exact]
        remainders = [value - count for value, count in zip(exact, counts)]
        order = sorted(range(len(exact)), key=lambda i: (-remainders[i], i))
        for i in order[: batch_size - sum(counts)]:
            counts[i] += 1
        return counts


# ----------------------------------------------------------------------
# configuration and history
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    head: str = "ce"
    patience: int = 10
    anneal_epochs: int = 10
    learning_rate: float = 0.001
    validation_fraction: float = 0.1
    ce_epochs: int = 0
    betas: tuple = (0.9, 0.999)
    adam_epsilon: float = 1e-8

    def __post_init__(self):
        check_head(self.head)
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.anneal_epochs < 0:
            raise ConfigError(f"anneal epochs must be >= 0, got {self.anneal_epochs}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError(
                f"validation fraction must be within [0, 1), "
                f"got {self.validation_fraction}"
            )
        if not 0 <= self.ce_epochs <= self.epochs:
            raise ConfigError(f"ce_epochs must be within [0, {self.epochs}]")
        if self.ce_epochs and self.head != "beta":
            raise ConfigError("CE staging only makes sense before a beta head")
        if len(self.betas) != 2 or not all(0.0 <= b < 1.0 for b in self.betas):
            raise ConfigError(
                f"Adam betas must be two values in [0, 1), got {self.betas}"
            )
        if self.adam_epsilon <= 0:
            raise ConfigError(f"Adam epsilon must be > 0, got {self.adam_epsilon}")

    @classmethod
    def from_settings(cls, **overrides) -> "TrainConfig":
        from django.conf import settings

        values = {
            "batch_size": settings.BATCH_SIZE,
            "patience": settings.EARLY_STOP_PATIENCE,
            "anneal_epochs": settings.BETA_ANNEAL_EPOCHS,
            "learning_rate": settings.ADAM_LEARNING_RATE,
            "betas": tuple(settings.ADAM_BETAS),
            "adam_epsilon": settings.ADAM_EPSILON,
            "validation_fraction": settings.VALIDATION_FRACTION,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def as_dict(self) -> dict:
        return asdict(self)

    def stage_heads(self) -> list[str]:
        return ["ce"] * self.ce_epochs + [self.head] * (self.epochs - self.ce_epochs)


@dataclass
class EpochRecord:
    epoch: int
    head: str
    anneal: float
    train_loss: float
    train_accuracy: float
    validation_loss: Optional[float] = None
    validation_accuracy: Optional[float] = None


@dataclass
class History:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: Optional[int] = None
    stopped_early: bool = False

    def __len__(self):
        return len(self.epochs)

    @property
    def final(self) -> Optional[EpochRecord]:
        return self.epochs[-1] if self.epochs else None

    def to_dict(self) -> dict:
        return {
            "epochs": [asdict(record) for record in self.epochs],
            "best_epoch": self.best_epoch,
            "stopped_early": self.stopped_early,
        }


# ----------------------------------------------------------------------
# batch assembly
# ----------------------------------------------------------------------


@dataclass
class Stratum:
    name: str
    x: np.ndarray
    labels: np.ndarray
    count: int
    queue: list = field(default_factory=list)

    def take(self, rng: np.random.Generator) -> np.ndarray:
        while len(self.queue) < self.count:
            self.queue.extend(rng.permutation(len(self.labels)).tolist())
        taken, self.queue = self.queue[: self.count], self.queue[self.count :]
        return np.asarray(taken, dtype=np.int64)


class BatchSampler:
    def __init__(self, strata: list[Stratum], rng: np.random.Generator):
        self.strata = [s for s in strata if s.count > 0]
        self.rng = rng

    def start_epoch(self):
        for stratum in self.strata:
            stratum.queue = []

    def draw(self) -> tuple[np.ndarray, np.ndarray, list[str]]:
        xs, labels, names = [], [], []
        for stratum in self.strata:
            index = stratum.take(self.rng)
            xs.append(stratum.x[index])
            labels.append(stratum.labels[index])
            names.extend([stratum.name] * len(index))
        return np.concatenate(xs), np.concatenate(labels), names


def _require_both_classes(dataset: Dataset):
    present = set(np.unique(dataset.labels).tolist())
    if present != {0, 1}:
        raise ConfigError(
            f"training needs both classes, dataset has labels {sorted(present)}"
        )


def validation_split(
    dataset: Dataset, fraction: float, rng: np.random.Generator
) -> tuple[Dataset, Optional[Dataset]]:
    """Per-class holdout of floor(fraction * class size) samples."""
    if fraction == 0:
        return dataset, None
    held = []
    for label in (1, 0):
        index = np.flatnonzero(dataset.labels == label)
        n_held = math.floor(fraction * len(index))
        held.extend(index[rng.permutation(len(index))[:n_held]].tolist())
    if not held:
        return dataset, None
    mask = np.zeros(len(dataset), dtype=bool)
    mask[held] = True
    return dataset.subset(np.flatnonzero(~mask)), dataset.subset(np.flatnonzero(mask))


def build_strata(
    train: Dataset,
    pools: Mapping[str, Dataset],
    schedule: SamplingSchedule,
    batch_size: int,
) -> list[Stratum]:
    strata = []
    for (side, source, share), count in zip(
        schedule.strata(), schedule.counts(batch_size)
    ):
        name = f"{side}/{source}"
        if source == "real":
            label = 1 if side == "positive" else 0
            data = train.subset(np.flatnonzero(train.labels == label))
        else:
            data = pools.get(source)
        if share > 0 and (data is None or len(data) == 0):
            raise ConfigError(f"stratum {name} is scheduled but its pool is empty")
        if data is None:
            continue
        if len(data) and data.sample_shape != train.sample_shape:
            raise ShapeError(
                f"pool {source} holds samples of shape {data.sample_shape}, "
                f"training data {train.sample_shape}"
            )
        strata.append(Stratum(name, data.x, data.labels, count))
    return strata


def _accuracy(model: DenseNet, dataset: Dataset, head: str) -> float:
    predicted = confidence(model, dataset.x, head) >= 0.5
    return float(np.mean(predicted == (dataset.labels == 1)))


def _validation_loss(model: DenseNet, dataset: Dataset, head: str) -> float:
    with no_grad():
        return head_loss(model, dataset.x, dataset.labels, head, 1.0).item()


# ----------------------------------------------------------------------
# the loop
# ----------------------------------------------------------------------


def fit(
    model: DenseNet,
    dataset: Dataset,
    pools: Mapping[str, Dataset],
    schedule: SamplingSchedule,
    config: TrainConfig,
) -> History:
    """
    Train `model` in place. With a validation split the weights with the
    best validation loss are restored at the end; the best score resets
    whenever the head changes.
    """
    _require_both_classes(dataset)
    rng = make_rng(config.seed)
    train, validation = validation_split(dataset, config.validation_fraction, rng)
    _require_both_classes(train)

    sampler = BatchSampler(
        build_strata(train, pools, schedule, config.batch_size), rng
    )
    batches_per_epoch = max(1, len(train) // config.batch_size)

    history = History()
    best_loss, best_weights, stale = math.inf, None, 0
    optimizer, stage_head, stage_start = None, None, 0
    batch_index = 0

    for epoch, head in enumerate(config.stage_heads()):
        if head != stage_head:
            stage_head, stage_start = head, epoch
            model.head = head
            optimizer = Adam(
                model.parameters(),
                lr=config.learning_rate,
                betas=config.betas,
                eps=config.adam_epsilon,
            )
            best_loss, best_weights, stale = math.inf, None, 0

        anneal = 1.0
        if head == "beta":
            anneal = anneal_weight(epoch - stage_start, config.anneal_epochs)

        sampler.start_epoch()
        losses = []
        params = model.parameters()
        for _ in range(batches_per_epoch):
            x, labels, _ = sampler.draw()
            try:
                with Tape() as tape:
                    loss = head_loss(model, x, labels, head, anneal)
                optimizer.step(tape.gradient(loss, params))
            except NonFiniteError as exc:
                raise NonFiniteError(
                    f"training diverged at batch {batch_index} (epoch {epoch}): {exc}",
                    batch_index=batch_index,
                )
            losses.append(loss.item())
            batch_index += 1

        record = EpochRecord(
            epoch=epoch,
            head=head,
            anneal=anneal,
            train_loss=float(np.mean(losses)),
            train_accuracy=_accuracy(model, train, head),
        )
        if validation is not None:
            record.validation_loss = _validation_loss(model, validation, head)
            record.validation_accuracy = _accuracy(model, validation, head)
        history.epochs.append(record)
        logger.info(
            "epoch %d [%s] loss %.4f acc %.3f val %s",
            epoch,
            head,
            record.train_loss,
            record.train_accuracy,
            "-" if record.validation_loss is None else f"{record.validation_loss:.4f}",
        )

        if validation is None:
            continue
        if record.validation_loss < best_loss:
            best_loss, stale = record.validation_loss, 0
            best_weights = model.copy()
            history.best_epoch = epoch
            continue
        stale += 1
        # a pending head switch starts a fresh stage; only stop inside the last one
        if stale >= config.patience and head == config.head:
            history.stopped_early = True
            logger.info("early stop at epoch %d (best %d)", epoch, history.best_epoch)
            break

    if best_weights is not None:
        model.load_weights_from(best_weights)
    return history


def train_baseline(
    model: DenseNet, dataset: Dataset, config: TrainConfig
) -> tuple[DenseNet, History]:
    """Balanced real-only training (half positives, half negatives per batch)."""
    parent = model.fingerprint()
    history = fit(model, dataset, {}, SamplingSchedule.real_only(), config)
    model.lineage = model.lineage + [
        {"stage": "baseline", "parent": parent, "config": config.as_dict()}
    ]
    return model, history


def finetune_augmented(
    model: DenseNet,
    dataset: Dataset,
    pools: Mapping[str, Dataset],
    schedule: SamplingSchedule,
    config: TrainConfig,
    pool_fingerprints: Optional[Mapping[str, str]] = None,
) -> tuple[DenseNet, History]:
    parent = model.fingerprint()
    history = fit(model, dataset, pools, schedule, config)
    model.lineage = model.lineage + [
        {
            "stage": "finetune",
            "parent": parent,
            "config": config.as_dict(),
            "schedule": schedule.as_dict(),
            "pools": dict(pool_fingerprints or {}),
        }
    ]
    return model, history
