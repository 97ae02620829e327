"""
Augmentation pools: batches of attacked or synthesized samples generated
against one frozen classifier.

Record i draws from its own generator seeded by child i of the pool's
master SeedSequence, and records are collected by index, so a pool is
bitwise the same whatever the worker count.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from advaug.adversarial import (
    AttackConfig,
    attack_from_noise,
    attack_latent,
    attack_patch,
    fuse,
    threshold_mask,
)
from advaug.datagen import Dataset, poisson_noise_inject
from advaug.errors import ConfigError, FormatError
from advaug.heads import confidence
from advaug.networks import DenseNet
from advaug.synthesizer import SynthesizerBundle, decode_samples
from advaug.util import (
    array_from_payload,
    array_payload,
    fingerprint,
    read_json,
    spawn_seeds,
    write_json,
)

logger = logging.getLogger(__name__)

POOL_FORMAT = "advaug-pool"
POOL_VERSION = 1

# kind -> label of its records (None: the source sample's own label)
POOL_LABELS = {
    "synthetic-random": 1,
    "synthetic-pgd": 1,
    "perturbed-positive": 1,
    "perturbed-negative": 0,
    "noise-negative": 0,
    "noise-uniform": 0,
    "poisson": None,
}
POOL_KINDS = tuple(POOL_LABELS)

NEEDS_SYNTHESIZER = ("synthetic-random", "synthetic-pgd")


@dataclass
class PoolRecord:
    index: int
    payload: np.ndarray
    label: int
    seed: int
    source: Optional[int] = None
    before: float = 0.0
    after: float = 0.0
    success: bool = False
    code: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        entry = {
            "index": self.index,
            "label": self.label,
            "seed": self.seed,
            "source": self.source,
            "before": self.before,
            "after": self.after,
            "success": self.success,
            "payload": array_payload(self.payload.reshape(-1)),
        }
        if self.code is not None:
            entry["code"] = array_payload(self.code)
        return entry

    @classmethod
    def from_dict(cls, raw: dict, sample_shape) -> "PoolRecord":
        code = raw.get("code")
        return cls(
            index=int(raw["index"]),
            payload=array_from_payload(raw["payload"], sample_shape),
            label=int(raw["label"]),
            seed=int(raw["seed"]),
            source=raw.get("source"),
            before=float(raw["before"]),
            after=float(raw["after"]),
            success=bool(raw["success"]),
            code=None if code is None else array_from_payload(code),
        )


@dataclass
class AugmentationPool:
    kind: str
    sample_shape: tuple
    records: list[PoolRecord]
    model_fingerprint: str
    config: dict
    seed: int
    fingerprint: str
    lineage: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def payloads(self) -> np.ndarray:
        if not self.records:
            return np.zeros((0, *self.sample_shape))
        return np.stack([record.payload for record in self.records])

    def as_dataset(self) -> Dataset:
        return Dataset(
            x=self.payloads(),
            labels=np.asarray([r.label for r in self.records], dtype=np.int64),
            sources=(self.kind,) * len(self.records),
        )

    def success_rate(self) -> float:
        if not self.records:
            return 0.0
        return float(np.mean([r.success for r in self.records]))

    def to_dict(self) -> dict:
        return {
            "format": POOL_FORMAT,
            "version": POOL_VERSION,
            "kind": self.kind,
            "sample_shape": list(self.sample_shape),
            "model_fingerprint": self.model_fingerprint,
            "config": self.config,
            "seed": self.seed,
            "fingerprint": self.fingerprint,
            "lineage": self.lineage,
            "records": [record.to_dict() for record in self.records],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "AugmentationPool":
        if payload.get("version") != POOL_VERSION:
            raise FormatError(f"unsupported pool version {payload.get('version')!r}")
        try:
            shape = tuple(payload["sample_shape"])
            return cls(
                kind=payload["kind"],
                sample_shape=shape,
                records=[PoolRecord.from_dict(r, shape) for r in payload["records"]],
                model_fingerprint=payload["model_fingerprint"],
                config=payload["config"],
                seed=int(payload["seed"]),
                fingerprint=payload["fingerprint"],
                lineage=payload.get("lineage", {}),
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed pool: {exc!r}")

    def save(self, path):
        write_json(path, self.to_dict())

    @classmethod
    def load(cls, path) -> "AugmentationPool":
        return cls.from_dict(read_json(path, POOL_FORMAT))


def pool_fingerprint(model_fingerprint: str, config: dict, seed: int) -> str:
    return fingerprint(model_fingerprint, config, int(seed))


@dataclass(frozen=True)
class PoolRequest:
    kind: str
    count: int
    seed: int
    attack: AttackConfig = field(default_factory=AttackConfig)
    value_range: tuple = (0.0, 1.0)
    head: Optional[str] = None
    poisson_scale: float = 50.0
    clamp: bool = True

    def __post_init__(self):
        if self.kind not in POOL_KINDS:
            raise ConfigError(f"unknown pool kind {self.kind!r}; expected {POOL_KINDS}")
        if self.count < 0:
            raise ConfigError(f"pool size must be >= 0, got {self.count}")

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "count": self.count,
            "attack": self.attack.as_dict(),
            "value_range": list(self.value_range),
            "head": self.head,
            "poisson_scale": self.poisson_scale,
            "clamp": self.clamp,
        }


class PoolBuilder:
    """Generates single records; shared read-only across worker threads."""

    def __init__(
        self,
        request: PoolRequest,
        classifier: DenseNet,
        bundle: Optional[SynthesizerBundle] = None,
        dataset: Optional[Dataset] = None,
    ):
        self.request = request
        self.classifier = classifier
        self.bundle = bundle
        self.dataset = dataset
        kind = request.kind

        if kind in NEEDS_SYNTHESIZER and bundle is None:
            raise ConfigError(f"{kind} pools need a trained synthesizer")
        self.sources = None
        if kind == "perturbed-positive":
            self.sources = self._source_index(label=1)
        elif kind == "perturbed-negative":
            self.sources = self._source_index(label=0)
        elif kind == "poisson":
            self.sources = self._source_index(label=None)
        elif kind in NEEDS_SYNTHESIZER and self._needs_background:
            self.sources = self._source_index(label=0)

    @property
    def _needs_background(self) -> bool:
        return self.bundle is not None and len(self.bundle.sample_shape) > 1

    def _source_index(self, label) -> np.ndarray:
        if self.dataset is None:
            raise ConfigError(f"{self.request.kind} pools need source samples")
        if label is None:
            index = np.arange(len(self.dataset))
        else:
            index = np.flatnonzero(self.dataset.labels == label)
        if index.size == 0:
            raise ConfigError(f"no source samples for a {self.request.kind} pool")
        return index

    def sample_shape(self) -> tuple:
        if self.bundle is not None and self.request.kind in NEEDS_SYNTHESIZER:
            return self.bundle.sample_shape
        if self.dataset is not None:
            return self.dataset.sample_shape
        return (self.classifier.in_extent,)

    def _response(self, x) -> float:
        return float(confidence(self.classifier, x, self.request.head)[0])

    def build(self, index: int, seed: int) -> PoolRecord:
        request = self.request
        rng = np.random.default_rng(seed)
        kind = request.kind
        label = POOL_LABELS[kind]

        source = None
        background = None
        if self.sources is not None:
            if kind in NEEDS_SYNTHESIZER:
                source = int(self.sources[rng.integers(len(self.sources))])
                background = self.dataset.x[source]
            else:
                source = int(self.sources[index % len(self.sources)])

        if kind == "synthetic-random":
            code = rng.standard_normal(self.bundle.latent_dim)
            sample = decode_samples(self.bundle, code)[0]
            if background is not None:
                mask = threshold_mask(
                    sample, request.attack.mask_threshold, request.value_range
                )
                sample = fuse(sample, background, mask).data
            response = self._response(sample)
            return PoolRecord(
                index, sample, label, seed, source, response, response, False, code
            )

        if kind == "synthetic-pgd":
            z0 = rng.standard_normal(self.bundle.latent_dim)
            result = attack_latent(
                self.bundle,
                self.classifier,
                background,
                z0,
                request.attack,
                rng,
                request.head,
                request.value_range,
            )
        elif kind in ("perturbed-positive", "perturbed-negative"):
            x = self.dataset.x[source]
            result = attack_patch(
                self.classifier,
                x,
                label,
                request.attack,
                rng,
                request.head,
                request.value_range if request.clamp else None,
            )
        elif kind == "noise-negative":
            result = attack_from_noise(
                self.classifier,
                self.sample_shape(),
                request.value_range,
                request.attack,
                rng,
                request.head,
            )
        else:
            if kind == "noise-uniform":
                low, high = request.value_range
                sample = rng.uniform(low, high, size=self.sample_shape())
            else:
                sample = poisson_noise_inject(
                    self.dataset.x[source], request.poisson_scale, rng
                )
                label = int(self.dataset.labels[source])
            response = self._response(sample)
            return PoolRecord(index, sample, label, seed, source, response, response)

        return PoolRecord(
            index=index,
            payload=result.sample,
            label=label,
            seed=seed,
            source=source,
            before=result.before,
            after=result.after,
            success=result.success,
            code=result.code,
        )


def generate_pool(
    request: PoolRequest,
    classifier: DenseNet,
    bundle: Optional[SynthesizerBundle] = None,
    dataset: Optional[Dataset] = None,
    workers: int = 1,
) -> AugmentationPool:
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")
    builder = PoolBuilder(request, classifier, bundle, dataset)
    seeds = spawn_seeds(request.seed, request.count)

    if workers == 1 or request.count < 2:
        records = [builder.build(i, s) for i, s in enumerate(seeds)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            records = list(executor.map(builder.build, range(len(seeds)), seeds))

    config = request.as_dict()
    lineage = {}
    if bundle is not None and request.kind in NEEDS_SYNTHESIZER:
        lineage["synthesizer"] = bundle.fingerprint()
        config["synthesizer"] = lineage["synthesizer"]
    if dataset is not None and builder.sources is not None:
        lineage["source_samples"] = len(builder.sources)

    model_fp = classifier.fingerprint()
    pool = AugmentationPool(
        kind=request.kind,
        sample_shape=builder.sample_shape(),
        records=records,
        model_fingerprint=model_fp,
        config=config,
        seed=request.seed,
        fingerprint=pool_fingerprint(model_fp, config, request.seed),
        lineage=lineage,
    )
    logger.info(
        "%s pool: %d records, success rate %.2f",
        request.kind,
        len(pool),
        pool.success_rate(),
    )
    return pool
