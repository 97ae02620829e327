"""
Procedural datasets: the two-moons toy, blob patches standing in for
CT candidate patches, and the uniform / Poisson noise protocols.

Every generator is a pure function of its arguments and the injected
numpy Generator.
"""

import io
from collections import namedtuple
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from scipy import ndimage
from sklearn.datasets import make_moons

from advaug.errors import ConfigError, DomainError, FormatError
from advaug.util import (
    array_from_payload,
    array_payload,
    atomic_write_text,
    read_json,
    write_json,
)

DATASET_FORMAT = "advaug-dataset"
DATASET_VERSION = 1
POINT_COLUMNS = ["x1", "x2", "label", "source"]

Blob = namedtuple("Blob", ["row", "col", "radius", "intensity", "relevant"])


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    labels: np.ndarray
    sources: tuple
    arc: Optional[np.ndarray] = None

    def __post_init__(self):
        if not (len(self.x) == len(self.labels) == len(self.sources)):
            raise ConfigError("x, labels and sources must have the same length")

    def __len__(self):
        return len(self.labels)

    @property
    def sample_shape(self) -> tuple:
        return tuple(self.x.shape[1:])

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(
            x=self.x[index],
            labels=self.labels[index],
            sources=tuple(np.asarray(self.sources, dtype=object)[index]),
            arc=None if self.arc is None else self.arc[index],
        )

    def positives(self) -> "Dataset":
        return self.subset(np.flatnonzero(self.labels == 1))

    def negatives(self) -> "Dataset":
        return self.subset(np.flatnonzero(self.labels == 0))


def concat(datasets) -> Dataset:
    datasets = list(datasets)
    arcs = [d.arc for d in datasets]
    return Dataset(
        x=np.concatenate([d.x for d in datasets]),
        labels=np.concatenate([d.labels for d in datasets]),
        sources=tuple(s for d in datasets for s in d.sources),
        arc=None if any(a is None for a in arcs) else np.concatenate(arcs),
    )


# ----------------------------------------------------------------------
# two moons
# ----------------------------------------------------------------------


def two_moons(n_per_class: int, noise_std: float, rng: np.random.Generator) -> Dataset:
    """
    Label 1 is the lower (inner) moon. `arc` runs 0..1 along each moon
    in construction order.
    """
    if n_per_class < 1:
        raise ConfigError(f"n per class must be >= 1, got {n_per_class}")
    if noise_std < 0:
        raise ConfigError(f"noise std must be >= 0, got {noise_std}")

    x, labels = make_moons(n_samples=(n_per_class, n_per_class), shuffle=False)
    if noise_std > 0:
        x = x + rng.normal(scale=noise_std, size=x.shape)

    arc = np.linspace(0.0, 1.0, n_per_class) if n_per_class > 1 else np.zeros(1)
    return Dataset(
        x=x,
        labels=labels.astype(np.int64),
        sources=("real",) * len(labels),
        arc=np.concatenate([arc, arc]),
    )


def positive_moon_distance(points: np.ndarray) -> np.ndarray:
    """Distance from each point to the noiseless positive half-circle."""
    points = np.atleast_2d(points)
    dx = points[:, 0] - 1.0
    dy = points[:, 1] - 0.5
    radial = np.abs(np.hypot(dx, dy) - 1.0)
    # the arc is the lower half; above the centre the nearest point is an end
    ends = np.minimum(np.hypot(points[:, 0], dy), np.hypot(points[:, 0] - 2.0, dy))
    return np.where(dy <= 0, radial, ends)


def longtail_subsample(
    arc: np.ndarray, k: int, rng: np.random.Generator, rate: float = 3.0
) -> np.ndarray:
    """Indices of k samples drawn without replacement, weight exp(-rate * arc)."""
    arc = np.asarray(arc, dtype=np.float64)
    if k < 0 or k > len(arc):
        raise ConfigError(f"cannot subsample {k} of {len(arc)}")
    if k == len(arc):
        return np.arange(len(arc))
    weights = np.exp(-rate * arc)
    chosen = rng.choice(len(arc), size=k, replace=False, p=weights / weights.sum())
    return np.sort(chosen)


def subsample_positives(
    dataset: Dataset, k: int, rng: np.random.Generator, rate: float = 3.0
) -> Dataset:
    positive_index = np.flatnonzero(dataset.labels == 1)
    if dataset.arc is None:
        raise ConfigError("long-tail subsampling needs the arc parameter")
    keep = positive_index[longtail_subsample(dataset.arc[positive_index], k, rng, rate)]
    mask = dataset.labels == 0
    mask[keep] = True
    return dataset.subset(np.flatnonzero(mask))


# ----------------------------------------------------------------------
# blob patches and scenes
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class PatchScene:
    image: np.ndarray
    background: np.ndarray
    blobs: tuple

    @property
    def ground_truth(self) -> list:
        return [blob for blob in self.blobs if blob.relevant]


def smooth_background(
    size: int, rng: np.random.Generator, level: float = 0.2, amplitude: float = 0.05
) -> np.ndarray:
    noise = ndimage.gaussian_filter(
        rng.standard_normal((size, size)), sigma=size / 8, mode="wrap"
    )
    noise = noise / (noise.std() or 1.0)
    return np.clip(level + amplitude * noise, 0.0, 1.0)


def render_blobs(background: np.ndarray, blobs) -> np.ndarray:
    rows, cols = np.indices(background.shape)
    image = background.astype(np.float64).copy()
    for blob in blobs:
        spread = blob.radius / 2.0
        distance2 = (rows - blob.row) ** 2 + (cols - blob.col) ** 2
        image += blob.intensity * np.exp(-distance2 / (2.0 * spread**2))
    return np.clip(image, 0.0, 1.0)


def blob_scene(
    patch_size: int,
    n_blobs: int,
    radius_range,
    rng: np.random.Generator,
    min_radius: float = 2.0,
    n_distractors: int = 0,
) -> PatchScene:
    """
    Relevant blobs have radius in radius_range (never below min_radius);
    distractors are smaller findings kept in the scene but flagged as
    irrelevant.
    """
    low, high = radius_range
    if low < min_radius:
        raise ConfigError(f"radius range {radius_range} dips below {min_radius}")
    if 2 * high >= patch_size:
        raise ConfigError(f"radius {high} does not fit a {patch_size} patch")

    background = smooth_background(patch_size, rng)
    blobs = []
    for relevant, count in ((True, n_blobs), (False, n_distractors)):
        for _ in range(count):
            if relevant:
                radius = rng.uniform(low, high)
            else:
                radius = rng.uniform(0.5 * min_radius, 0.8 * min_radius)
            row, col = rng.uniform(radius, patch_size - 1 - radius, size=2)
            intensity = rng.uniform(0.5, 0.8)
            blobs.append(
                Blob(float(row), float(col), float(radius), intensity, relevant)
            )

    return PatchScene(
        image=render_blobs(background, blobs),
        background=background,
        blobs=tuple(blobs),
    )


def blob_patches(
    n_per_class: int,
    patch_size: int,
    rng: np.random.Generator,
    radius_range=(2.0, 4.0),
    min_radius: float = 2.0,
) -> Dataset:
    """
    Positives: one relevant blob within a pixel of the centre.
    Negatives: background, half of them with a small distractor.
    """
    if n_per_class < 1:
        raise ConfigError(f"n per class must be >= 1, got {n_per_class}")
    centre = (patch_size - 1) / 2.0
    patches, labels = [], []
    for label in (1, 0):
        for _ in range(n_per_class):
            background = smooth_background(patch_size, rng)
            blobs = []
            if label == 1:
                row, col = centre + rng.integers(-1, 2, size=2)
                radius = rng.uniform(*radius_range)
                blobs.append(Blob(row, col, radius, rng.uniform(0.5, 0.8), True))
            elif rng.random() < 0.5:
                radius = rng.uniform(0.5 * min_radius, 0.8 * min_radius)
                row, col = rng.uniform(radius, patch_size - 1 - radius, size=2)
                blobs.append(Blob(row, col, radius, rng.uniform(0.5, 0.8), False))
            patches.append(render_blobs(background, blobs))
            labels.append(label)

    return Dataset(
        x=np.stack(patches),
        labels=np.asarray(labels, dtype=np.int64),
        sources=("real",) * len(labels),
    )


# ----------------------------------------------------------------------
# noise protocols
# ----------------------------------------------------------------------


def uniform_noise_inject(
    x, magnitude: float, rng: np.random.Generator, value_range=(0.0, 1.0)
) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if magnitude < 0:
        raise ConfigError(f"noise magnitude must be >= 0, got {magnitude}")
    if magnitude == 0:
        return x.copy()
    noisy = x + rng.uniform(-magnitude, magnitude, size=x.shape)
    if value_range is not None:
        noisy = np.clip(noisy, *value_range)
    return noisy


def poisson_noise_inject(x, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Rescale [0,1] to [0,scale], draw Poisson counts, scale back and clamp."""
    x = np.asarray(x, dtype=np.float64)
    if scale <= 0:
        raise ConfigError(f"poisson scale must be > 0, got {scale}")
    outside = np.flatnonzero((x < 0) | (x > 1))
    if outside.size:
        raise DomainError(
            f"poisson injection needs values in [0, 1]; index {int(outside[0])} is "
            f"{x.reshape(-1)[outside[0]]!r}"
        )
    return np.clip(rng.poisson(x * scale) / scale, 0.0, 1.0)


# ----------------------------------------------------------------------
# dataset files
# ----------------------------------------------------------------------


def write_points_csv(path, dataset: Dataset):
    if dataset.sample_shape != (2,):
        raise ConfigError("CSV datasets hold 2-D points only")
    frame = pd.DataFrame(
        {
            "x1": dataset.x[:, 0],
            "x2": dataset.x[:, 1],
            "label": dataset.labels,
            "source": list(dataset.sources),
        }
    )
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False)
    atomic_write_text(path, buffer.getvalue())


def read_points_csv(path) -> Dataset:
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in POINT_COLUMNS if c not in frame.columns]
    if missing:
        raise FormatError(f"{path}: missing columns {missing}")
    labels = frame["label"].to_numpy()
    if not np.isin(labels, (0, 1)).all():
        raise FormatError(f"{path}: labels must be 0 or 1")
    return Dataset(
        x=frame[["x1", "x2"]].to_numpy(dtype=np.float64),
        labels=labels.astype(np.int64),
        sources=tuple(frame["source"].astype(str)),
    )


def write_dataset_json(path, dataset: Dataset):
    write_json(
        path,
        {
            "format": DATASET_FORMAT,
            "version": DATASET_VERSION,
            "sample_shape": list(dataset.sample_shape),
            "labels": dataset.labels.tolist(),
            "sources": list(dataset.sources),
            "x": array_payload(dataset.x.reshape(len(dataset), -1)),
        },
    )


def read_dataset_json(path) -> Dataset:
    payload = read_json(path, DATASET_FORMAT)
    try:
        labels = np.asarray(payload["labels"], dtype=np.int64)
        shape = (len(labels), *payload["sample_shape"])
        x = array_from_payload(payload["x"], shape)
        sources = tuple(payload["sources"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed dataset ({exc!r})")
    return Dataset(x=x, labels=labels, sources=sources)


def write_dataset(path, dataset: Dataset):
    if Path(path).suffix == ".csv":
        write_points_csv(path, dataset)
    else:
        write_dataset_json(path, dataset)


def read_dataset(path) -> Dataset:
    if Path(path).suffix == ".csv":
        return read_points_csv(path)
    return read_dataset_json(path)
