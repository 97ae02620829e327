"""
Toy two-stage detector on blob scans: a frozen smoothing stage proposes
candidates through NMS, then the patch classifier re-scores the crop
around each one.
"""

import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from advaug.datagen import PatchScene, blob_scene
from advaug.errors import ConfigError, FormatError, ShapeError
from advaug.froc import Candidate, GroundTruth, nms
from advaug.heads import confidence
from advaug.networks import DenseNet
from advaug.util import array_from_payload, array_payload, read_json, write_json

logger = logging.getLogger(__name__)

SCANS_FORMAT = "advaug-scans"
SCANS_VERSION = 1


@dataclass(frozen=True)
class DetectionConfig:
    patch_size: int = 16
    smoothing: float = 1.0
    min_distance: float = 4.0
    max_candidates: int = 16

    def __post_init__(self):
        if self.patch_size < 2:
            raise ConfigError(f"patch size must be >= 2, got {self.patch_size}")
        if self.smoothing < 0:
            raise ConfigError(f"smoothing must be >= 0, got {self.smoothing}")
        if self.max_candidates < 1:
            raise ConfigError("max_candidates must be >= 1")

    @classmethod
    def from_settings(cls, **overrides) -> "DetectionConfig":
        from django.conf import settings

        values = {
            "patch_size": settings.PATCH_SIZE,
            "min_distance": settings.NMS_MIN_DISTANCE,
            "max_candidates": settings.NMS_MAX_CANDIDATES,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Scan:
    scan_id: str
    image: np.ndarray


@dataclass
class BlobBenchmark:
    scans: list[Scan]
    ground_truths: list[GroundTruth]

    @property
    def scan_ids(self) -> list[str]:
        return [scan.scan_id for scan in self.scans]


def _scene_findings(scan_id: str, scene: PatchScene) -> list[GroundTruth]:
    return [
        GroundTruth(scan_id, blob.col, blob.row, blob.radius, blob.relevant)
        for blob in scene.blobs
    ]


def blob_benchmark(
    n_scans: int,
    scan_size: int,
    rng: np.random.Generator,
    blobs_per_scan: int = 3,
    distractors_per_scan: int = 2,
    radius_range=(2.0, 4.0),
    min_radius: float = 2.0,
) -> BlobBenchmark:
    if n_scans < 1:
        raise ConfigError(f"need at least one scan, got {n_scans}")
    scans, truths = [], []
    for i in range(n_scans):
        scan_id = f"scan-{i:03d}"
        scene = blob_scene(
            scan_size,
            blobs_per_scan,
            radius_range,
            rng,
            min_radius=min_radius,
            n_distractors=distractors_per_scan,
        )
        scans.append(Scan(scan_id, scene.image))
        truths.extend(_scene_findings(scan_id, scene))
    return BlobBenchmark(scans=scans, ground_truths=truths)


def candidate_heatmap(image: np.ndarray, smoothing: float) -> np.ndarray:
    if smoothing == 0:
        return np.asarray(image, dtype=np.float64)
    return ndimage.gaussian_filter(np.asarray(image, dtype=np.float64), smoothing)


def crop(image: np.ndarray, row: int, col: int, size: int) -> np.ndarray:
    """size x size window with (row, col) at offset size // 2 - 1; reflect padded."""
    if image.ndim != 2:
        raise ShapeError(f"crop needs a 2-D image, got shape {image.shape}")
    padded = np.pad(image, size, mode="reflect")
    top = row + size - (size // 2 - 1)
    left = col + size - (size // 2 - 1)
    return padded[top : top + size, left : left + size]


def propose(scan: Scan, config: DetectionConfig) -> list[Candidate]:
    heatmap = candidate_heatmap(scan.image, config.smoothing)
    return nms(heatmap, config.min_distance, config.max_candidates, scan.scan_id)


def detect(
    classifier: DenseNet, scans, config: DetectionConfig, head=None
) -> list[Candidate]:
    """Candidates from every scan, scored by classifier confidence; ids run on."""
    found = []
    for scan in scans:
        proposals = propose(scan, config)
        if not proposals:
            continue
        patches = np.stack(
            [
                crop(scan.image, int(c.y), int(c.x), config.patch_size)
                for c in proposals
            ]
        )
        scores = confidence(classifier, patches, head)
        for proposal, score in zip(proposals, scores):
            found.append(
                Candidate(
                    scan_id=scan.scan_id,
                    x=proposal.x,
                    y=proposal.y,
                    score=float(np.clip(score, 0.0, 1.0)),
                    id=len(found),
                )
            )
    logger.info("detected %d candidates on %d scans", len(found), len(scans))
    return found


def write_scans(path, scans):
    write_json(
        path,
        {
            "format": SCANS_FORMAT,
            "version": SCANS_VERSION,
            "scans": [
                {
                    "scan_id": scan.scan_id,
                    "shape": list(scan.image.shape),
                    "image": array_payload(scan.image.reshape(-1)),
                }
                for scan in scans
            ],
        },
    )


def read_scans(path) -> list[Scan]:
    payload = read_json(path, SCANS_FORMAT)
    try:
        return [
            Scan(
                str(raw["scan_id"]),
                array_from_payload(raw["image"], tuple(raw["shape"])),
            )
            for raw in payload["scans"]
        ]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed scans container ({exc!r})")
