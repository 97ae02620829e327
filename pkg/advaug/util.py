import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from advaug.errors import FormatError


def canonical_json(payload) -> str:
    """Stable text for hashing: sorted keys, no whitespace, no NaN."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def fingerprint(*parts) -> str:
    return sha256_text(canonical_json(list(parts)))


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent stream per (seed, keys); keys name a sub-task."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def spawn_seeds(seed: int, count: int) -> list[int]:
    children = np.random.SeedSequence(int(seed)).spawn(count)
    return [int(child.generate_state(1, dtype=np.uint64)[0]) for child in children]


def atomic_write_text(path, text: str):
    """Write via a temp file in the target dir so readers never see a partial file."""
    out_path = Path(path)
    out_path.parent.mkdir(parents=True, exist_ok=True)

    tmp_fd, tmp_name = tempfile.mkstemp(
        prefix=f".{out_path.name}.",
        dir=str(out_path.parent),
        text=True,
    )

    try:
        with os.fdopen(tmp_fd, "w", encoding="utf-8") as out:
            out.write(text)

        os.replace(tmp_name, out_path)

    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise


def write_json(path, payload):
    atomic_write_text(path, json.dumps(payload, indent=1, allow_nan=False) + "\n")


def read_json(path, expected_format: str | None = None) -> dict:
    with open(path, encoding="utf-8") as handle:
        try:
            payload = json.load(handle)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON ({exc})")

    if expected_format is not None:
        if not isinstance(payload, dict) or payload.get("format") != expected_format:
            raise FormatError(f"{path}: expected a {expected_format!r} container")
    return payload


def array_payload(array: np.ndarray) -> list:
    # json writes floats as shortest round-trip decimals, so reloads are bit-exact
    return np.asarray(array, dtype=np.float64).tolist()


def array_from_payload(values, shape=None) -> np.ndarray:
    try:
        array = np.array(values, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"malformed numeric payload: {exc}")
    if shape is not None:
        try:
            array = array.reshape(shape)
        except ValueError:
            raise FormatError(f"payload of size {array.size} does not fit {shape}")
    return array
