import numpy as np
import pytest

from advaug.errors import FormatError
from advaug.settings import parse_positive_int
from advaug.util import (
    array_from_payload,
    atomic_write_text,
    fingerprint,
    make_rng,
    read_json,
    spawn_seeds,
    write_json,
)


def test_rng_streams_are_keyed():
    first = make_rng(3, 1).random(4)
    np.testing.assert_array_equal(first, make_rng(3, 1).random(4))
    assert not np.array_equal(first, make_rng(3, 2).random(4))
    assert not np.array_equal(first, make_rng(4, 1).random(4))


def test_spawned_seeds_extend_as_a_prefix():
    assert spawn_seeds(5, 8)[:3] == spawn_seeds(5, 3)
    assert len(set(spawn_seeds(5, 8))) == 8


def test_fingerprint_ignores_key_order():
    assert fingerprint({"a": 1, "b": 2}) == fingerprint({"b": 2, "a": 1})
    assert fingerprint({"a": 1}) != fingerprint({"a": 2})
    with pytest.raises(ValueError):
        fingerprint(float("nan"))


def test_atomic_write_leaves_no_temp_files(tmp_path):
    path = tmp_path / "nested" / "out.txt"
    atomic_write_text(path, "one")
    atomic_write_text(path, "two")
    assert path.read_text() == "two"
    assert [p.name for p in path.parent.iterdir()] == ["out.txt"]


def test_json_container_format(tmp_path):
    path = tmp_path / "payload.json"
    write_json(path, {"format": "advaug-thing", "value": 0.1})
    assert read_json(path, "advaug-thing")["value"] == 0.1
    with pytest.raises(FormatError, match="advaug-other"):
        read_json(path, "advaug-other")


def test_array_payload_shape_errors():
    assert array_from_payload([1, 2, 3, 4], (2, 2)).shape == (2, 2)
    with pytest.raises(FormatError, match="does not fit"):
        array_from_payload([1, 2, 3], (2, 2))
    with pytest.raises(FormatError, match="malformed"):
        array_from_payload([[1, 2], [3]])


@pytest.mark.parametrize(
    "raw,message", [("zero", "must be an integer"), ("0", "must be >= 1")]
)
def test_parse_positive_int(raw, message):
    with pytest.raises(ValueError, match=message):
        parse_positive_int("ADVAUG_WORKERS", raw)
    assert parse_positive_int("ADVAUG_WORKERS", "4") == 4
