from pathlib import Path

import pytest

from advaug.errors import FormatError
from advaug.manifest import RunManifest, default_manifest_path


def test_default_manifest_path():
    assert default_manifest_path("out/model.json") == Path(
        "out/model.json.manifest.json"
    )


def test_manifest_file(tmp_path):
    data = tmp_path / "data.csv"
    data.write_text("x1,x2,label,source\n")
    out = tmp_path / "out.json"
    out.write_text("{}")

    manifest = RunManifest("train", args=[str(data)], options={"epochs": 3}, seed=7)
    manifest.add_input(data)
    manifest.add_output(out)
    manifest.start_clock()
    path = tmp_path / "run.json"
    manifest.save(path)

    loaded = RunManifest.load(path)
    assert loaded == manifest
    assert loaded.mismatches() == []

    out.write_text("{ }")
    assert loaded.mismatches()[0].startswith(f"{out}: ")
    out.unlink()
    assert loaded.mismatches() == [f"{out}: missing"]


def test_manifest_format_errors():
    payload = RunManifest("datagen").to_dict()
    with pytest.raises(FormatError, match="version"):
        RunManifest.from_dict({**payload, "version": 0})
    del payload["outputs"]
    with pytest.raises(FormatError, match="malformed"):
        RunManifest.from_dict(payload)
