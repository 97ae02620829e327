import json
from io import StringIO

import pytest
from django.core.management import call_command
from django.core.management.base import CommandError

from advaug.datagen import read_dataset
from advaug.manifest import RunManifest
from advaug.networks import DenseNet


def run(*args, **options):
    out, err = StringIO(), StringIO()
    call_command(*args, stdout=out, stderr=err, **options)
    return out.getvalue()


def returncode(*args, **options):
    with pytest.raises(CommandError) as excinfo:
        run(*args, **options)
    return excinfo.value.returncode


@pytest.fixture()
def moons_csv(tmp_path):
    path = tmp_path / "moons.csv"
    run("datagen", "two-moons", out=str(path), seed=0, n=40, std=0.1)
    return path


def test_datagen_writes_data_and_manifest(moons_csv):
    assert len(read_dataset(moons_csv)) == 80

    manifest = RunManifest.load(moons_csv.with_name("moons.csv.manifest.json"))
    assert manifest.command == "datagen"
    assert manifest.args == ["two-moons"]
    assert manifest.seed == 0
    assert list(manifest.outputs) == [str(moons_csv)]
    assert "stdout" not in manifest.options
    assert manifest.mismatches() == []


@pytest.mark.parametrize(
    "options", [{"std": -1.0}, {"n": 0}, {"n": 10, "subsample_pos": 50}]
)
def test_datagen_argument_errors_exit_2(tmp_path, options):
    code = returncode(
        "datagen", "two-moons", out=str(tmp_path / "x.csv"), seed=0, **options
    )
    assert code == 2


def test_missing_seed_is_a_usage_error(tmp_path):
    assert returncode("datagen", "two-moons", out=str(tmp_path / "x.csv")) == 2


def test_missing_ground_truth_exits_2(tmp_path):
    candidates = tmp_path / "candidates.csv"
    candidates.write_text("scan_id,x,y,score\n")
    code = returncode(
        "evaluate",
        str(candidates),
        str(tmp_path / "missing.csv"),
        out=str(tmp_path / "report.json"),
        seed=0,
    )
    assert code == 2


def test_train_then_replay_bitwise(tmp_path, moons_csv):
    model_path = tmp_path / "model.json"
    run(
        "train",
        str(moons_csv),
        "--hidden",
        "8",
        out=str(model_path),
        seed=1,
        epochs=3,
        validation_fraction=0.0,
    )
    model = DenseNet.load(model_path)
    manifest_path = tmp_path / "model.json.manifest.json"
    manifest = RunManifest.load(manifest_path)
    assert manifest.fingerprints == {"model": model.fingerprint()}
    assert str(moons_csv) in manifest.inputs

    output = run("replay", str(manifest_path))
    assert "reproduced bitwise" in output


def test_replay_reports_changed_outputs(tmp_path, moons_csv):
    manifest_path = moons_csv.with_name("moons.csv.manifest.json")
    payload = json.loads(manifest_path.read_text())
    payload["outputs"][str(moons_csv)] = "0" * 64
    manifest_path.write_text(json.dumps(payload))

    assert returncode("replay", str(manifest_path)) == 3


def test_detection_chain(tmp_path):
    patches = tmp_path / "patches.json"
    run("datagen", "blob-patches", out=str(patches), seed=2, n=20)
    model = tmp_path / "patch-model.json"
    run(
        "train",
        str(patches),
        "--hidden",
        "8",
        out=str(model),
        seed=3,
        epochs=2,
        validation_fraction=0.0,
    )

    scans_dir = tmp_path / "scans"
    run("datagen", "blob-scans", out=str(scans_dir), seed=4, scans=2)
    candidates = tmp_path / "candidates.csv"
    run(
        "detect",
        str(model),
        str(scans_dir / "scans.json"),
        out=str(candidates),
        max_candidates=4,
    )

    report_path = tmp_path / "report.json"
    run(
        "evaluate",
        str(candidates),
        str(scans_dir / "groundtruth.csv"),
        out=str(report_path),
        scans=str(scans_dir / "scans.json"),
        seed=5,
        resamples=20,
    )
    report = json.loads(report_path.read_text())
    assert 0.0 <= report["cpm"] <= 1.0
    low, high = report["cpm_ci95"]
    assert low <= high


@pytest.fixture()
def moons_model_path(tmp_path, moons_csv):
    path = tmp_path / "model.json"
    run(
        "train",
        str(moons_csv),
        "--hidden",
        "8",
        out=str(path),
        seed=1,
        epochs=2,
        validation_fraction=0.0,
    )
    return path


def test_absent_optional_positionals_replay(tmp_path, moons_model_path):
    svg = tmp_path / "boundary.svg"
    run("plot_boundary", str(moons_model_path), out=str(svg), resolution=20)

    manifest_path = tmp_path / "boundary.svg.manifest.json"
    assert RunManifest.load(manifest_path).args == [str(moons_model_path), None]
    assert "reproduced bitwise" in run("replay", str(manifest_path))


def test_replay_rejects_gaps_in_the_arguments(tmp_path, moons_model_path, moons_csv):
    svg = tmp_path / "boundary.svg"
    run("plot_boundary", str(moons_model_path), out=str(svg), resolution=20)

    manifest_path = tmp_path / "boundary.svg.manifest.json"
    payload = json.loads(manifest_path.read_text())
    payload["args"] = [None, str(moons_csv)]
    manifest_path.write_text(json.dumps(payload))

    assert returncode("replay", str(manifest_path)) == 2
