import numpy as np
import pytest

from advaug.datagen import (
    Dataset,
    blob_patches,
    blob_scene,
    concat,
    longtail_subsample,
    poisson_noise_inject,
    positive_moon_distance,
    read_dataset,
    subsample_positives,
    two_moons,
    uniform_noise_inject,
    write_dataset,
)
from advaug.errors import ConfigError, DomainError, FormatError
from advaug.util import make_rng

from . import make_points


def test_noiseless_positive_moon_lies_on_its_arc():
    moons = two_moons(50, 0.0, make_rng(0))
    assert len(moons) == 100
    assert moons.labels.sum() == 50

    positives = moons.x[moons.labels == 1]
    assert positive_moon_distance(positives).max() < 1e-12
    assert np.all(positives[:, 1] <= 0.5 + 1e-12)
    assert moons.arc.min() == 0.0 and moons.arc.max() == 1.0


def test_moons_noise_is_drawn_from_the_injected_generator():
    first = two_moons(30, 0.1, make_rng(3))
    second = two_moons(30, 0.1, make_rng(3))
    np.testing.assert_array_equal(first.x, second.x)
    assert not np.array_equal(first.x, two_moons(30, 0.1, make_rng(4)).x)


@pytest.mark.parametrize("n,std", [(0, 0.1), (10, -0.1)])
def test_two_moons_rejects_bad_arguments(n, std):
    with pytest.raises(ConfigError):
        two_moons(n, std, make_rng(0))


@pytest.mark.parametrize(
    "point,expected",
    [
        ((1.0, -0.5), 0.0),
        ((0.0, 0.5), 0.0),
        ((2.0, 0.5), 0.0),
        ((1.0, 0.5), 1.0),
        ((1.0, -1.0), 0.5),
        ((0.0, 1.5), 1.0),
    ],
)
def test_positive_moon_distance(point, expected):
    assert positive_moon_distance(np.array(point))[0] == pytest.approx(expected)


def test_longtail_subsample_prefers_the_head_of_the_arc():
    arc = np.linspace(0.0, 1.0, 200)
    chosen = longtail_subsample(arc, 20, make_rng(0))

    assert len(np.unique(chosen)) == 20
    assert np.all(np.diff(chosen) > 0)
    assert arc[chosen].mean() < 0.5
    np.testing.assert_array_equal(longtail_subsample(arc, 200, make_rng(0)), range(200))
    with pytest.raises(ConfigError):
        longtail_subsample(arc, 201, make_rng(0))


def test_subsample_positives_keeps_every_negative():
    moons = two_moons(100, 0.1, make_rng(0))
    thinned = subsample_positives(moons, 20, make_rng(1))
    assert thinned.labels.sum() == 20
    assert (thinned.labels == 0).sum() == 100

    with pytest.raises(ConfigError, match="arc"):
        subsample_positives(make_points([[0, 0], [1, 1]], [0, 1]), 1, make_rng(0))


def test_blob_patches_put_a_bright_blob_in_positive_centres():
    patches = blob_patches(5, 16, make_rng(0))
    assert patches.x.shape == (10, 16, 16)
    assert patches.sample_shape == (16, 16)
    assert patches.labels.tolist() == [1] * 5 + [0] * 5
    assert np.all((patches.x >= 0.0) & (patches.x <= 1.0))

    centres = patches.x[:5, 6:10, 6:10].max(axis=(1, 2))
    assert np.all(centres > 0.4)


def test_blob_scene_flags_distractors():
    scene = blob_scene(48, 3, (2.0, 4.0), make_rng(2), n_distractors=2)
    assert scene.image.shape == (48, 48)
    assert len(scene.blobs) == 5
    assert len(scene.ground_truth) == 3
    assert all(2.0 <= blob.radius <= 4.0 for blob in scene.ground_truth)
    assert all(blob.radius < 2.0 for blob in scene.blobs if not blob.relevant)


@pytest.mark.parametrize("radius_range", [(1.0, 3.0), (2.0, 8.0)])
def test_blob_scene_rejects_radii_that_do_not_fit(radius_range):
    with pytest.raises(ConfigError, match="radius"):
        blob_scene(16, 1, radius_range, make_rng(0))


def test_uniform_noise_stays_within_its_magnitude(rng):
    x = np.full((8, 8), 0.5)
    noisy = uniform_noise_inject(x, 0.3, rng)
    assert np.abs(noisy - x).max() <= 0.3
    assert not np.array_equal(noisy, x)

    clipped = uniform_noise_inject(np.ones(100), 0.9, rng)
    assert clipped.max() <= 1.0

    unchanged = uniform_noise_inject(x, 0.0, rng)
    np.testing.assert_array_equal(unchanged, x)
    assert unchanged is not x

    with pytest.raises(ConfigError, match="magnitude"):
        uniform_noise_inject(x, -0.1, rng)


def test_poisson_noise(rng):
    np.testing.assert_array_equal(poisson_noise_inject(np.zeros(5), 50.0, rng), 0.0)

    x = np.linspace(0.0, 1.0, 11)
    mild = poisson_noise_inject(x, 1e6, rng)
    assert np.abs(mild - x).max() < 0.01

    severe = poisson_noise_inject(np.full(1000, 0.5), 1.0, rng)
    assert set(np.unique(severe).tolist()) <= {0.0, 1.0}

    with pytest.raises(DomainError, match="index 1"):
        poisson_noise_inject(np.array([0.5, 1.5]), 50.0, rng)
    with pytest.raises(ConfigError, match="scale"):
        poisson_noise_inject(x, 0.0, rng)


def test_dataset_checks_lengths():
    with pytest.raises(ConfigError, match="same length"):
        Dataset(x=np.zeros((2, 2)), labels=np.zeros(3), sources=("real",) * 2)


def test_concat_keeps_order_and_sources():
    first = make_points([[0.0, 0.0]], [0])
    second = Dataset(np.ones((2, 2)), np.array([1, 1]), ("synthetic-pgd",) * 2)
    joined = concat([first, second])
    assert joined.labels.tolist() == [0, 1, 1]
    assert joined.sources == ("real", "synthetic-pgd", "synthetic-pgd")
    assert joined.arc is None
    assert len(joined.positives()) == 2 and len(joined.negatives()) == 1


def test_points_csv_is_bit_exact(tmp_path):
    moons = two_moons(20, 0.1, make_rng(5))
    path = tmp_path / "moons.csv"
    write_dataset(path, moons)
    loaded = read_dataset(path)

    assert loaded.x.tobytes() == moons.x.tobytes()
    np.testing.assert_array_equal(loaded.labels, moons.labels)
    assert loaded.sources == moons.sources
    assert path.read_text().splitlines()[0] == "x1,x2,label,source"


def test_patch_datasets_go_to_json(tmp_path):
    patches = blob_patches(2, 8, make_rng(0), radius_range=(2.0, 3.0))
    path = tmp_path / "patches.json"
    write_dataset(path, patches)
    loaded = read_dataset(path)
    assert loaded.sample_shape == (8, 8)
    assert loaded.x.tobytes() == patches.x.tobytes()

    with pytest.raises(ConfigError, match="2-D points"):
        write_dataset(tmp_path / "patches.csv", patches)


@pytest.mark.parametrize(
    "text,message",
    [
        ("x1,x2,label\n0,0,1\n", "missing columns"),
        ("x1,x2,label,source\n0,0,2,real\n", "0 or 1"),
    ],
)
def test_points_csv_format_errors(tmp_path, text, message):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(FormatError, match=message):
        read_dataset(path)


def test_json_dataset_format_errors(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"format": "something-else"}')
    with pytest.raises(FormatError, match="advaug-dataset"):
        read_dataset(path)
    path.write_text("{not json")
    with pytest.raises(FormatError, match="not valid JSON"):
        read_dataset(path)
