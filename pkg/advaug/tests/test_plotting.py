import xml.etree.ElementTree as ET

import numpy as np
import pytest

from advaug.errors import ConfigError, ShapeError
from advaug.networks import DenseNet
from advaug.plotting import GridSpec, evaluate_grid, render_boundary, render_panels
from advaug.util import make_rng

from . import linear_classifier, make_points


def constant_classifier():
    return DenseNet.from_extents([2, 2], ["identity"], make_rng(0), init="zeros")


def test_grid_evaluation_follows_the_model():
    spec = GridSpec(resolution=200)
    field = evaluate_grid(linear_classifier(), spec)

    assert field.zz.shape == (200, 200)
    assert field.crosses_boundary
    # 125 of the 200 grid columns have x >= 0
    assert field.positive().mean() == pytest.approx(0.625)
    np.testing.assert_allclose(field.zz[:, -1], 1 / (1 + np.exp(-2.5)))


def test_constant_model_has_no_boundary(tmp_path):
    path = tmp_path / "flat.svg"
    result = render_boundary(constant_classifier(), GridSpec(resolution=20), path)
    assert result == {"boundary": False, "positive_fraction": 1.0}


def test_boundary_svg_is_well_formed_and_repeatable(tmp_path):
    spec = GridSpec(resolution=30)
    data = make_points([[0.0, 0.0], [1.0, 0.5]], [0, 1])
    first, second = tmp_path / "a.svg", tmp_path / "b.svg"

    result = render_boundary(linear_classifier(), spec, first, dataset=data)
    render_boundary(linear_classifier(), spec, second, dataset=data)

    assert result["boundary"]
    root = ET.parse(first).getroot()
    assert root.tag.endswith("svg")
    assert first.read_bytes() == second.read_bytes()


def test_panels(tmp_path):
    spec = GridSpec(resolution=10)
    panels = [
        ("linear", linear_classifier(), None, None),
        ("flat", constant_classifier(), None, [(np.zeros(2), "x", "k")]),
    ]
    drawn = render_panels(panels, spec, tmp_path / "panels.svg", columns=3)
    assert drawn == [True, False]
    ET.parse(tmp_path / "panels.svg")

    with pytest.raises(ConfigError, match="nothing to plot"):
        render_panels([], spec, tmp_path / "empty.svg")


@pytest.mark.parametrize(
    "text,expected",
    [
        ("-1,1,-2,2", GridSpec(-1.0, 1.0, -2.0, 2.0)),
        ("0,3,0,1", GridSpec(0.0, 3.0, 0.0, 1.0)),
    ],
)
def test_grid_spec_parse(text, expected):
    assert GridSpec.parse(text) == expected


@pytest.mark.parametrize("text", ["1,2,3", "a,b,c,d", "1,0,0,1"])
def test_grid_spec_rejects_bad_boxes(text):
    with pytest.raises(ConfigError):
        GridSpec.parse(text)


def test_boundary_plots_need_two_inputs():
    model = DenseNet.from_extents([3, 2], ["identity"], make_rng(0))
    with pytest.raises(ShapeError, match="2 inputs"):
        evaluate_grid(model, GridSpec(resolution=5))
