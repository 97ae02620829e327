"""
Decision-boundary figures for 2-D models, written as SVG.

Output is deterministic: matplotlib's SVG id salt is fixed and the date
metadata dropped, so the same model and grid give the same bytes.
"""

import io
from dataclasses import asdict, dataclass
from typing import Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from advaug.errors import ConfigError, ShapeError  # noqa: E402
from advaug.heads import confidence  # noqa: E402
from advaug.networks import DenseNet  # noqa: E402
from advaug.util import atomic_write_text  # noqa: E402

SVG_SALT = "advaug"
LEVELS = np.linspace(0.0, 1.0, 11)
BOUNDARY = 0.5


@dataclass(frozen=True)
class GridSpec:
    x_min: float = -1.5
    x_max: float = 2.5
    y_min: float = -1.0
    y_max: float = 1.5
    resolution: int = 200

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ConfigError(f"empty plot box {self.as_dict()}")
        if self.resolution < 2:
            raise ConfigError(f"grid resolution must be >= 2, got {self.resolution}")

    @classmethod
    def parse(cls, text: str, resolution: int = 200) -> "GridSpec":
        """'x_min,x_max,y_min,y_max' as given on the command line."""
        try:
            x_min, x_max, y_min, y_max = (float(v) for v in text.split(","))
        except ValueError:
            raise ConfigError(f"--box needs four comma-separated numbers, got {text!r}")
        return cls(x_min, x_max, y_min, y_max, resolution)

    def as_dict(self) -> dict:
        return asdict(self)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        xs = np.linspace(self.x_min, self.x_max, self.resolution)
        ys = np.linspace(self.y_min, self.y_max, self.resolution)
        return np.meshgrid(xs, ys)


@dataclass
class GridField:
    xx: np.ndarray
    yy: np.ndarray
    zz: np.ndarray

    @property
    def points(self) -> np.ndarray:
        return np.column_stack([self.xx.ravel(), self.yy.ravel()])

    @property
    def crosses_boundary(self) -> bool:
        return bool(self.zz.min() < BOUNDARY < self.zz.max())

    def positive(self) -> np.ndarray:
        return self.zz >= BOUNDARY


def evaluate_grid(model: DenseNet, spec: GridSpec, head=None) -> GridField:
    if model.in_extent != 2:
        raise ShapeError(f"boundary plots need 2 inputs, model has {model.in_extent}")
    xx, yy = spec.mesh()
    zz = confidence(model, np.column_stack([xx.ravel(), yy.ravel()]), head)
    return GridField(xx, yy, zz.reshape(xx.shape))


def draw_boundary(
    ax,
    field: GridField,
    dataset=None,
    extra=None,
    title: Optional[str] = None,
) -> bool:
    """Filled confidence field, 0.5 contour when crossed, data on top."""
    ax.contourf(
        field.xx, field.yy, field.zz, levels=LEVELS, cmap="RdBu_r", vmin=0, vmax=1
    )
    drawn = field.crosses_boundary
    if drawn:
        ax.contour(
            field.xx,
            field.yy,
            field.zz,
            levels=[BOUNDARY],
            colors="k",
            linewidths=1.0,
        )

    if dataset is not None:
        for label, color in ((0, "tab:blue"), (1, "tab:red")):
            chosen = dataset.x[dataset.labels == label]
            ax.scatter(chosen[:, 0], chosen[:, 1], s=4, c=color, linewidths=0)
    if extra is not None and len(extra):
        for points, marker, color in extra:
            points = np.atleast_2d(points)
            ax.scatter(points[:, 0], points[:, 1], s=10, marker=marker, c=color)

    ax.set_xlim(field.xx.min(), field.xx.max())
    ax.set_ylim(field.yy.min(), field.yy.max())
    ax.set_xticks([])
    ax.set_yticks([])
    if title:
        ax.set_title(title, fontsize=9)
    return drawn


def svg_text(fig) -> str:
    buffer = io.StringIO()
    with matplotlib.rc_context({"svg.hashsalt": SVG_SALT, "svg.fonttype": "none"}):
        fig.savefig(buffer, format="svg", metadata={"Date": None})
    return buffer.getvalue()


def write_figure(fig, path):
    try:
        atomic_write_text(path, svg_text(fig))
    finally:
        plt.close(fig)


def render_boundary(
    model: DenseNet,
    spec: GridSpec,
    path,
    dataset=None,
    extra=None,
    head=None,
    title=None,
) -> dict:
    field = evaluate_grid(model, spec, head)
    fig, ax = plt.subplots(figsize=(4, 3))
    drawn = draw_boundary(ax, field, dataset, extra, title)
    write_figure(fig, path)
    return {"boundary": drawn, "positive_fraction": float(field.positive().mean())}


def render_panels(panels, spec: GridSpec, path, head=None, columns: int = 3) -> list:
    """panels: (title, model, dataset, extra) tuples, drawn row by row."""
    if not panels:
        raise ConfigError("nothing to plot")
    rows = -(-len(panels) // columns)
    fig, axes = plt.subplots(rows, columns, figsize=(4 * columns, 3 * rows))
    axes = np.atleast_1d(axes).ravel()
    drawn = []
    for ax, (title, model, dataset, extra) in zip(axes, panels):
        field = evaluate_grid(model, spec, head)
        drawn.append(draw_boundary(ax, field, dataset, extra, title))
    for ax in axes[len(panels) :]:
        ax.set_axis_off()
    fig.tight_layout()
    write_figure(fig, path)
    return drawn
