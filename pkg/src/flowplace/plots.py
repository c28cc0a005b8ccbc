"""Figure rendering for the command-line reports.

Everything draws through the Agg backend and writes PNG files, so the
functions work headless and produce identical bytes for identical inputs.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.collections import PatchCollection
from matplotlib.patches import Rectangle

_DPI = 110
_CMAP = "viridis"


def _cell_image(field):
    part = field.partition
    return field.values.reshape(part.py, part.px)


def _extent(partition):
    d = partition.domain
    return (d.xmin, d.xmax, d.ymin, d.ymax)


def _cellset_patches(cells):
    part = cells.partition
    out = []
    for idx in cells.indices:
        ix = idx % part.px
        iy = idx // part.px
        x0 = part.domain.xmin + ix * part.hx
        y0 = part.domain.ymin + iy * part.hy
        out.append(Rectangle((x0, y0), part.hx, part.hy))
    return out


def save_heatmap(field, path, title=None, mark=None, cmap=_CMAP):
    """Render a cell field as a heatmap PNG; optionally outline a cell set."""
    fig, ax = plt.subplots(figsize=(6.4, 5.0), dpi=_DPI)
    im = ax.imshow(
        _cell_image(field),
        origin="lower",
        extent=_extent(field.partition),
        cmap=cmap,
        interpolation="nearest",
    )
    fig.colorbar(im, ax=ax, shrink=0.85)
    if mark is not None and len(mark):
        ax.add_collection(
            PatchCollection(
                _cellset_patches(mark),
                facecolor="none",
                edgecolor="crimson",
                linewidth=0.9,
            )
        )
    if title:
        ax.set_title(title)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def save_density_row(fields, labels, path, title=None):
    """Render densities side by side on a shared color scale."""
    if len(fields) != len(labels):
        raise ValueError("one label per field required")
    lo = min(float(f.values.min()) for f in fields)
    hi = max(float(f.values.max()) for f in fields)
    if hi == lo:
        hi = lo + 1.0
    fig, axes = plt.subplots(
        1, len(fields), figsize=(4.2 * len(fields), 3.8), dpi=_DPI, squeeze=False
    )
    for ax, field, label in zip(axes[0], fields, labels):
        im = ax.imshow(
            _cell_image(field),
            origin="lower",
            extent=_extent(field.partition),
            cmap=_CMAP,
            vmin=lo,
            vmax=hi,
            interpolation="nearest",
        )
        ax.set_title(label)
        ax.set_xlabel("x")
        ax.set_ylabel("y")
    fig.colorbar(im, ax=[a for a in axes[0]], shrink=0.9)
    if title:
        fig.suptitle(title)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def save_placement_map(scores, path, background=None, title=None):
    """Draw ranked candidate sets over the domain; rank 1 is highlighted."""
    if not scores:
        raise ValueError("no placement scores to draw")
    part = scores[0].candidate.partition
    fig, ax = plt.subplots(figsize=(6.4, 5.0), dpi=_DPI)
    if background is not None:
        im = ax.imshow(
            _cell_image(background),
            origin="lower",
            extent=_extent(part),
            cmap="cividis",
            interpolation="nearest",
        )
        fig.colorbar(im, ax=ax, shrink=0.85)
    else:
        d = part.domain
        ax.set_xlim(d.xmin, d.xmax)
        ax.set_ylim(d.ymin, d.ymax)
        ax.set_aspect("equal")
    for score in sorted(scores, key=lambda s: -(s.rank or 0)):
        best = score.rank == 1
        ax.add_collection(
            PatchCollection(
                _cellset_patches(score.candidate),
                facecolor="none",
                edgecolor="crimson" if best else "lightsteelblue",
                linewidth=1.8 if best else 0.7,
            )
        )
        ctr = part.cell_centers()[score.candidate.indices].mean(axis=0)
        ax.annotate(
            str(score.rank),
            ctr,
            color="crimson" if best else "slategray",
            fontsize=9,
            ha="center",
            va="center",
        )
    if title:
        ax.set_title(title)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path
