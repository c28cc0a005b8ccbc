"""Uniform box partitions of a rectangular domain and fields over them.

Cells are half-open boxes [x_i, x_{i+1}) x [y_j, y_{j+1}) except that the
last cell along each axis also includes the closing boundary, so the cells
tile the domain exactly.  Cell indices are row-major: ``idx = iy * px + ix``.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import EmptyCellSetError, PartitionMismatchError
from .field import Domain


@dataclass(frozen=True)
class BoxPartition:
    """px-by-py uniform box partition of a domain."""

    domain: Domain
    px: int
    py: int

    def __post_init__(self):
        if self.px < 1 or self.py < 1:
            raise ValueError(f"partition dims must be >= 1, got {self.px}x{self.py}")

    @property
    def n_cells(self):
        return self.px * self.py

    @property
    def hx(self):
        return self.domain.width / self.px

    @property
    def hy(self):
        return self.domain.height / self.py

    @property
    def cell_measure(self):
        """Area of one cell: width * height / (px * py)."""
        return self.domain.width * self.domain.height / (self.px * self.py)

    def cell_centers(self):
        """(N, 2) array of cell centers in row-major order."""
        idx = np.arange(self.n_cells)
        ix = idx % self.px
        iy = idx // self.px
        cx = self.domain.xmin + (ix + 0.5) * self.hx
        cy = self.domain.ymin + (iy + 0.5) * self.hy
        return np.column_stack([cx, cy])

    def cell_corners(self):
        """(N, 2) array of lower-left cell corners in row-major order."""
        idx = np.arange(self.n_cells)
        ix = idx % self.px
        iy = idx // self.px
        return np.column_stack(
            [self.domain.xmin + ix * self.hx, self.domain.ymin + iy * self.hy]
        )


def build_partition(domain, px, py):
    """Construct a px-by-py box partition of the domain."""
    return BoxPartition(domain, int(px), int(py))


def locate_many(partition, pts):
    """Row-major cell index for each point; -1 marks points outside.

    Points on a shared interior edge belong to the right/upper cell; the
    domain's closing boundary belongs to the last cell along its axis.
    NaN coordinates (absorbed trajectories) locate as outside.
    """
    pts = np.asarray(pts, dtype=float)
    x, y = pts[..., 0], pts[..., 1]
    dom = partition.domain
    inside = (x >= dom.xmin) & (x <= dom.xmax) & (y >= dom.ymin) & (y <= dom.ymax)
    with np.errstate(invalid="ignore"):
        ix = np.floor((x - dom.xmin) / partition.hx)
        iy = np.floor((y - dom.ymin) / partition.hy)
    ix = np.clip(np.nan_to_num(ix, nan=-1.0), 0, partition.px - 1).astype(np.int64)
    iy = np.clip(np.nan_to_num(iy, nan=-1.0), 0, partition.py - 1).astype(np.int64)
    out = iy * partition.px + ix
    return np.where(inside, out, -1)


def locate(partition, p):
    """Cell index containing a single point, or None if outside."""
    idx = int(locate_many(partition, np.asarray(p, dtype=float)[None, :])[0])
    return None if idx < 0 else idx


@dataclass(frozen=True)
class CellSet:
    """A subset of partition cells, stored as sorted unique indices."""

    partition: BoxPartition
    indices: np.ndarray = dc_field(compare=False)

    def __post_init__(self):
        idx = np.unique(np.asarray(self.indices, dtype=np.int64))
        if len(idx) and (idx[0] < 0 or idx[-1] >= self.partition.n_cells):
            raise ValueError(
                f"cell index out of range 0..{self.partition.n_cells - 1}"
            )
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return len(self.indices)

    def __eq__(self, other):
        if not isinstance(other, CellSet):
            return NotImplemented
        return self.partition == other.partition and np.array_equal(
            self.indices, other.indices
        )


def rect_to_cellset(partition, rect):
    """Cells whose centers fall inside a rectangle (inclusive edges).

    ``rect`` is a Domain or a (xmin, ymin, xmax, ymax) sequence; zero-area
    rectangles are allowed.  Raises ``EmptyCellSetError`` when no center is
    covered, which is the 'empty actuation set' failure mode for rectangles
    that slip between centers.
    """
    if isinstance(rect, Domain):
        xmin, ymin, xmax, ymax = rect.xmin, rect.ymin, rect.xmax, rect.ymax
    else:
        xmin, ymin, xmax, ymax = (float(v) for v in rect)
    if xmin > xmax or ymin > ymax:
        raise ValueError(f"inverted rectangle [{xmin}, {xmax}] x [{ymin}, {ymax}]")
    centers = partition.cell_centers()
    inside = (
        (centers[:, 0] >= xmin) & (centers[:, 0] <= xmax)
        & (centers[:, 1] >= ymin) & (centers[:, 1] <= ymax)
    )
    idx = np.flatnonzero(inside)
    if len(idx) == 0:
        raise EmptyCellSetError(
            f"empty actuation set: rectangle [{xmin}, {xmax}] x "
            f"[{ymin}, {ymax}] covers no cell center"
        )
    return CellSet(partition, idx)


@dataclass(frozen=True)
class ScalarField:
    """Piecewise-constant scalar field: one finite value per cell."""

    partition: BoxPartition
    values: np.ndarray = dc_field(compare=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.partition.n_cells,):
            raise ValueError(
                f"expected {self.partition.n_cells} cell values, got shape {vals.shape}"
            )
        if not np.isfinite(vals).all():
            raise ValueError("scalar field values must be finite")
        object.__setattr__(self, "values", vals)

    def __eq__(self, other):
        if not isinstance(other, ScalarField):
            return NotImplemented
        return self.partition == other.partition and np.array_equal(
            self.values, other.values
        )


def indicator(cells):
    """Indicator field of a cell set: 1 on its cells, 0 elsewhere."""
    vals = np.zeros(cells.partition.n_cells)
    vals[cells.indices] = 1.0
    return ScalarField(cells.partition, vals)


def measure(cells):
    """Lebesgue measure of a cell set (cell count times cell area)."""
    return len(cells.indices) * cells.partition.cell_measure


def integrate(fld, over):
    """Integral of a scalar field over a cell set.

    Computed as cell_measure times the plain sum of cell values so that
    integrating an indicator over its own set equals the set's measure
    exactly.
    """
    if fld.partition != over.partition:
        raise PartitionMismatchError("field and cell set use different partitions")
    return fld.partition.cell_measure * float(np.sum(fld.values[over.indices]))


def check_same_partition(a, b, what="objects"):
    """Raise PartitionMismatchError unless a and b share one partition."""
    if a.partition != b.partition:
        raise PartitionMismatchError(f"{what} use different partitions")


# -- serialization ----------------------------------------------------------


def write_field_csv(fld, path):
    """Write a scalar field as 'cx,cy,value' rows in row-major cell order."""
    centers = fld.partition.cell_centers()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("cx,cy,value\n")
        for (cx, cy), val in zip(centers, fld.values):
            fh.write(f"{float(cx)!r},{float(cy)!r},{float(val)!r}\n")


def read_field_csv(partition, path):
    """Read a 'cx,cy,value' CSV back onto a known partition."""
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    data = np.atleast_2d(data)
    if data.shape != (partition.n_cells, 3):
        raise ValueError(
            f"{path}: expected {partition.n_cells} rows of cx,cy,value, got shape {data.shape}"
        )
    centers = partition.cell_centers()
    scale = max(partition.hx, partition.hy)
    if np.abs(data[:, :2] - centers).max() > 1e-9 * scale:
        raise ValueError(f"{path}: cell centers do not match the partition")
    return ScalarField(partition, data[:, 2])


def cellset_from_spec(partition, spec):
    """Build a CellSet from its JSON object form.

    Accepts ``{"rect": [xmin, ymin, xmax, ymax]}`` or ``{"cells": [i, ...]}``.
    """
    if not isinstance(spec, dict):
        raise ValueError(f"cell set spec must be an object, got {type(spec).__name__}")
    if "rect" in spec:
        vals = spec["rect"]
        if len(vals) != 4:
            raise ValueError("rect must be [xmin, ymin, xmax, ymax]")
        return rect_to_cellset(partition, vals)
    if "cells" in spec:
        return CellSet(partition, np.asarray(spec["cells"], dtype=np.int64))
    raise ValueError("cell set spec needs a 'rect' or 'cells' key")


def cellset_to_spec(cells):
    """JSON object form of a cell set (explicit cell list)."""
    return {"cells": [int(i) for i in cells.indices]}
