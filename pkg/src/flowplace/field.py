"""Steady velocity fields on rectangular grids and point advection.

A velocity field is stored nodewise on a uniform rectilinear grid and
evaluated anywhere in the domain by bilinear interpolation, so fields that
are linear in x and y are reproduced exactly.  Trajectories are integrated
with a fixed-substep RK4 (or forward Euler) scheme; what happens at the
domain boundary is controlled per field by its boundary policy.
"""

import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError, SnapshotFormatError

#: Trajectories that hit the boundary are projected onto it and continue.
CLAMP_TO_BOUNDARY = "clamp-to-boundary"
#: Trajectories that leave the domain are dropped and reported as outside.
ABSORB_OUTSIDE = "absorb-outside"

_POLICIES = (CLAMP_TO_BOUNDARY, ABSORB_OUTSIDE)

#: Sentinel coordinates returned by ``flow_map`` for an absorbed point.
OUTSIDE = np.array([np.nan, np.nan])


@dataclass(frozen=True)
class Domain:
    """Axis-aligned rectangle [xmin, xmax] x [ymin, ymax] in meters."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise ValueError(
                f"degenerate domain [{self.xmin}, {self.xmax}] x "
                f"[{self.ymin}, {self.ymax}]"
            )

    @property
    def width(self):
        return self.xmax - self.xmin

    @property
    def height(self):
        return self.ymax - self.ymin

    def contains(self, pts):
        """Vectorized membership test for an (..., 2) array of points."""
        pts = np.asarray(pts)
        x, y = pts[..., 0], pts[..., 1]
        return (
            (x >= self.xmin) & (x <= self.xmax)
            & (y >= self.ymin) & (y <= self.ymax)
        )


@dataclass(frozen=True)
class FlowConfig:
    """Advection settings: integrator substep and scheme ('rk4' or 'euler')."""

    dt_integrate: float
    method: str = "rk4"

    def __post_init__(self):
        if self.dt_integrate <= 0:
            raise ValueError(f"dt_integrate must be positive, got {self.dt_integrate}")
        if self.method not in ("rk4", "euler"):
            raise ValueError(f"unknown integrator {self.method!r}")


class VectorField:
    """Steady 2-D velocity field sampled nodewise on a uniform grid.

    Parameters
    ----------
    domain : Domain
        Spatial extent; grid nodes include the boundary.
    u, v : (ny, nx) ndarray
        Velocity components at grid nodes, row-major (y outer, x inner).
    boundary_policy : str
        ``CLAMP_TO_BOUNDARY`` (default) or ``ABSORB_OUTSIDE``.
    """

    def __init__(self, domain, u, v, boundary_policy=CLAMP_TO_BOUNDARY):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        if u.ndim != 2 or u.shape != v.shape:
            raise ValueError(f"u and v must share a 2-D shape, got {u.shape} and {v.shape}")
        ny, nx = u.shape
        if nx < 2 or ny < 2:
            raise ValueError(f"grid must be at least 2x2 nodes, got {nx}x{ny}")
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise ValueError("velocity components must be finite")
        if boundary_policy not in _POLICIES:
            raise ValueError(f"unknown boundary policy {boundary_policy!r}")
        self.domain = domain
        self.u = u
        self.v = v
        self.nx = nx
        self.ny = ny
        self.boundary_policy = boundary_policy

    @property
    def node_x(self):
        return np.linspace(self.domain.xmin, self.domain.xmax, self.nx)

    @property
    def node_y(self):
        return np.linspace(self.domain.ymin, self.domain.ymax, self.ny)

    def max_speed(self):
        return float(np.sqrt(self.u**2 + self.v**2).max())


def velocities_at(field, pts):
    """Bilinear velocity interpolation for an (M, 2) array of points.

    Points outside the domain are evaluated at the nearest boundary point.
    Returns an (M, 2) array of (u, v).
    """
    pts = np.asarray(pts, dtype=float)
    dom = field.domain
    x = np.clip(pts[..., 0], dom.xmin, dom.xmax)
    y = np.clip(pts[..., 1], dom.ymin, dom.ymax)
    # node spacing; nx, ny >= 2 guaranteed
    dx = dom.width / (field.nx - 1)
    dy = dom.height / (field.ny - 1)
    tx = (x - dom.xmin) / dx
    ty = (y - dom.ymin) / dy
    i0 = np.clip(np.floor(tx).astype(np.int64), 0, field.nx - 2)
    j0 = np.clip(np.floor(ty).astype(np.int64), 0, field.ny - 2)
    fx = tx - i0
    fy = ty - j0
    w00 = (1.0 - fx) * (1.0 - fy)
    w10 = fx * (1.0 - fy)
    w01 = (1.0 - fx) * fy
    w11 = fx * fy
    out = np.empty(pts.shape, dtype=float)
    for k, comp in enumerate((field.u, field.v)):
        out[..., k] = (
            w00 * comp[j0, i0]
            + w10 * comp[j0, i0 + 1]
            + w01 * comp[j0 + 1, i0]
            + w11 * comp[j0 + 1, i0 + 1]
        )
    return out


def velocity_at(field, p):
    """Interpolated velocity (u, v) at a single point."""
    return velocities_at(field, np.asarray(p, dtype=float)[None, :])[0]


def _advance(field, pts, h, method):
    """One integrator substep of size h for the points in pts."""
    if method == "rk4":
        k1 = velocities_at(field, pts)
        k2 = velocities_at(field, pts + 0.5 * h * k1)
        k3 = velocities_at(field, pts + 0.5 * h * k2)
        k4 = velocities_at(field, pts + h * k3)
        return pts + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return pts + h * velocities_at(field, pts)


def flow_map_points(field, pts, duration, cfg, visit=None):
    """Advect many points for a signed duration under the field's flow.

    Parameters
    ----------
    field : VectorField
    pts : (M, 2) ndarray
        Starting positions.
    duration : float
        Integration time; negative integrates the time-reversed flow.
    cfg : FlowConfig
        Substep size and scheme.  The final substep is truncated so the
        total advected time is exactly ``duration``.
    visit : callable, optional
        Called as ``visit(pts, alive)`` after every substep (and once at the
        start); used for occupation bookkeeping.

    Returns
    -------
    out : (M, 2) ndarray
        Final positions.  Under ``ABSORB_OUTSIDE``, absorbed points hold NaN.
    alive : (M,) bool ndarray
        False where a point left the domain and was absorbed.
    """
    pts = np.array(pts, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"pts must be (M, 2), got {pts.shape}")
    alive = np.ones(len(pts), dtype=bool)
    absorb = field.boundary_policy == ABSORB_OUTSIDE
    if absorb:
        inside = field.domain.contains(pts)
        pts[~inside] = np.nan
        alive &= inside
    if visit is not None:
        visit(pts, alive)
    if duration == 0:
        return pts, alive

    dom = field.domain
    h_full = math.copysign(cfg.dt_integrate, duration)
    n_full = int(abs(duration) / cfg.dt_integrate)
    remainder = duration - n_full * h_full
    steps = [h_full] * n_full
    if remainder != 0.0:
        steps.append(remainder)

    for h in steps:
        if alive.any():
            moved = _advance(field, pts[alive], h, cfg.method)
            if absorb:
                inside = dom.contains(moved)
                moved[~inside] = np.nan
                pts[alive] = moved
                idx = np.flatnonzero(alive)
                alive[idx[~inside]] = False
            else:
                moved[:, 0] = np.clip(moved[:, 0], dom.xmin, dom.xmax)
                moved[:, 1] = np.clip(moved[:, 1], dom.ymin, dom.ymax)
                pts[alive] = moved
        if visit is not None:
            visit(pts, alive)
    return pts, alive


def flow_map(field, p, duration, cfg):
    """Advect a single point; returns the endpoint or NaN-pair if absorbed."""
    out, _ = flow_map_points(field, np.asarray(p, dtype=float)[None, :], duration, cfg)
    return out[0]


def is_outside(p):
    """True for the sentinel point returned when a trajectory was absorbed."""
    return bool(np.isnan(np.asarray(p)).any())


def divergence_at(field, p, h):
    """Central-difference divergence of the interpolated field at p.

    Requires p to sit at least h away from every boundary so the stencil
    stays inside the domain.
    """
    if h <= 0:
        raise ValueError(f"stencil width must be positive, got {h}")
    p = np.asarray(p, dtype=float)
    dom = field.domain
    if not (
        dom.xmin + h <= p[0] <= dom.xmax - h
        and dom.ymin + h <= p[1] <= dom.ymax - h
    ):
        raise ValueError(f"point {p.tolist()} closer than h={h} to the boundary")
    ux = (
        velocity_at(field, p + [h, 0.0])[0] - velocity_at(field, p - [h, 0.0])[0]
    ) / (2.0 * h)
    vy = (
        velocity_at(field, p + [0.0, h])[1] - velocity_at(field, p - [0.0, h])[1]
    ) / (2.0 * h)
    return float(ux + vy)


# -- snapshot I/O -----------------------------------------------------------

_SNAPSHOT_HEADER = ("x", "y", "u", "v")


def _parse_snapshot(path):
    """Read one x,y,u,v CSV into coordinate and velocity arrays."""
    xs, ys, us, vs = [], [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        cols = tuple(tok.strip() for tok in header.strip().split(","))
        if cols != _SNAPSHOT_HEADER:
            raise SnapshotFormatError(f"{path}: header must be 'x,y,u,v', got {header.strip()!r}")
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            toks = line.split(",")
            if len(toks) != 4:
                raise SnapshotFormatError(f"{path}, line {lineno}: expected 4 comma-separated values")
            try:
                row = [float(t) for t in toks]
            except ValueError:
                raise SnapshotFormatError(f"{path}, line {lineno}: unparseable number") from None
            if not all(math.isfinite(r) for r in row):
                raise SnapshotFormatError(f"{path}, line {lineno}: non-finite value")
            xs.append(row[0])
            ys.append(row[1])
            us.append(row[2])
            vs.append(row[3])
    if not xs:
        raise SnapshotFormatError(f"{path}: no data rows")
    return (np.array(xs), np.array(ys), np.array(us), np.array(vs))


def _check_uniform(coords, path, axis):
    """Uniform spacing check with 1e-9 relative tolerance."""
    if len(coords) < 2:
        raise SnapshotFormatError(f"{path}: grid must have at least 2 distinct {axis} values")
    diffs = np.diff(coords)
    mean = diffs.mean()
    if mean <= 0 or np.abs(diffs - mean).max() > 1e-9 * abs(mean):
        raise SnapshotFormatError(f"{path}: {axis} coordinates are not uniformly spaced")


def load_snapshot(path, boundary_policy=CLAMP_TO_BOUNDARY):
    """Load a single velocity snapshot CSV (header x,y,u,v, row-major rows)."""
    x, y, u, v = _parse_snapshot(path)
    ux = np.unique(x)
    uy = np.unique(y)
    nx, ny = len(ux), len(uy)
    if nx * ny != len(x):
        raise SnapshotFormatError(
            f"{path}: expected {nx}x{ny}={nx * ny} rows for the inferred grid, got {len(x)}"
        )
    _check_uniform(ux, path, "x")
    _check_uniform(uy, path, "y")
    scale = max(abs(ux).max(), abs(uy).max(), 1.0)
    expect_x = np.tile(ux, ny)
    expect_y = np.repeat(uy, nx)
    if (np.abs(x - expect_x).max() > 1e-9 * scale
            or np.abs(y - expect_y).max() > 1e-9 * scale):
        raise SnapshotFormatError(f"{path}: rows must be row-major (y outer, x inner)")
    domain = Domain(float(ux[0]), float(uy[0]), float(ux[-1]), float(uy[-1]))
    return VectorField(
        domain, u.reshape(ny, nx), v.reshape(ny, nx), boundary_policy=boundary_policy
    )


def load_snapshots(paths, boundary_policy=CLAMP_TO_BOUNDARY):
    """Load several snapshot CSVs sharing one grid.

    Raises ``GridMismatchError`` ('inconsistent grids') if dimensions or
    extents differ between files.
    """
    paths = list(paths)
    if not paths:
        raise SnapshotFormatError("no snapshot files given")
    fields = [load_snapshot(p, boundary_policy=boundary_policy) for p in paths]
    first = fields[0]
    for path, fld in zip(paths[1:], fields[1:]):
        if (fld.nx, fld.ny) != (first.nx, first.ny) or fld.domain != first.domain:
            raise GridMismatchError(f"inconsistent grids: {paths[0]} vs {path}")
    return fields


def save_snapshot(field, path):
    """Write a field as a snapshot CSV (full float precision)."""
    xs = field.node_x
    ys = field.node_y
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("x,y,u,v\n")
        for j in range(field.ny):
            for i in range(field.nx):
                fh.write(
                    f"{float(xs[i])!r},{float(ys[j])!r},"
                    f"{float(field.u[j, i])!r},{float(field.v[j, i])!r}\n"
                )


def mean_field(snapshots):
    """Nodewise arithmetic mean of a non-empty list of snapshots.

    The result inherits grid, domain, and boundary policy from the inputs,
    which must all agree.
    """
    snapshots = list(snapshots)
    if not snapshots:
        raise ValueError("mean_field needs at least one snapshot")
    first = snapshots[0]
    for fld in snapshots[1:]:
        if (fld.nx, fld.ny) != (first.nx, first.ny) or fld.domain != first.domain:
            raise GridMismatchError("inconsistent grids")
    u = np.mean(np.stack([f.u for f in snapshots]), axis=0)
    v = np.mean(np.stack([f.v for f in snapshots]), axis=0)
    return VectorField(first.domain, u, v, boundary_policy=first.boundary_policy)


# -- analytic built-ins -----------------------------------------------------

_UNIFORM_RE = re.compile(r"^uniform\(\s*([^,()]+)\s*,\s*([^,()]+)\s*\)$")


def analytic_field(name, domain, nx=33, ny=33, boundary_policy=CLAMP_TO_BOUNDARY):
    """Sample a named analytic velocity field onto a node grid.

    Supported names: ``linear-sink`` (-x, -y), ``rotation`` (-y, x),
    ``saddle`` (x, -y), and ``uniform(ux,uy)``.  All are linear or constant,
    so bilinear interpolation reproduces them exactly.
    """
    xs = np.linspace(domain.xmin, domain.xmax, nx)
    ys = np.linspace(domain.ymin, domain.ymax, ny)
    X, Y = np.meshgrid(xs, ys)
    if name == "linear-sink":
        u, v = -X, -Y
    elif name == "rotation":
        u, v = -Y, X
    elif name == "saddle":
        u, v = X, -Y
    else:
        m = _UNIFORM_RE.match(name.strip())
        if m is None:
            raise ValueError(f"unknown analytic field {name!r}")
        try:
            ux, uy = float(m.group(1)), float(m.group(2))
        except ValueError:
            raise ValueError(f"bad uniform components in {name!r}") from None
        u = np.full_like(X, ux)
        v = np.full_like(Y, uy)
    return VectorField(domain, u, v, boundary_policy=boundary_policy)
