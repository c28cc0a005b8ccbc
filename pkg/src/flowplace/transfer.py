"""Sparse one-step transfer operators built by the Ulam sampling method.

Entry (i, j) of the matrix is the fraction of cell i whose image under the
time-dt flow lands in cell j, estimated from per-cell sample points.  Sample
mass that exits the domain accrues to a per-row leak, so every row satisfies
row_sum + leak = 1.  Densities evolve forward through the matrix transpose;
observables evolve through the matrix itself, which makes the two actions
exact adjoints under the cell-measure inner product.
"""

import json

import numpy as np
import scipy.sparse as sp

from .errors import PartitionMismatchError
from .field import Domain, FlowConfig, flow_map_points
from .partition import BoxPartition, ScalarField, check_same_partition, locate_many

#: sample points drawn uniformly at random inside each cell
MONTE_CARLO = "monte-carlo"
#: deterministic square sub-grid of points inside each cell
GRID = "grid"

_ROW_SUM_TOL = 1e-12
# cap on advected points per vectorized batch; keeps memory flat
_CHUNK_POINTS = 1 << 20


class TransferOperator:
    """Row-substochastic sparse transfer matrix over a box partition.

    Immutable after construction.  ``matrix`` is CSR in canonical form;
    ``leak[i]`` is the sample fraction of cell i absorbed outside the domain
    within one step of length ``dt``.
    """

    def __init__(self, partition, dt, matrix, leak, samples_per_cell, seed, sampling):
        n = partition.n_cells
        matrix = sp.csr_matrix(matrix, shape=(n, n), dtype=float, copy=True)
        matrix.sum_duplicates()
        matrix.eliminate_zeros()
        matrix.sort_indices()
        leak = np.asarray(leak, dtype=float)
        if leak.shape != (n,):
            raise ValueError(f"leak must have one entry per cell, got shape {leak.shape}")
        if dt <= 0:
            raise ValueError(f"dt must be positive, got {dt}")
        if len(matrix.data) and matrix.data.min() < 0:
            raise ValueError("transfer matrix entries must be nonnegative")
        if leak.min() < 0 or leak.max() > 1:
            raise ValueError("leak fractions must lie in [0, 1]")
        row_sums = np.asarray(matrix.sum(axis=1)).ravel()
        dev = np.abs(row_sums + leak - 1.0).max() if n else 0.0
        if dev > _ROW_SUM_TOL:
            raise ValueError(
                f"row sums plus leak deviate from 1 by {dev:.3e} (tolerance {_ROW_SUM_TOL})"
            )
        self.partition = partition
        self.dt = float(dt)
        self.matrix = matrix
        self.leak = leak
        self.samples_per_cell = int(samples_per_cell)
        self.seed = int(seed)
        self.sampling = sampling
        self._forward = None

    @property
    def n_cells(self):
        return self.partition.n_cells

    def forward_matrix(self):
        """Transpose in CSR form, cached; maps density values forward."""
        if self._forward is None:
            self._forward = self.matrix.T.tocsr()
        return self._forward

    def transposed(self):
        """Operator with the transposed matrix (duality checks).

        Only valid when the transpose is itself substochastic, e.g. for
        permutation or doubly-substochastic matrices.
        """
        col_sums = np.asarray(self.matrix.sum(axis=0)).ravel()
        leak_t = 1.0 - col_sums
        if leak_t.min() < -_ROW_SUM_TOL:
            raise ValueError("transpose is not substochastic; duality form undefined")
        return TransferOperator(
            self.partition,
            self.dt,
            self.matrix.T,
            np.clip(leak_t, 0.0, 1.0),
            self.samples_per_cell,
            self.seed,
            self.sampling,
        )


def _sample_offsets(sampling, samples_per_cell, rng, n_cells_chunk):
    """Unit-square offsets for each sample point of a chunk of cells."""
    if sampling == MONTE_CARLO:
        return rng.random((n_cells_chunk * samples_per_cell, 2))
    g = int(np.ceil(np.sqrt(samples_per_cell)))
    side = (np.arange(g) + 0.5) / g
    ox, oy = np.meshgrid(side, side)
    offs = np.column_stack([ox.ravel(), oy.ravel()])
    return np.tile(offs, (n_cells_chunk, 1))


def effective_samples(sampling, samples_per_cell):
    """Per-cell sample count actually used (grid mode rounds up to a square)."""
    if samples_per_cell < 1:
        raise ValueError(f"samples_per_cell must be >= 1, got {samples_per_cell}")
    if sampling == MONTE_CARLO:
        return int(samples_per_cell)
    if sampling == GRID:
        g = int(np.ceil(np.sqrt(samples_per_cell)))
        return g * g
    raise ValueError(f"unknown sampling mode {sampling!r}")


def build_operator(
    field, partition, dt, samples_per_cell=100, seed=0, cfg=None, sampling=MONTE_CARLO
):
    """Estimate the one-step transfer matrix for a field over a partition.

    Parameters
    ----------
    field : VectorField
        Steady velocity field; its boundary policy decides whether samples
        leaving the domain are clamped (no leak) or absorbed (leak).
    partition : BoxPartition
        Must cover the same domain as the field.
    dt : float
        Transfer step.  A useful step moves fast samples one or two cell
        widths; much larger steps skip cells, much smaller ones stack
        numerical diffusion over many steps.
    samples_per_cell : int
        Sample points per cell.  Grid mode rounds up to the next square
        number.
    seed : int
        Seed for Monte Carlo offsets; ignored by grid sampling.
    cfg : FlowConfig, optional
        Integrator settings; defaults to RK4 with substep dt / 10.
    sampling : str
        ``MONTE_CARLO`` (default) or ``GRID``.

    Returns
    -------
    TransferOperator
        Bit-identical for identical inputs, seed, and sampling mode.
    """
    if partition.domain != field.domain:
        raise PartitionMismatchError("partition and field cover different domains")
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if cfg is None:
        cfg = FlowConfig(dt_integrate=dt / 10.0)
    s_eff = effective_samples(sampling, samples_per_cell)
    n = partition.n_cells
    rng = np.random.default_rng(seed)
    corners = partition.cell_corners()
    scale = np.array([partition.hx, partition.hy])

    cells_per_chunk = max(1, _CHUNK_POINTS // s_eff)
    parts_r, parts_c, parts_cnt = [], [], []
    outside_counts = np.zeros(n, dtype=np.int64)
    for start in range(0, n, cells_per_chunk):
        cells = np.arange(start, min(start + cells_per_chunk, n))
        offs = _sample_offsets(sampling, s_eff, rng, len(cells))
        pts = np.repeat(corners[cells], s_eff, axis=0) + offs * scale
        rows = np.repeat(cells, s_eff)
        landed, _ = flow_map_points(field, pts, dt, cfg)
        cols = locate_many(partition, landed)
        inside = cols >= 0
        outside_counts += np.bincount(rows[~inside], minlength=n)
        keys = rows[inside] * n + cols[inside]
        uniq, cnt = np.unique(keys, return_counts=True)
        parts_r.append(uniq // n)
        parts_c.append(uniq % n)
        parts_cnt.append(cnt)

    data = np.concatenate(parts_cnt).astype(float) / s_eff
    mat = sp.coo_matrix(
        (data, (np.concatenate(parts_r), np.concatenate(parts_c))), shape=(n, n)
    ).tocsr()
    leak = outside_counts.astype(float) / s_eff
    return TransferOperator(partition, dt, mat, leak, s_eff, seed, sampling)


def apply_pf(op, rho):
    """One forward step of a density: rho'_j = sum_i rho_i P_ij.

    Nonnegative densities stay nonnegative and lose exactly the leaked
    fraction of their mass.
    """
    check_same_partition(op, rho, "operator and density")
    return ScalarField(op.partition, op.forward_matrix() @ rho.values)


def apply_koopman(op, g):
    """One backward step of an observable: g'_i = sum_j P_ij g_j.

    Adjoint of ``apply_pf`` under the cell-measure inner product.
    """
    check_same_partition(op, g, "operator and observable")
    return ScalarField(op.partition, op.matrix @ g.values)


def evolve(op, x, steps, mode):
    """Apply ``steps`` transfer steps in 'pf' or 'koopman' mode."""
    if mode not in ("pf", "koopman"):
        raise ValueError(f"mode must be 'pf' or 'koopman', got {mode!r}")
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    step = apply_pf if mode == "pf" else apply_koopman
    for _ in range(int(steps)):
        x = step(op, x)
    return x


# -- persistence ------------------------------------------------------------

_FORMAT_TAG = "ulam-operator-v1"


def save_operator(op, path):
    """Write an operator as a JSON header line plus i,j,value triplets.

    Floats are serialized with shortest round-trip repr, so a save/load
    cycle reproduces the operator bit for bit.
    """
    dom = op.partition.domain
    header = {
        "format": _FORMAT_TAG,
        "N": int(op.n_cells),
        "px": int(op.partition.px),
        "py": int(op.partition.py),
        "domain": [dom.xmin, dom.ymin, dom.xmax, dom.ymax],
        "dt": op.dt,
        "seed": op.seed,
        "samples_per_cell": op.samples_per_cell,
        "sampling": op.sampling,
        "leak": [float(v) for v in op.leak],
    }
    coo = op.matrix.tocoo()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for i, j, val in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i},{j},{float(val)!r}\n")


def load_operator(path):
    """Read an operator written by ``save_operator``."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            header = json.loads(fh.readline())
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: bad operator header: {exc}") from None
        if header.get("format") != _FORMAT_TAG:
            raise ValueError(f"{path}: not a {_FORMAT_TAG} file")
        rows, cols, vals = [], [], []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            toks = line.split(",")
            if len(toks) != 3:
                raise ValueError(f"{path}, line {lineno}: expected i,j,value")
            rows.append(int(toks[0]))
            cols.append(int(toks[1]))
            vals.append(float(toks[2]))
    dom = header["domain"]
    partition = BoxPartition(
        Domain(dom[0], dom[1], dom[2], dom[3]), int(header["px"]), int(header["py"])
    )
    n = partition.n_cells
    if n != int(header["N"]):
        raise ValueError(f"{path}: N does not match px*py")
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    return TransferOperator(
        partition,
        float(header["dt"]),
        mat,
        np.asarray(header["leak"], dtype=float),
        int(header["samples_per_cell"]),
        int(header["seed"]),
        header["sampling"],
    )
