"""Controllability and observability fields as occupation-time sums.

The finite-horizon controllability field of an actuation set B accumulates
the forward evolution of B's indicator over K steps (left-endpoint rule in
time), giving per cell the expected time the flow keeps actuation mass
there.  The observability field of a sensing set A is the mirrored sum of
backward (observable) evolutions.  Infinite horizons are truncated sums
with a convergence certificate: a flow with no route out of the domain
never converges and is reported as such.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DivergentHorizonError, EmptyCellSetError
from .partition import CellSet, ScalarField, check_same_partition, indicator, integrate

CONTROLLABILITY = "controllability"
OBSERVABILITY = "observability"

#: fraction of max_steps a cell may stay high before the sum is declared stuck
_PERSIST_FRACTION = 0.25


@dataclass(frozen=True)
class GramianField:
    """Occupation-time field of a source set under repeated transfer.

    ``horizon_steps`` is the step count K for finite horizons and None for
    infinite ones; ``residual`` is the sup-norm defect of the truncated
    infinite sum (None for finite horizons).
    """

    kind: str
    horizon_steps: int | None
    source_set: CellSet
    dt: float
    field: ScalarField
    residual: float | None = None

    def __post_init__(self):
        if self.kind not in (CONTROLLABILITY, OBSERVABILITY):
            raise ValueError(f"unknown gramian kind {self.kind!r}")
        if self.field.values.min() < 0:
            raise ValueError("gramian field values must be nonnegative")

    @property
    def infinite(self):
        return self.horizon_steps is None


def _require_nonempty(cells, role):
    if len(cells) == 0:
        raise EmptyCellSetError(f"empty {role} set")


def _finite_sum(step_matrix, start, K, dt, quadrature):
    """dt-weighted K-term sum of repeated applications of step_matrix."""
    if quadrature not in ("left", "trapezoid"):
        raise ValueError(f"unknown quadrature {quadrature!r}")
    acc = np.zeros_like(start)
    term = start.copy()
    if quadrature == "left":
        for k in range(K):
            acc += term
            if k < K - 1:
                term = step_matrix @ term
    else:
        # trapezoid uses K+1 samples with half weights at both ends
        for k in range(K + 1):
            acc += 0.5 * term if k in (0, K) else term
            if k < K:
                term = step_matrix @ term
    return dt * acc


def controllability_gramian(op, B, K, quadrature="left"):
    """Finite-horizon controllability field of an actuation set.

    Parameters
    ----------
    op : TransferOperator
    B : CellSet
        Non-empty actuation set on the operator's partition.
    K : int
        Number of transfer steps; the horizon is K * dt.
    quadrature : str
        'left' (default) accumulates steps 0..K-1; 'trapezoid' uses K+1
        samples with half weights at the ends.

    Returns
    -------
    GramianField
        Nonnegative; with K = 0 identically zero.
    """
    check_same_partition(op, B, "operator and actuation set")
    _require_nonempty(B, "actuation")
    if K < 0:
        raise ValueError(f"K must be >= 0, got {K}")
    vals = _finite_sum(op.forward_matrix(), indicator(B).values, int(K), op.dt, quadrature)
    return GramianField(CONTROLLABILITY, int(K), B, op.dt, ScalarField(op.partition, vals))


def observability_gramian(op, A, K, quadrature="left"):
    """Finite-horizon observability field of a sensing set (Koopman sum)."""
    check_same_partition(op, A, "operator and sensing set")
    _require_nonempty(A, "sensing")
    if K < 0:
        raise ValueError(f"K must be >= 0, got {K}")
    vals = _finite_sum(op.matrix, indicator(A).values, int(K), op.dt, quadrature)
    return GramianField(OBSERVABILITY, int(K), A, op.dt, ScalarField(op.partition, vals))


def _truncated_infinite_sum(step_matrix, start, dt, tol, max_steps):
    """Sum dt * step^k(start) until the next term is below tol in sup norm.

    Returns (values, residual, converged, steps_taken).  A stuck sum is
    flagged early: any cell whose term stays above 10x the convergence
    level for a quarter of max_steps cannot die off in time.
    """
    acc = np.zeros_like(start)
    term = start.copy()
    persist = np.zeros(len(start), dtype=np.int64)
    persist_limit = max(100, int(max_steps * _PERSIST_FRACTION))
    high_level = 10.0 * tol / dt
    for k in range(int(max_steps)):
        acc += term
        term = step_matrix @ term
        residual = dt * float(np.abs(term).max())
        if residual <= tol:
            return dt * acc, residual, True, k + 1
        high = np.abs(term) >= high_level
        persist[high] += 1
        persist[~high] = 0
        if persist.max() >= persist_limit:
            return dt * acc, residual, False, k + 1
    return dt * acc, dt * float(np.abs(term).max()), False, int(max_steps)


def _solve_infinite(step_matrix, start, dt, tol):
    """Directly solve (I - step) x = dt * start for the infinite sum."""
    n = len(start)
    system = (sp.identity(n, format="csc") - step_matrix.tocsc()).tocsc()
    with np.errstate(all="ignore"), warnings.catch_warnings():
        # exact singularity is reported as DivergentHorizonError below
        warnings.simplefilter("ignore", spla.MatrixRankWarning)
        x = spla.spsolve(system, dt * start)
    if not np.isfinite(x).all():
        raise DivergentHorizonError(
            "divergent horizon: direct solve failed; the flow has no "
            "uniformly decaying occupation of the source set"
        )
    residual = float(np.abs(system @ x - dt * start).max())
    if residual > tol:
        raise DivergentHorizonError(
            f"divergent horizon: direct solve residual {residual:.3e} exceeds {tol:.3e}"
        )
    # tiny negative round-off is clipped; anything larger is a real failure
    floor = x.min()
    if floor < -1e-12 * max(x.max(), 1.0):
        raise DivergentHorizonError(
            f"divergent horizon: solved occupation field is negative ({floor:.3e})"
        )
    return np.maximum(x, 0.0), residual


def _infinite_gramian(op, cells, kind, tol, max_steps, method):
    step = op.forward_matrix() if kind == CONTROLLABILITY else op.matrix
    start = indicator(cells).values
    if method == "solve":
        vals, residual = _solve_infinite(step, start, op.dt, tol)
    elif method == "sum":
        vals, residual, converged, steps = _truncated_infinite_sum(
            step, start, op.dt, tol, max_steps
        )
        if not converged:
            raise DivergentHorizonError(
                f"divergent horizon: occupation sum residual {residual:.3e} after "
                f"{steps} steps; the flow does not uniformly drain the source set"
            )
    else:
        raise ValueError(f"unknown method {method!r}, expected 'sum' or 'solve'")
    return GramianField(
        kind, None, cells, op.dt, ScalarField(op.partition, vals), residual=residual
    )


def infinite_controllability_gramian(op, B, tol=1e-8, max_steps=100000, method="sum"):
    """Infinite-horizon controllability field of an actuation set.

    The truncated sum (default) doubles as a stability detector: it raises
    ``DivergentHorizonError`` when the forward evolutions of B's indicator
    do not decay, e.g. for a leak-free recirculating flow.  ``method='solve'``
    uses a direct sparse solve of (I - P') x = dt * indicator instead.
    On success the sup-norm residual of the defining fixed-point equation
    is at most tol.
    """
    check_same_partition(op, B, "operator and actuation set")
    _require_nonempty(B, "actuation")
    return _infinite_gramian(op, B, CONTROLLABILITY, tol, max_steps, method)


def infinite_observability_gramian(op, A, tol=1e-8, max_steps=100000, method="sum"):
    """Infinite-horizon observability field of a sensing set (Koopman sum)."""
    check_same_partition(op, A, "operator and sensing set")
    _require_nonempty(A, "sensing")
    return _infinite_gramian(op, A, OBSERVABILITY, tol, max_steps, method)


def support_measure(g, eps=None):
    """Lebesgue measure of the cells where the field exceeds eps.

    With ``eps=None`` the threshold defaults to 1e-9 times the field
    maximum, trimming spurious positives from Monte Carlo sampling noise.
    """
    vals = g.field.values
    if eps is None:
        eps = 1e-9 * float(vals.max())
    elif eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    return int((vals > eps).sum()) * g.field.partition.cell_measure


def l2_norm(g):
    """Cell-measure weighted L2 norm of the gramian field."""
    m = g.field.partition.cell_measure
    return math.sqrt(float(np.sum(g.field.values**2)) * m)


def residence_time(g, A):
    """Expected cumulative time mass injected on B spends inside A.

    Requires an infinite-horizon controllability field; the residence time
    is its integral over A, in seconds times the source measure scale.
    """
    if g.kind != CONTROLLABILITY or not g.infinite:
        raise ValueError("residence time needs an infinite-horizon controllability field")
    check_same_partition(g.field, A, "gramian field and region")
    return integrate(g.field, A)


# -- stability certificate ---------------------------------------------------


@dataclass(frozen=True)
class StabilityReport:
    """Outcome of the occupation-sum stability certificate."""

    classification: str  # "certified-stable" | "not-certified"
    residual: float
    min_value: float
    solution: ScalarField
    steps: int = 0

    @property
    def certified(self):
        return self.classification == "certified-stable"


def stability_certificate(op, v0, tol=1e-8, max_steps=100000, delta_set=None):
    """Certify decay of trajectories toward a region where v0 vanishes.

    Accumulates v = dt * sum_k Koopman^k(v0) for a nonnegative witness v0
    that is zero on a neighborhood of the attracting region (passed as
    ``delta_set`` to enforce the precondition).  If the sum converges the
    nonnegative v certifies that trajectories spend finite time where
    v0 is positive; if the terms refuse to decay the flow keeps revisiting
    v0's support forever and the report says 'not-certified'.

    Unlike the infinite gramians this never raises on divergence: failing
    to certify is a regular outcome.
    """
    check_same_partition(op, v0, "operator and witness")
    vals0 = v0.values
    if vals0.min() < 0:
        raise ValueError("witness v0 must be nonnegative")
    if delta_set is not None:
        check_same_partition(op, delta_set, "operator and neighborhood set")
        if len(delta_set) and np.any(vals0[delta_set.indices] != 0.0):
            raise ValueError("witness v0 must vanish on the equilibrium neighborhood")
    if vals0.max() == 0.0:
        # nothing to accumulate; trivially certified
        zero = ScalarField(op.partition, np.zeros_like(vals0))
        return StabilityReport("certified-stable", 0.0, 0.0, zero)
    vals, residual, converged, steps = _truncated_infinite_sum(
        op.matrix, vals0, op.dt, tol, max_steps
    )
    solution = ScalarField(op.partition, vals)
    label = "certified-stable" if (converged and vals.min() >= 0.0) else "not-certified"
    return StabilityReport(label, residual, float(vals.min()), solution, steps)
