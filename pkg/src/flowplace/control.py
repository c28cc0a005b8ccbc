"""Minimum-energy steering through an actuation set.

The discrete control-to-state map injects dt * u_k on the actuation cells
at step k and lets the transfer operator carry it forward, so the K-step
reachability composition is dt * sum_m PF^m o diag(chi_B) o Koopman^m.  On
deterministic (permutation) operators that composition is exactly pointwise
multiplication by the K-step controllability field, which motivates the
cheap 'multiplication' synthesis; the 'exact' method solves the stacked
control-to-terminal map by least squares, recovering the minimum-energy
schedule whenever the target is reachable.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptyCellSetError,
    SingularGramianError,
    UnreachableTargetError,
)
from .gramian import controllability_gramian
from .partition import CellSet, ScalarField, check_same_partition

MULTIPLICATION = "multiplication"
EXACT = "exact"

#: size caps for the dense least-squares steering solve
_EXACT_MAX_CELLS = 2000
_EXACT_MAX_UNKNOWNS = 4000


@dataclass(frozen=True)
class ControlSchedule:
    """Per-step control values on an actuation set.

    ``u`` has shape (K, N) with row k holding the step-k control density;
    entries off the actuation cells must be exactly zero.
    """

    B: CellSet
    dt: float
    u: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        n = self.B.partition.n_cells
        if u.ndim != 2 or u.shape[1] != n:
            raise ValueError(f"u must be (K, {n}), got {u.shape}")
        if not np.isfinite(u).all():
            raise ValueError("control values must be finite")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        off = np.ones(n, dtype=bool)
        off[self.B.indices] = False
        if u.shape[0] and np.any(u[:, off] != 0.0):
            raise ValueError("control values must vanish off the actuation set")
        object.__setattr__(self, "u", u)

    @property
    def steps(self):
        return self.u.shape[0]


@dataclass(frozen=True)
class SteeringResult:
    """Synthesized schedule with its terminal state and diagnostics."""

    schedule: ControlSchedule
    terminal: ScalarField
    target_error: float
    energy: float
    method: str


def zero_schedule(B, dt, K):
    """All-zero schedule of K steps on an actuation set."""
    return ControlSchedule(B, dt, np.zeros((int(K), B.partition.n_cells)))


def control_energy(schedule):
    """Squared L2 size of a schedule: dt * sum_k sum_i u_k[i]^2 * cell area."""
    m = schedule.B.partition.cell_measure
    return schedule.dt * float(np.sum(schedule.u**2)) * m


def simulate_forward(op, rho0, schedule):
    """Run the controlled recursion rho_{k+1} = PF(rho_k) + dt * u_k.

    Returns the list of K+1 states including the initial one.  With an
    all-zero schedule this reproduces plain forward evolution exactly.
    """
    check_same_partition(op, rho0, "operator and initial density")
    check_same_partition(op, schedule.B, "operator and actuation set")
    if schedule.dt != op.dt:
        raise ValueError(f"schedule dt {schedule.dt} does not match operator dt {op.dt}")
    forward = op.forward_matrix()
    states = [rho0]
    vals = rho0.values
    for k in range(schedule.steps):
        vals = forward @ vals + op.dt * schedule.u[k]
        states.append(ScalarField(op.partition, vals))
    return states


def _l2(partition, vals):
    return float(np.sqrt(np.sum(vals**2) * partition.cell_measure))


def _reach_columns(op, b_idx, K):
    """Dense control-to-terminal map of the K-step controlled recursion.

    Column (k, j) holds dt * PF^{K-1-k} applied to the unit mass on the
    j-th actuation cell, so the matrix times a flattened schedule gives the
    terminal contribution of the control.  Shape (N, K*|B|), step-major
    columns; cost is K sparse applications to an N x |B| block.
    """
    n = op.n_cells
    nb = len(b_idx)
    blk = np.zeros((n, nb))
    blk[b_idx, np.arange(nb)] = op.dt
    forward = op.forward_matrix()
    blocks = [blk]
    for _ in range(K - 1):
        blk = forward @ blk
        blocks.append(blk)
    return np.concatenate(blocks[::-1], axis=1)


def _backpropagate(op, b_mask, w, K):
    """Schedule u_k = chi_B * Koopman^{K-1-k}(w) from a terminal weight w."""
    n = op.n_cells
    stages = np.empty((K, n))
    z = w.copy()
    for j in range(K):
        stages[j] = z
        if j < K - 1:
            z = op.matrix @ z
    u = np.zeros((K, n))
    for k in range(K):
        u[k, b_mask] = stages[K - 1 - k][b_mask]
    return u


def min_energy_control(
    op,
    rho0,
    rho_target,
    B,
    K,
    method=MULTIPLICATION,
    support_rtol=1e-9,
    reach_rtol=1e-6,
    solver_rtol=1e-8,
):
    """Synthesize the control schedule steering rho0 toward rho_target.

    Parameters
    ----------
    op : TransferOperator
    rho0, rho_target : ScalarField
        Initial and desired terminal densities on the operator's partition.
    B : CellSet
        Non-empty actuation set; control acts only on its cells.
    K : int
        Number of steps; the horizon is K * dt.
    method : str
        ``MULTIPLICATION`` treats the K-step controllability field as a
        multiplication operator and divides by it on its support (cheap,
        exact on deterministic operators, O(h)-accurate otherwise).
        ``EXACT`` solves the dense stacked control-to-terminal map by
        minimum-norm least squares (small instances only) and steers
        exactly when the target is reachable.
    support_rtol : float
        Cells with occupation below this fraction of the field maximum are
        treated as outside the reachable support.
    reach_rtol : float
        Largest tolerated defect (relative to the defect maximum) outside
        the support before the target is declared unreachable.
    solver_rtol : float
        Accepted relative residual of the least-squares steering solve.

    Returns
    -------
    SteeringResult
        Whose reported energy is exactly ``control_energy`` of the returned
        schedule, and whose terminal state comes from ``simulate_forward``.
    """
    check_same_partition(op, rho0, "operator and initial density")
    check_same_partition(op, rho_target, "operator and target density")
    check_same_partition(op, B, "operator and actuation set")
    if len(B) == 0:
        raise EmptyCellSetError("empty actuation set")
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if method not in (MULTIPLICATION, EXACT):
        raise ValueError(f"unknown method {method!r}")
    K = int(K)

    forward = op.forward_matrix()
    free = rho0.values.copy()
    for _ in range(K):
        free = forward @ free
    defect = rho_target.values - free

    gram = controllability_gramian(op, B, K).field.values
    supp_mask = gram > support_rtol * gram.max()
    defect_max = float(np.abs(defect).max())

    if defect_max == 0.0:
        schedule = zero_schedule(B, op.dt, K)
        terminal = simulate_forward(op, rho0, schedule)[-1]
        err = _l2(op.partition, terminal.values - rho_target.values)
        denom = max(_l2(op.partition, rho_target.values), 1.0)
        return SteeringResult(schedule, terminal, err / denom, 0.0, method)

    off_supp = float(np.abs(defect[~supp_mask]).max()) if (~supp_mask).any() else 0.0
    if off_supp > reach_rtol * defect_max:
        raise UnreachableTargetError(
            "target outside reachable space of the actuation set: defect has "
            f"mass {off_supp:.3e} beyond the K-step occupation support"
        )

    if method == MULTIPLICATION:
        b_mask = np.zeros(op.n_cells, dtype=bool)
        b_mask[B.indices] = True
        w = np.zeros(op.n_cells)
        w[supp_mask] = defect[supp_mask] / gram[supp_mask]
        u = _backpropagate(op, b_mask, w, K)
    else:
        nb = len(B)
        if op.n_cells > _EXACT_MAX_CELLS or K * nb > _EXACT_MAX_UNKNOWNS:
            raise ValueError(
                f"exact method limited to {_EXACT_MAX_CELLS} cells and "
                f"{_EXACT_MAX_UNKNOWNS} schedule unknowns, got {op.n_cells} "
                f"and {K * nb}; use the multiplication method"
            )
        reach = _reach_columns(op, B.indices, K)
        sol, _, _, sv = np.linalg.lstsq(reach, defect, rcond=None)
        rel_res = float(
            np.linalg.norm(reach @ sol - defect) / np.linalg.norm(defect)
        )
        if rel_res > solver_rtol:
            cond = float(sv[0] / sv[-1]) if len(sv) and sv[-1] > 0 else np.inf
            raise SingularGramianError(
                f"reachability columns cannot attain the defect (relative "
                f"residual {rel_res:.3e}, condition estimate {cond:.3e})"
            )
        u = np.zeros((K, op.n_cells))
        u[:, B.indices] = sol.reshape(K, nb)

    schedule = ControlSchedule(B, op.dt, u)
    terminal = simulate_forward(op, rho0, schedule)[-1]
    err = _l2(op.partition, terminal.values - rho_target.values)
    denom = max(
        _l2(op.partition, rho_target.values), _l2(op.partition, defect), 1e-300
    )
    return SteeringResult(
        schedule, terminal, err / denom, control_energy(schedule), method
    )
