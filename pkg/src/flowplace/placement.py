"""Candidate actuator/sensor patches and their gramian-based ranking.

Candidates are scored by the pair (support measure, L2 norm) of their
occupation field.  Ranking is lexicographic: larger support first, with
supports within a relative tie tolerance treated as equal and broken by
norm.  Which norm direction wins a tie is configurable because both
conventions appear in practice; the default prefers the larger norm.
"""

from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from .field import FlowConfig, flow_map_points
from .partition import CellSet, locate_many
from .gramian import (
    controllability_gramian,
    l2_norm,
    observability_gramian,
    support_measure,
)

ACTUATOR = "actuator"
SENSOR = "sensor"


@dataclass(frozen=True)
class CandidateSpec:
    """Recipe for candidate sets: a patch scan and/or explicit sets.

    ``patch_w`` x ``patch_h`` cell blocks are scanned over the partition at
    the given anchor stride; ``explicit_sets`` are appended verbatim.  Both
    patch dims may be None to rank explicit sets only.
    """

    patch_w: int | None = None
    patch_h: int | None = None
    stride: int = 1
    explicit_sets: tuple = dc_field(default_factory=tuple)

    def __post_init__(self):
        if (self.patch_w is None) != (self.patch_h is None):
            raise ValueError("patch_w and patch_h must be given together")
        if self.patch_w is not None and (self.patch_w < 1 or self.patch_h < 1):
            raise ValueError(f"patch dims must be >= 1, got {self.patch_w}x{self.patch_h}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        object.__setattr__(self, "explicit_sets", tuple(self.explicit_sets))


@dataclass(frozen=True)
class PlacementScore:
    """Scored candidate; rank is filled in by ``rank_placements``."""

    candidate: CellSet
    support: float
    norm: float
    rank: int | None = None


def enumerate_candidates(partition, spec):
    """All candidate cell sets of a spec, in deterministic order.

    Patch blocks come first, row-major by anchor cell, then the explicit
    sets in their given order.
    """
    out = []
    if spec.patch_w is not None:
        w, h = spec.patch_w, spec.patch_h
        if w > partition.px or h > partition.py:
            raise ValueError(
                f"{w}x{h} patch does not fit a {partition.px}x{partition.py} partition"
            )
        block_x = np.arange(w)
        block_y = np.arange(h) * partition.px
        block = (block_y[:, None] + block_x[None, :]).ravel()
        for ay in range(0, partition.py - h + 1, spec.stride):
            for ax in range(0, partition.px - w + 1, spec.stride):
                anchor = ay * partition.px + ax
                out.append(CellSet(partition, anchor + block))
    for cells in spec.explicit_sets:
        if cells.partition != partition:
            raise ValueError("explicit candidate set built on a different partition")
        out.append(cells)
    return out


def score_candidate(op, candidate, K, mode=ACTUATOR, eps=None):
    """Support measure and L2 norm of a candidate's K-step occupation field."""
    if mode == ACTUATOR:
        g = controllability_gramian(op, candidate, K)
    elif mode == SENSOR:
        g = observability_gramian(op, candidate, K)
    else:
        raise ValueError(f"mode must be 'actuator' or 'sensor', got {mode!r}")
    return PlacementScore(candidate, support_measure(g, eps), l2_norm(g))


def _anchor(score):
    idx = score.candidate.indices
    return int(idx[0]) if len(idx) else -1


def rank_placements(scores, support_tie_tol=0.02, norm_direction="max"):
    """Order scores best-first and assign ranks 1..n.

    Primary key is support, descending.  Supports within ``support_tie_tol``
    (relative to the group leader) count as tied and are ordered by norm:
    descending for ``norm_direction='max'`` (default), ascending for
    ``'min'``.  Remaining ties break on the smallest cell index so ranking
    does not depend on input order.
    """
    scores = list(scores)
    if not scores:
        raise ValueError("no scores to rank")
    if support_tie_tol < 0:
        raise ValueError(f"support_tie_tol must be >= 0, got {support_tie_tol}")
    if norm_direction not in ("max", "min"):
        raise ValueError(f"norm_direction must be 'max' or 'min', got {norm_direction!r}")
    sign = -1.0 if norm_direction == "max" else 1.0

    by_support = sorted(scores, key=lambda s: (-s.support, sign * s.norm, _anchor(s)))
    groups = []
    for score in by_support:
        if groups and score.support >= groups[-1][0].support * (1.0 - support_tie_tol):
            groups[-1].append(score)
        else:
            groups.append([score])
    ranked = []
    for group in groups:
        group.sort(key=lambda s: (sign * s.norm, _anchor(s)))
        ranked.extend(group)
    return [replace(s, rank=i + 1) for i, s in enumerate(ranked)]


def reachable_set_oracle(field, B, tau, n_samples=10000, cfg=None, seed=0):
    """Cells visited by sample trajectories seeded in B over [0, tau].

    Monte Carlo check on gramian supports: points are drawn uniformly over
    B's cells and every cell they touch at integrator-substep resolution is
    recorded.  B's own cells are always included (time zero).
    """
    partition = B.partition
    if partition.domain != field.domain:
        raise ValueError("cell set partition and field cover different domains")
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    if cfg is None:
        speed = max(field.max_speed(), 1e-12)
        cfg = FlowConfig(dt_integrate=0.5 * min(partition.hx, partition.hy) / speed)
    rng = np.random.default_rng(seed)
    corners = partition.cell_corners()
    cells = B.indices[rng.integers(0, len(B.indices), n_samples)]
    offs = rng.random((n_samples, 2))
    pts = corners[cells] + offs * np.array([partition.hx, partition.hy])

    visited = np.zeros(partition.n_cells, dtype=bool)
    visited[B.indices] = True

    def record(cur, alive):
        idx = locate_many(partition, cur[alive])
        visited[idx[idx >= 0]] = True

    flow_map_points(field, pts, tau, cfg, visit=record)
    return CellSet(partition, np.flatnonzero(visited))
