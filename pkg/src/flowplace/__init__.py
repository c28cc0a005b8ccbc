"""Transfer-operator tools for placing and driving actuation in steady flows.

The package discretizes a steady 2-D velocity field into a sparse Ulam
transfer matrix over a uniform box partition, builds controllability /
observability occupation fields from it, ranks candidate actuator and
sensor patches, synthesizes minimum-energy steering schedules, and issues
occupation-sum stability certificates.  The ``flowplace`` CLI wraps the
same pipeline and renders its reports to CSV, JSON, and figures.
"""

from .errors import (
    ConfigError,
    DivergentHorizonError,
    EmptyCellSetError,
    FlowplaceError,
    GridMismatchError,
    PartitionMismatchError,
    SingularGramianError,
    SnapshotFormatError,
    UnreachableTargetError,
)
from .field import (
    ABSORB_OUTSIDE,
    CLAMP_TO_BOUNDARY,
    Domain,
    FlowConfig,
    VectorField,
    analytic_field,
    divergence_at,
    flow_map,
    flow_map_points,
    is_outside,
    load_snapshot,
    load_snapshots,
    mean_field,
    save_snapshot,
    velocity_at,
    velocities_at,
)
from .partition import (
    BoxPartition,
    CellSet,
    ScalarField,
    build_partition,
    cellset_from_spec,
    cellset_to_spec,
    indicator,
    integrate,
    locate,
    locate_many,
    measure,
    read_field_csv,
    rect_to_cellset,
    write_field_csv,
)
from .transfer import (
    GRID,
    MONTE_CARLO,
    TransferOperator,
    apply_koopman,
    apply_pf,
    build_operator,
    evolve,
    load_operator,
    save_operator,
)
from .gramian import (
    CONTROLLABILITY,
    OBSERVABILITY,
    GramianField,
    StabilityReport,
    controllability_gramian,
    infinite_controllability_gramian,
    infinite_observability_gramian,
    l2_norm,
    observability_gramian,
    residence_time,
    stability_certificate,
    support_measure,
)
from .placement import (
    ACTUATOR,
    SENSOR,
    CandidateSpec,
    PlacementScore,
    enumerate_candidates,
    rank_placements,
    reachable_set_oracle,
    score_candidate,
)
from .control import (
    EXACT,
    MULTIPLICATION,
    ControlSchedule,
    SteeringResult,
    control_energy,
    min_energy_control,
    simulate_forward,
    zero_schedule,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
