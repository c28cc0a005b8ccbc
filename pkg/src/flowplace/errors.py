"""Exception types shared across the package."""


class FlowplaceError(Exception):
    """Base class for every package-specific error."""


class ConfigError(FlowplaceError):
    """Bad user input: missing files, malformed configs, bad values."""


class SnapshotFormatError(ConfigError):
    """A velocity snapshot file failed to parse or validate."""


class GridMismatchError(ConfigError):
    """Velocity snapshots disagree on grid dimensions or domain extent."""


class PartitionMismatchError(FlowplaceError):
    """Objects built over different box partitions were combined."""


class EmptyCellSetError(FlowplaceError):
    """An actuation or sensing set with no cells was requested."""


class DivergentHorizonError(FlowplaceError):
    """An infinite-horizon occupation sum failed to converge."""


class UnreachableTargetError(FlowplaceError):
    """The steering target lies outside the reachable space of the actuation set."""


class SingularGramianError(FlowplaceError):
    """The steering solve cannot attain the defect within tolerance."""
