"""Exception types shared across the package."""


class IxploreError(Exception):
    """Base class for package-specific failures."""


class ConfigError(IxploreError):
    """Invalid or incomplete experiment configuration."""


class NumericalError(IxploreError):
    """A numerical routine produced an unusable result."""


class DegeneratePosteriorError(IxploreError):
    """All posterior mass vanished, e.g. conflicting exact data at R=0."""


class SamplingError(IxploreError):
    """Posterior sampling failed (rejection underflow, unusable fallback grid)."""


class OutOfDomainError(IxploreError):
    """A model fell outside a semantic map's domain."""


class NoFeasibleArmError(IxploreError):
    """A sleeping type has no awake arm to recommend."""


class InfeasiblePlanError(IxploreError):
    """A warm-up plan cannot be realized on the given instance."""


class UninitializedArmError(IxploreError):
    """An index policy was queried before every arm had a sample."""


class CoverSizeError(IxploreError):
    """A cover construction exceeded the center-count cap."""


class UndefinedThresholdError(IxploreError):
    """Thresholds are undefined, e.g. the minimum message probability is zero."""


class UnsupportedOperationError(IxploreError):
    """Operation not available for this combination of inputs."""
