"""Exception hierarchy shared by all afts modules."""


class AftsError(Exception):
    """Base class for every error raised by this package."""


class StructureError(AftsError):
    """Shapes, grids, or block layouts do not line up."""


class GridMismatchError(StructureError):
    """Two functional objects do not share a grid."""


class DataError(AftsError):
    """Input values are unusable: non-finite, asymmetric beyond tolerance,
    all-zero spectra, nonpositive prices, and similar."""


class DomainError(AftsError):
    """A parameter is outside its valid range (lags, truncations, thresholds)."""


class CapabilityError(AftsError):
    """The requested computation exceeds a hard desk-scale cap."""


class ConfigError(AftsError):
    """A run configuration failed validation."""


class ConvergenceError(AftsError):
    """A solver hit its iteration cap before reaching tolerance.

    Carries the best iterate so callers can inspect or reuse it.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class InfeasibleError(AftsError):
    """The constraint set of an optimization problem is (detected) empty."""
