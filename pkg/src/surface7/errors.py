"""Exception types shared across the package."""

from .engine import PhysicalityError


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap; `residual` holds the last value."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class RankDeficiencyError(ValueError):
    """A linear system is rank deficient; `null_space` spans the unidentifiable directions."""

    def __init__(self, message: str, null_space=None):
        super().__init__(message)
        self.null_space = null_space


class BranchUnderflowError(RuntimeError):
    """The post-selected branch has vanishing probability."""


class DegenerateFitError(ValueError):
    """A fit collapsed or its parameters are not identifiable."""


class ConfigError(ValueError):
    """Invalid user configuration."""


__all__ = [
    "PhysicalityError",
    "ConvergenceError",
    "RankDeficiencyError",
    "BranchUnderflowError",
    "DegenerateFitError",
    "ConfigError",
]
