"""Density-matrix laboratory for the distance-2 (seven-transmon) error-detecting surface code."""

from .engine import DensityMatrix, KrausChannel, PovmElement, QuditRegister
from .errors import (
    BranchUnderflowError,
    ConfigError,
    ConvergenceError,
    DegenerateFitError,
    PhysicalityError,
    RankDeficiencyError,
)
from .noise import DeviceParams, NoiseModel

__version__ = "0.1.0"

__all__ = [
    "DensityMatrix",
    "KrausChannel",
    "PovmElement",
    "QuditRegister",
    "DeviceParams",
    "NoiseModel",
    "BranchUnderflowError",
    "ConfigError",
    "ConvergenceError",
    "DegenerateFitError",
    "PhysicalityError",
    "RankDeficiencyError",
    "__version__",
]
