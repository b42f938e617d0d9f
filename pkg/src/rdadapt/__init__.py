"""Adaptive backstepping control of a reaction-diffusion PDE with a neural-operator gain kernel."""

__version__ = "0.1.0"

from .errors import (
    CorruptDataset,
    GammaStarNonpositive,
    InvalidInput,
    ModelCorrupt,
    ModelFormatError,
    NonConvergence,
    PlantDiverged,
    RdAdaptError,
    TrainingFailure,
    UnsupportedVersion,
)
from .grid import Grid1D, ScalarField1D, TriField, TriGrid

__all__ = [
    "__version__",
    "CorruptDataset", "GammaStarNonpositive", "InvalidInput", "ModelCorrupt",
    "ModelFormatError", "NonConvergence", "PlantDiverged", "RdAdaptError",
    "TrainingFailure", "UnsupportedVersion",
    "Grid1D", "ScalarField1D", "TriField", "TriGrid",
]
