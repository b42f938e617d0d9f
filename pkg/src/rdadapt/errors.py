"""Exception types raised across the package."""


class RdAdaptError(Exception):
    """Base class for all package errors."""

    kind = "error"


class InvalidInput(RdAdaptError, ValueError):
    kind = "invalid-input"


class NonConvergence(RdAdaptError, RuntimeError):
    kind = "non-convergence"

    def __init__(self, message, residual, iterations):
        super().__init__(f"{message} (residual={residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class PlantDiverged(RdAdaptError, RuntimeError):
    kind = "plant-diverged"

    def __init__(self, t, message="plant diverged"):
        super().__init__(f"{message} at t={t:.6g}")
        self.t = t


class GammaStarNonpositive(RdAdaptError, ValueError):
    kind = "gamma-star-nonpositive"


class ModelCorrupt(RdAdaptError, ValueError):
    kind = "model-corrupt"


class ModelFormatError(RdAdaptError, ValueError):
    kind = "model-parse"

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class UnsupportedVersion(ModelFormatError):
    kind = "unsupported-version"


class TrainingFailure(RdAdaptError, RuntimeError):
    kind = "training-failure"

    def __init__(self, epoch, message="loss became non-finite"):
        super().__init__(f"{message} at epoch {epoch}")
        self.epoch = epoch


class CorruptDataset(RdAdaptError, ValueError):
    kind = "corrupt-dataset"

    def __init__(self, message, sample_index=None):
        if sample_index is not None:
            message = f"{message} (sample {sample_index})"
        super().__init__(message)
        self.sample_index = sample_index
