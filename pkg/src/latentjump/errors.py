"""Exception hierarchy shared by every module and by the CLI exit-code mapping."""


class LatentJumpError(Exception):
    """Base class for all package errors."""


class ShapeError(LatentJumpError, ValueError):
    """Operand dimensions do not agree."""


class SingularMatrixError(LatentJumpError, ArithmeticError):
    """Cholesky factorization met a non-positive pivot."""

    def __init__(self, pivot, value=float("nan")):
        self.pivot = int(pivot)
        self.value = float(value)
        super().__init__(f"non-positive pivot {value!r} at index {pivot}")


class TrainingError(LatentJumpError, ArithmeticError):
    """Loss or gradient became non-finite during training."""


class FilterDivergenceError(LatentJumpError, ArithmeticError):
    """The particle filter produced non-finite or non-factorizable state."""


class DataError(LatentJumpError, ValueError):
    """Input data is empty, misaligned or malformed."""


class InsufficientNovelDataError(DataError):
    """Too few harvested frames to train a new bundle."""


class ConfigError(LatentJumpError, ValueError):
    """Invalid run configuration."""
