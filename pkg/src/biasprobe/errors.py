"""Exception types raised across the package."""


class BiasProbeError(Exception):
    """Base class for every error raised by biasprobe."""


class ParseError(BiasProbeError, ValueError):
    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row = row
        self.column = column


class VocabularyError(BiasProbeError, ValueError):
    pass


class ConfigError(BiasProbeError, ValueError):
    pass


class SizeError(BiasProbeError, ValueError):
    pass


class BoundsError(BiasProbeError, IndexError):
    pass


class ShapeError(BiasProbeError, ValueError):
    pass


class UnknownNameError(BiasProbeError, KeyError):
    """An attribute, group, or feature name that the dataset does not know."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class InfeasibleError(BiasProbeError, ValueError):
    pass


class DomainError(BiasProbeError, ValueError):
    pass


class DegenerateTargetError(BiasProbeError, ValueError):
    pass


class DegenerateDistributionError(BiasProbeError, ValueError):
    pass


class TrainingDivergenceError(BiasProbeError, ArithmeticError):
    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


class CapacityError(BiasProbeError, ValueError):
    pass


class AssignmentError(BiasProbeError, ValueError):
    pass


class EmptyPoisonError(BiasProbeError, ValueError):
    pass


class PoolExhaustedError(BiasProbeError, ValueError):
    pass


class FitError(BiasProbeError, RuntimeError):
    """Curve fit did not converge; carries the best parameters seen."""

    def __init__(self, message, params=None, rmse=None):
        super().__init__(message)
        self.params = params
        self.rmse = rmse


class IncomparableCurvesError(BiasProbeError, ValueError):
    pass


class SweepError(BiasProbeError, RuntimeError):
    """A (percentage, repeat) cell of a sweep failed."""

    def __init__(self, percent, repeat, cause):
        super().__init__(f"sweep cell p={percent} repeat={repeat} failed: {cause}")
        self.percent = percent
        self.repeat = repeat
        self.cause = cause


class StageError(BiasProbeError, RuntimeError):
    """A named audit pipeline stage failed; ``cause`` is the original error."""

    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
