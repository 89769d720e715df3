"""Exception types raised across the package."""


class CaeError(Exception):
    """Base class for every error this package raises on purpose."""


class ShapeError(CaeError, ValueError):
    pass


class ParameterError(CaeError, ValueError):
    pass


class DataError(CaeError, ValueError):
    pass


class ParseError(DataError):
    pass


class FormatError(DataError):
    pass


class ModeError(CaeError):
    pass


class RankError(CaeError, ValueError):
    pass


class NumericalError(CaeError, FloatingPointError):
    pass


class TrainingDivergenceError(NumericalError):
    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"training diverged (non-finite loss) at epoch {epoch}")
