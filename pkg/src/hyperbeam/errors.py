"""Exception hierarchy shared by all hyperbeam modules."""


class HyperbeamError(Exception):
    """Base class for every error raised by this package."""


class DomainError(HyperbeamError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class GeometryError(HyperbeamError, ValueError):
    """A location or region is inconsistent with the grid or phantom."""


class ConfigError(HyperbeamError, ValueError):
    """A configuration or stability requirement is violated before running."""


class NumericalInstabilityError(HyperbeamError, ArithmeticError):
    def __init__(self, step: int, what: str = "field"):
        super().__init__(f"non-finite {what} detected at step {step}")
        self.step = step


class InsufficientDataError(HyperbeamError, ValueError):
    """Not enough recorded samples to form the requested quantity."""


class AcquisitionError(HyperbeamError, RuntimeError):
    """Channel acquisition produced a degenerate recording."""


class DegenerateChannelError(HyperbeamError, ValueError):
    """A channel entry has zero magnitude so no phase can be assigned."""


class IllConditionedError(HyperbeamError, ArithmeticError):
    def __init__(self, rcond: float, columns: tuple[int, int]):
        super().__init__(
            f"constraint matrix is ill-conditioned (rcond={rcond:.3e}); "
            f"columns {columns[0]} and {columns[1]} are nearly dependent"
        )
        self.rcond = rcond
        self.columns = columns


class CalibrationError(HyperbeamError, RuntimeError):
    """Heat scaling cannot reach the requested temperature."""


class ParseError(HyperbeamError, ValueError):
    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ComparisonError(HyperbeamError, ValueError):
    """Two run bundles cannot be compared."""


class StageError(HyperbeamError, RuntimeError):
    """A scenario pipeline stage failed; ``__cause__`` holds the original error."""

    def __init__(self, stage: str, case: str | None, cause: BaseException):
        where = f" in case {case}" if case else ""
        super().__init__(f"stage '{stage}' failed{where}: {cause}")
        self.stage = stage
        self.case = case
        self.cause = cause
