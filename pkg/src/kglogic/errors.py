"""Exception types shared across the toolkit."""


class KgLogicError(Exception):
    """Base class for all toolkit errors."""


class ParseError(KgLogicError, ValueError):
    """Malformed input file or record; message carries file/line context."""


class ConfigError(KgLogicError, ValueError):
    """Infeasible or inconsistent configuration."""


class StructureError(KgLogicError, ValueError):
    """Query or graph violates a structural invariant."""


class CapacityError(KgLogicError, RuntimeError):
    """Exact enumeration would exceed the desk-scale guard."""


class SamplingError(KgLogicError, RuntimeError):
    """A query pattern could not be grounded within the attempt budget."""


class TrainingError(KgLogicError, RuntimeError):
    """Training diverged; `epoch` names the failing epoch."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class VerificationError(KgLogicError, RuntimeError):
    """Numeric argmax verification failed to converge; carries the best gap."""

    def __init__(self, message, best_gap=None):
        super().__init__(message)
        self.best_gap = best_gap


class ProtocolError(KgLogicError, ValueError):
    """Evaluation protocol preconditions violated."""


class NumericError(KgLogicError, ArithmeticError):
    """Non-finite values appeared where finite ones are guaranteed."""


class OptimizationError(KgLogicError, RuntimeError):
    """Every restart of an optimization diverged."""
