"""Exception hierarchy shared by all modules."""


class SheFieldsError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(SheFieldsError, ValueError):
    """Invalid grid, window or experiment parameters.

    ``errors`` lists every individual problem when several were collected.
    """

    def __init__(self, message, errors=None):
        super().__init__(message)
        self.errors = list(errors) if errors else [str(message)]


class PreconditionError(SheFieldsError, ValueError):
    """An operation was called outside its documented domain."""


class BlowUpError(SheFieldsError, FloatingPointError):
    """A solver produced a non-finite value.

    Attributes
    ----------
    step : int
        Index of the time step whose output was non-finite.
    """

    def __init__(self, step, message=None):
        self.step = int(step)
        super().__init__(message or f"non-finite field value produced at step {step}")


class ResourceError(SheFieldsError, MemoryError):
    """Trajectory storage would exceed the configured memory budget."""

    def __init__(self, required_bytes, budget_bytes):
        self.required_bytes = int(required_bytes)
        self.budget_bytes = int(budget_bytes)
        super().__init__(
            f"Picard trajectories need ~{required_bytes / 2**20:.1f} MiB, "
            f"budget is {budget_bytes / 2**20:.1f} MiB"
        )


class DegenerateEnsembleError(SheFieldsError, RuntimeError):
    """Every path of an ensemble was censored."""


class InsufficientPathsError(SheFieldsError, ValueError):
    """The requested probability level cannot be resolved with this many paths."""


class InsufficientDataError(SheFieldsError, ValueError):
    """Too few samples or blocks for the requested estimate."""


class QuantileResolutionError(SheFieldsError, ValueError):
    """An upper quantile was requested beyond what the calibration sample resolves."""


class PositivityError(SheFieldsError, ValueError):
    """A sample that must be strictly positive was not."""


class ConvergenceError(SheFieldsError, RuntimeError):
    """An iterative solve did not settle within its iteration budget."""
