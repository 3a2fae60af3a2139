"""Exception types shared across the package."""


class CellcalError(Exception):
    """Base class for errors raised by cellcal."""


class ConfigError(CellcalError):
    """A config file or argument is missing, malformed, or inconsistent."""


class SimulationError(CellcalError):
    """Cell simulation left its validity domain.

    Parameters
    ----------
    reason : str
        Human-readable description of the violation.
    step : int
        Index of the first offending sample.
    electrode : str or None
        "anode" / "cathode" when the violation is tied to one electrode.
    """

    def __init__(self, reason, step, electrode=None):
        self.reason = reason
        self.step = step
        self.electrode = electrode
        where = f" [{electrode}]" if electrode else ""
        super().__init__(f"{reason} at step {step}{where}")


class IllConditionedError(CellcalError):
    """A covariance factorization failed even after the jitter ladder."""

    def __init__(self, condition):
        self.condition = condition
        super().__init__(
            f"covariance matrix not positive definite after jitter ladder "
            f"(condition estimate {condition:.3e})"
        )


class EstimationFailureError(CellcalError):
    """An estimation run produced no feasible candidate.

    The partial optimizer trace (best/mean objective per iteration, penalties
    included) is attached when available so callers can persist it.
    """

    def __init__(self, message, trace=None, mean_trace=None):
        self.trace = trace
        self.mean_trace = mean_trace
        super().__init__(message)
