"""Shared exception types.

Contract violations (bad arguments, broken preconditions) raise
:class:`ContractError`; malformed external data raises :class:`DataError`;
numerical blow-ups during integration or training raise the dedicated
runtime errors below.  Solver infeasibility is *not* an exception: the
perturbation solver returns a result object with ``feasible=False``.
"""

__all__ = [
    "DissnodeError",
    "ContractError",
    "DataError",
    "IntegrationError",
    "TrainingError",
    "PipelineError",
]


class DissnodeError(Exception):
    """Base class for all library errors."""


class ContractError(DissnodeError, ValueError):
    """An argument or precondition violated a documented contract."""


class DataError(DissnodeError, ValueError):
    """External data (file, config) is malformed or inconsistent."""


class IntegrationError(DissnodeError, RuntimeError):
    """State became non-finite during numerical integration.

    Carries the time at which the failure was detected.
    """

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class TrainingError(DissnodeError, RuntimeError):
    """Training objective or parameters became non-finite.

    ``batch_index`` points at the offending window within the batch when
    the failure was localized, else None.
    """

    def __init__(self, message, batch_index=None):
        super().__init__(message)
        self.batch_index = batch_index


class PipelineError(DissnodeError, RuntimeError):
    """A pipeline stage failed; partial artifacts were persisted.

    ``stage`` names the failing stage.
    """

    def __init__(self, stage, message):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage
