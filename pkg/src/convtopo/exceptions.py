"""Exception types raised across the package."""


class StructuralError(ValueError):
    """Graph or heatmap dimensions/support do not match the declared shape."""


class CycleError(StructuralError):
    """An operation requiring an acyclic graph received a cyclic one."""


class DomainError(ValueError):
    """A numeric argument lies outside its admissible range."""


class CapacityError(ValueError):
    """Exact enumeration was requested above the supported size."""


class InconsistencyError(RuntimeError):
    """A sample record contradicts the heatmap it was supposedly drawn from."""


class NumericError(ValueError):
    """Non-finite values reached an update step."""


class DatasetError(ValueError):
    """A dataset file is malformed. ``lines`` holds the offending line numbers."""

    def __init__(self, message, lines=()):
        super().__init__(message)
        self.lines = tuple(lines)


class ConfigurationError(ValueError):
    pass


class EvaluatorError(RuntimeError):
    """A utility evaluator cannot run (e.g. code sandbox disabled)."""


class BackendError(RuntimeError):
    """Agent backend failed after exhausting retries."""


class CredentialError(BackendError):
    pass


class ProtocolError(BackendError):
    """The backend answered with a malformed payload."""


class RunError(RuntimeError):
    """Execution of a conversation graph failed part way.

    ``transcript`` holds whatever was produced before the failure.
    """

    def __init__(self, message, transcript=None):
        super().__init__(message)
        self.transcript = transcript


class BudgetExceededError(RunError):
    pass
