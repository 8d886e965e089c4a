"""Exception hierarchy shared across the engine."""


class MacroflowError(Exception):
    """Base class for all engine errors."""


class NetworkFormatError(MacroflowError):
    """Malformed or inconsistent network input. Carries the offending line."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class QueryFormatError(MacroflowError):
    """Malformed query input."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class ScenarioError(MacroflowError):
    """Invalid scenario specification."""


class RoutingError(MacroflowError):
    """No feasible path for a query."""


class SimulationError(MacroflowError):
    """Invalid simulation input (bad path, bad departure, unknown ids)."""


class StoreError(MacroflowError):
    """Route-store level error."""


class UnknownEdgeError(StoreError):
    pass


class UnknownRouteError(StoreError):
    pass


class DuplicateRouteError(StoreError):
    pass


class DuplicateTraversalError(StoreError):
    pass


class TraversalNotFoundError(StoreError):
    pass


class InternalInvariantError(MacroflowError):
    """The engine detected a broken internal invariant; state is suspect."""


class OptimizeAborted(MacroflowError):
    """An optimizer iteration failed; carries the trace produced so far."""

    def __init__(self, message: str, partial_metrics: list):
        super().__init__(message)
        self.partial_metrics = partial_metrics
