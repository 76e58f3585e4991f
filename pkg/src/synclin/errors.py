"""Exception types shared across the package."""


class SynclinError(Exception):
    """Base class for all package errors."""


class ParseError(SynclinError):
    """Malformed dataset text; carries the 1-based line number."""

    def __init__(self, message: str, line_no: int):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class ConfigurationError(SynclinError):
    """Invalid or inconsistent run configuration."""


class ProtocolError(SynclinError):
    """Violation of the round protocol (duplicate/missing updates, bad frames)."""


class TransportError(SynclinError):
    """Communication failure (timeouts, dead workers, connection loss)."""


class OracleInconsistencyError(SynclinError):
    """An objective value fell below the reference optimum beyond tolerance."""


class FitRankError(SynclinError):
    """Convergence-model fit is rank deficient (all H values identical)."""


class CommunicationFreeRegime(SynclinError):
    """Fitted b == 0: the model predicts larger H is always better."""
