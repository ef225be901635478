"""Exception hierarchy shared across the toolkit.

ValidationError covers bad inputs (configs, manifests, contract violations)
and maps to CLI exit code 1; RunError covers failures that occur mid-run
(I/O, numerical divergence) and maps to exit code 2.
"""


class DivmixError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(DivmixError):
    """Input, configuration, or contract violation."""


class RunError(DivmixError):
    """Failure while executing an otherwise valid request."""
