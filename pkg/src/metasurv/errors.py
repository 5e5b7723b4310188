"""Exception taxonomy shared across the package.

Every error carries a short machine-parsable ``code`` used by the CLI to
emit one-line error classes.
"""


class MetasurvError(Exception):
    code = "error"


class ConfigError(MetasurvError):
    """Invalid model/run configuration (bad widths, dropout >= 1, bad knots)."""

    code = "config-error"


class DataError(MetasurvError):
    """Malformed or out-of-range input data."""

    code = "data-error"


class UsageError(MetasurvError):
    """A call violated an operation precondition (negative time, bad shapes)."""

    code = "usage-error"


class StateError(MetasurvError):
    """Operation requires state that has not been populated yet."""

    code = "state-error"


class EstimationError(MetasurvError):
    """Estimation cannot proceed (no events, diverged, degenerate likelihood)."""

    code = "estimation-error"

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class DomainError(MetasurvError):
    """Requested value lies outside the attainable range of a map."""

    code = "domain-error"

    def __init__(self, message, supremum=None):
        super().__init__(message)
        self.supremum = supremum


class DatasetNotFoundError(MetasurvError):
    code = "dataset-not-found"
