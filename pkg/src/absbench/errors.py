"""Exception hierarchy shared across the package."""


class AbsbenchError(Exception):
    """Base class for all absbench errors."""


class RecipeError(AbsbenchError):
    """A dataset recipe cannot be materialized from the given pools."""


class SplitError(AbsbenchError):
    """A train/validation/test split cannot be populated."""


class ProtocolError(AbsbenchError):
    """An abstract cannot be turned into a prompt/ground-truth pair."""


class MetricError(AbsbenchError):
    """A metric was invoked on invalid input."""


class FormatError(AbsbenchError):
    """A newline-delimited input file is malformed.

    Carries the 1-based line number when the failure is tied to one line.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class BackendError(AbsbenchError):
    """A model-server interaction failed.

    ``kind`` is one of ``timeout``, ``protocol``, ``unavailable``,
    ``capability``.
    """

    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


class ConfigError(AbsbenchError):
    """A run configuration is invalid or incomplete."""


class RunError(AbsbenchError):
    """An evaluation run produced no usable results or exceeded the
    failure-rate threshold."""


class IoError(AbsbenchError):
    """A report or dataset artifact could not be written."""
