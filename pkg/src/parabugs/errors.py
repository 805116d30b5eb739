"""Exception hierarchy shared across the package."""


class ParabugsError(Exception):
    """Base class for all errors raised by this package."""


class ModelError(ParabugsError):
    """A structured diagnostic about model, data or inits text.

    ``line`` and ``col`` are 1-based; either may be ``None`` when the
    problem has no single source position (e.g. a cycle in the graph).
    """

    def __init__(self, message, line=None, col=None, filename=None):
        self.message = message
        self.line = line
        self.col = col
        self.filename = filename
        super().__init__(self.format())

    def format(self, filename=None):
        name = filename or self.filename or "<model>"
        if self.line is None:
            return f"{name}: {self.message}"
        return f"{name}:{self.line}:{self.col}: {self.message}"


class ModelSyntaxError(ModelError):
    """Source text does not match the grammar."""

    def __init__(self, message, line=None, col=None, expected=(), filename=None):
        self.expected = tuple(expected)
        if self.expected:
            message = f"{message} (expected {', '.join(self.expected)})"
        super().__init__(message, line, col, filename)


class DataError(ModelError):
    """Malformed R-dump data or inits text."""


class CompileError(ModelError):
    """The model cannot be turned into a graph with the supplied data."""


class GraphError(ParabugsError):
    """Structural problem found while querying a compiled graph."""


class SamplerError(ParabugsError):
    """Invalid sampler state, e.g. a non-finite log density at the current value."""


class ScheduleError(ParabugsError):
    """Invalid input to the scheduler."""


class ChainAborted(ParabugsError):
    """A worker failed and the whole chain had to stop."""


class ScriptError(ParabugsError):
    """A batch script command failed or was issued out of order."""
