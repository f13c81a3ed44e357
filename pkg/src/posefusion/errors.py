"""Exception types. The CLI maps each family to its own exit code."""


class PoseFusionError(Exception):
    """Base class for library errors."""


class ConfigError(PoseFusionError):
    """Invalid scenario or command configuration."""


class ParseError(PoseFusionError):
    """Malformed pose file content."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class AlignmentError(PoseFusionError):
    """Two trajectories (or streams) do not line up in time."""


class NumericalError(PoseFusionError):
    """A numerical operation failed (singular or non-PSD matrices)."""


class FilterStateError(PoseFusionError):
    """A filter operation was called in the wrong lifecycle state."""
