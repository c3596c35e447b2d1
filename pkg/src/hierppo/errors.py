"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Shapes, sizes or settings that cannot work together."""


class InputError(ValueError):
    """A runtime value (observation, torque, gradient) is unusable."""


class StructureError(ValueError):
    """A reward tree is not a single rooted tree."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CheckpointError(IOError):
    """A checkpoint file is missing, truncated or not ours."""
