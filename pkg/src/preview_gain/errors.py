"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class PreviewGainError(Exception):
    exit_code = 1


class InputError(PreviewGainError, ValueError):
    """Malformed model data, dimension mismatch, bad configuration."""

    exit_code = 3


class NotPositiveDefiniteError(InputError):
    pass


class FeasibilityError(PreviewGainError):
    """A hypothesis on the model or on the gain bound does not hold."""

    exit_code = 2


class SingularBlockError(FeasibilityError):
    def __init__(self, message, block=None):
        super().__init__(message)
        self.block = block


class ConvergenceError(PreviewGainError):
    exit_code = 4


class PreviewExhaustedError(PreviewGainError):
    exit_code = 2
