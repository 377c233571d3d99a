"""Exception types shared across the package."""


class QuakeCepError(Exception):
    """Base class for all package errors."""


class DataError(QuakeCepError, ValueError):
    """Invalid or inconsistent input data (records, manifests, tensors)."""


class ConfigError(QuakeCepError, ValueError):
    """Invalid configuration or argument combination."""


class TrainingDivergence(QuakeCepError, FloatingPointError):
    """A non-finite value appeared during forward, backward or update.

    ``layer`` names the layer where the value was detected when known;
    ``last_good`` carries the last finite parameter set when raised from
    the training loop.
    """

    def __init__(self, message, layer=None, last_good=None):
        super().__init__(message)
        self.layer = layer
        self.last_good = last_good


class ConvergenceError(QuakeCepError, RuntimeError):
    """Newton iteration in the response simulator failed to converge."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
