"""Exception types shared across the package."""

import numpy as np


class InvalidArgument(ValueError):
    """A caller passed an argument outside an operation's domain."""


class NumericError(FloatingPointError):
    """NaN or infinite values reached a computation that cannot absorb them."""


class SingularMatrixError(np.linalg.LinAlgError):
    """A covariance or conditioning block could not be inverted."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss.

    ``checkpoint`` holds the path of the last good state when one was written.
    """

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint
