"""Exception types shared across the toolkit."""

from __future__ import annotations


class LayoutKitError(Exception):
    """Base class for all toolkit errors."""


class NoConsensus(LayoutKitError):
    """Vanishing-direction voting failed to produce an orthogonal triplet.

    Carries whatever axes were recoverable so callers can inspect or fall
    back to an identity alignment.
    """

    def __init__(self, message: str, partial_axes=None):
        super().__init__(message)
        self.partial_axes = [] if partial_axes is None else list(partial_axes)


class InsufficientCorners(LayoutKitError):
    """Corner extraction found fewer column peaks than a layout needs."""

    def __init__(self, message: str, found_columns=None):
        super().__init__(message)
        self.found_columns = [] if found_columns is None else list(found_columns)


class HorizonViolation(LayoutKitError):
    """A bottom corner sits at or above the horizon, so its floor depth is undefined."""
