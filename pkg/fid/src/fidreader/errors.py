"""Error types for the fidreader package."""

from __future__ import annotations


class FidError(Exception):
    """Base class for fidreader failures."""


class InputError(FidError):
    """Raised when an input record, bundle, or prompt cannot be assembled."""


class CheckpointError(FidError):
    """Raised when a checkpoint directory is missing or malformed."""
