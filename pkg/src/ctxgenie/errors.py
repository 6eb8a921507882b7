"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 1, EndpointError -> 2,
DataError -> 3. Library code raises them directly and never calls sys.exit.
"""

from __future__ import annotations


class CtxgenieError(Exception):
    """Base class for all package errors."""

    exit_code = 1
    kind = "error"


class ConfigError(CtxgenieError):
    """Invalid or missing configuration (files, flags, env vars)."""

    exit_code = 1
    kind = "config"


class EndpointError(CtxgenieError):
    """An HTTP endpoint failed after all retries, or returned malformed data."""

    exit_code = 2
    kind = "endpoint"


class ContextWindowExceeded(EndpointError):
    """The serving endpoint rejected a request because the prompt was too long.

    Kept distinct from generic endpoint failures so callers can degrade
    gracefully (the reader retries once with one fewer context).
    """


class DataError(CtxgenieError):
    """Malformed input data: benchmark files, caches, indexes, logs."""

    exit_code = 3
    kind = "data"
