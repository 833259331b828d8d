"""Exception hierarchy shared by all neuroforge modules.

Every error raised by the package derives from :class:`NeuroforgeError` so
callers (and the CLI) can map failures onto a small set of exit codes:

* 2 -- invalid arguments / configuration
* 3 -- data integrity / schema version
* 4 -- numerical failure / training divergence
* 5 -- I/O (plain ``OSError`` is passed through)
"""

from __future__ import annotations


class NeuroforgeError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(NeuroforgeError, ValueError):
    """An operation was called with arguments violating its preconditions."""


class ConfigError(NeuroforgeError):
    """Pipeline configuration failed validation (unknown keys, bad values)."""


class SchemaVersionError(NeuroforgeError):
    """On-disk artifact declares a schema version this build cannot read."""


class DataIntegrityError(NeuroforgeError):
    """On-disk artifact is corrupt (bad magic, truncated blob, shape drift)."""


class NumericalFailureError(NeuroforgeError):
    """A computation produced non-finite values.

    ``tensor_name`` identifies the offending quantity when known.
    """

    def __init__(self, message, tensor_name=None):
        super().__init__(message)
        self.tensor_name = tensor_name


class TrainingDivergenceError(NumericalFailureError):
    """Training loss exceeded the divergence policy; carries the loss curve."""

    def __init__(self, message, loss_curve=None):
        super().__init__(message)
        self.loss_curve = loss_curve


class UndefinedCorrelationError(NeuroforgeError):
    """Pearson correlation requested on a constant (zero-variance) input."""


class DegenerateRowError(NeuroforgeError):
    """A time-alignment row has no usable kernel mass; names the row."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class StratificationError(NeuroforgeError):
    """A cross-validation fold is missing one of the classes."""


#: Exit-code mapping used by the CLI.
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INTEGRITY = 3
EXIT_NUMERICAL = 4
EXIT_IO = 5


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the CLI exit-code contract."""
    if isinstance(exc, (NumericalFailureError,)):
        return EXIT_NUMERICAL
    if isinstance(exc, (SchemaVersionError, DataIntegrityError)):
        return EXIT_INTEGRITY
    if isinstance(exc, (ConfigError, InvalidArgumentError)):
        return EXIT_CONFIG
    if isinstance(exc, OSError):
        return EXIT_IO
    return 1
