"""Exception types shared across the toolkit."""


class HsdetectError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(HsdetectError):
    """Bad input: malformed files, shape mismatches, out-of-range values.

    The CLI maps this class (and FileNotFoundError) to exit code 2;
    everything else exits 1.
    """


class TrainingError(HsdetectError):
    """Training aborted (e.g. non-finite loss)."""
