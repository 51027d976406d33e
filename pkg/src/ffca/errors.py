"""Exception hierarchy shared by the whole package.

The CLI maps these onto process exit codes: InputError -> 2,
FormatError -> 3, InternalError -> 4.
"""


class FfcaError(Exception):
    """Base class for all errors raised by this package."""


class InputError(FfcaError):
    """Caller-supplied data violates a precondition (bad dims, bad range)."""


class FormatError(FfcaError):
    """A serialized container (bitstream, bundle, weights file) is malformed."""


class InternalError(FfcaError):
    """An internal invariant was violated; indicates a bug, not bad input."""
