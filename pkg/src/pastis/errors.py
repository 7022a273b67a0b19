"""Exception hierarchy shared by every module.

Each error carries the CLI exit code it maps to, so the command layer can
translate failures without a lookup table.
"""


class PastisError(Exception):
    exit_code = 3


class NonFinite(PastisError):
    """A simulated or derived quantity overflowed or became NaN."""

    exit_code = 4


class DimensionMismatch(PastisError):
    pass


class EmptyResult(PastisError):
    pass


class SingularGram(PastisError):
    """Gram matrix too ill-conditioned to solve (reciprocal condition < 1e-12)."""

    exit_code = 4


class SingularWeight(PastisError):
    exit_code = 4


class NotRepresentable(PastisError):
    pass


class InsufficientData(PastisError):
    pass


class DomainError(PastisError):
    pass


class EmptyModel(PastisError):
    pass


class DataFormatError(PastisError):
    """An input file could not be parsed; the message names the line."""
