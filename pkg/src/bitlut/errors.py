"""Exception hierarchy shared across the library and the CLI.

Every error carries a short machine-parsable ``code`` that the CLI prints
as a single-line prefix before exiting nonzero.
"""


class BitLutError(Exception):
    """Base class for all library errors."""

    code = "EINTERNAL"


class ParameterError(BitLutError):
    """An argument is outside its documented domain."""

    code = "EPARAM"


class DataError(BitLutError):
    """Input values violate a data invariant (e.g. non-finite activations)."""

    code = "EDATA"


class ShapeError(BitLutError):
    """Operand shapes are inconsistent with each other."""

    code = "ESHAPE"


class LayoutError(BitLutError):
    """A tiling/layout constraint is violated; the message names the dimension."""

    code = "ELAYOUT"


class OverflowConfigError(BitLutError):
    """A configuration would allow integer accumulator overflow; rejected."""

    code = "EOVERFLOW"


class FormatError(BitLutError):
    """Base class for binary stream format errors."""

    code = "EFORMAT"


class BadMagicError(FormatError):
    code = "EMAGIC"


class FormatVersionError(FormatError):
    code = "EVERSION"


class TruncatedStreamError(FormatError):
    code = "ETRUNC"


class PayloadLengthError(FormatError):
    """Header-declared sizes disagree with the actual payload length."""

    code = "ELENGTH"


class TuningError(BitLutError):
    code = "ETUNE"
