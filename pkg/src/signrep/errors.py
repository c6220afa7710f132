"""Exception taxonomy shared across the package.

The three bases map onto the CLI exit codes: usage errors exit 1, data
errors exit 2, numeric failures exit 3.
"""


class SignRepError(Exception):
    pass


class UsageError(SignRepError):
    """Bad flags, config keys, or argument combinations."""


class DataError(SignRepError):
    """Malformed, inconsistent, or empty input data."""


class NumericError(SignRepError):
    """Non-finite values or diverged optimization."""


# --- config ---------------------------------------------------------------

class ConfigError(UsageError):
    pass


class NegativeWeight(ConfigError):
    pass


class BadRatios(UsageError):
    pass


# --- pose preprocessing ---------------------------------------------------

class DegenerateFrame(DataError):
    pass


class TooShort(DataError):
    pass


class EmptyResult(DataError):
    pass


class AlreadyLonger(DataError):
    pass


class MissingJoint(DataError):
    pass


# --- tensor engine / models -----------------------------------------------

class ShapeMismatch(DataError):
    pass


class NonFiniteActivation(NumericError):
    pass


class EmptyTarget(DataError):
    pass


class DivergedLoss(NumericError):
    pass


class CorruptCheckpoint(DataError):
    pass


class VersionMismatch(DataError):
    pass


# --- corpus / tasks ---------------------------------------------------------

class ParseError(DataError):
    pass


class SchemaError(DataError):
    pass


class EmptyCorpus(DataError):
    pass


class VocabularyOverflow(DataError):
    pass


class TooLong(DataError):
    pass


class EmptyMask(DataError):
    pass


# --- metrics ----------------------------------------------------------------

class LengthMismatch(DataError):
    pass


class EmptyOverlap(DataError):
    pass
