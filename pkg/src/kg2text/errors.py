"""Typed errors shared across the package.

Every error the library raises subclasses :class:`Kg2TextError`, so callers
(and the CLI) can report the error *type name* as the failure category.
"""


class Kg2TextError(Exception):
    """Base class for all kg2text errors."""


# record construction / conversion
class EmptyInput(Kg2TextError):
    pass


class MalformedTriple(Kg2TextError):
    pass


class EmptyName(Kg2TextError):
    pass


class EmptyTriples(Kg2TextError):
    pass


class InvalidRecord(Kg2TextError):
    pass


# corpus construction
class UnresolvedEntity(Kg2TextError):
    pass


class NoAnchors(Kg2TextError):
    pass


class InsufficientData(Kg2TextError):
    pass


class EmptyCorpus(Kg2TextError):
    pass


# tokenizer
class VocabTooSmall(Kg2TextError):
    pass


class InvalidId(Kg2TextError):
    pass


# numerics
class ShapeMismatch(Kg2TextError):
    pass


class NotScalar(Kg2TextError):
    pass


# encoder / decoder
class CapsExceeded(Kg2TextError):
    pass


class EmptyEncoderOutput(Kg2TextError):
    pass


class EmptyBatch(Kg2TextError):
    pass


# training / evaluation
class ConfigMismatch(Kg2TextError):
    pass


class EmptyResult(Kg2TextError):
    pass


class ContaminationDetected(Kg2TextError):
    pass


class LengthMismatch(Kg2TextError):
    pass


# cli
class UsageError(Kg2TextError):
    pass


class IoError(Kg2TextError):
    pass
