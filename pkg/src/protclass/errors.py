"""Exception hierarchy. The CLI maps DataError to exit 2 and NumericError to exit 3."""


class ProtclassError(Exception):
    pass


class DataError(ProtclassError):
    """Bad or unusable input data."""


class NumericError(ProtclassError):
    """Non-finite values during training or optimisation."""


class SequenceTooLong(DataError):
    pass


class UnknownToken(DataError):
    def __init__(self, code, where=None):
        self.code = code
        msg = f"unknown monomer code {code!r}"
        if where:
            msg += f" in {where}"
        super().__init__(msg)


class MalformedXml(DataError):
    def __init__(self, message, offset=None):
        self.offset = offset
        super().__init__(message if offset is None else f"{message} (near byte offset {offset})")


class GzipError(DataError):
    pass


class OutputUnwritable(ProtclassError):
    pass


class LengthOutOfRange(DataError):
    pass


class TooFewPositives(DataError):
    pass


class VocabularyMismatch(DataError):
    pass


class IndexOutOfVocab(DataError):
    pass


class InputTooShort(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class StaleCache(ProtclassError):
    pass


class NonFiniteGradient(NumericError):
    pass


class CheckpointWriteError(OutputUnwritable):
    pass
