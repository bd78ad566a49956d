"""Exception hierarchy shared by every module of the package."""


class SearnnError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(SearnnError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ContractError(SearnnError, ValueError):
    """A documented precondition was violated by the caller."""


class NonFiniteError(SearnnError, FloatingPointError):
    """A NaN or infinite value crossed a graph boundary."""


class VocabularyError(SearnnError, KeyError):
    """A token or token index is not part of the vocabulary."""

    def __str__(self):
        return Exception.__str__(self)


class SequenceLengthError(SearnnError, IndexError):
    """Decoding went past the configured maximum sequence length."""


class ParseError(SearnnError, ValueError):
    """A data or configuration file is malformed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DivergenceError(SearnnError, ArithmeticError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message, round_index=None):
        self.round_index = round_index
        super().__init__(message)


class CostError(SearnnError, RuntimeError):
    """A cost function failed on a roll-out; carries the offending triple."""

    def __init__(self, sample, cell, token, cause):
        self.sample = sample
        self.cell = cell
        self.token = token
        super().__init__(f"cost failed for sample={sample} t={cell} a={token}: {cause!r}")
