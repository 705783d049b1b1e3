"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: ``DataError`` -> 2, ``NumericError`` -> 3.
"""

from __future__ import annotations


class BDMAError(Exception):
    pass


class DataError(BDMAError, ValueError):
    """Malformed or unusable input data (embedding, dictionary or model files)."""


class VecFormatError(DataError):
    pass


class DictionaryError(DataError):
    pass


class ModelFormatError(DataError):
    pass


class ChecksumError(ModelFormatError):
    pass


class ShapeError(BDMAError, ValueError):
    pass


class NumericError(BDMAError, ArithmeticError):
    """Non-finite loss or gradient, or a failed gradient check."""


class GradCheckError(NumericError):
    def __init__(self, message: str, offending: dict | None = None):
        super().__init__(message)
        self.offending = offending or {}
