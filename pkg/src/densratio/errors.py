"""Exception hierarchy shared by every module.

ContractError means the caller violated a precondition (CLI exit 1).
DataError/FormatError mean the inputs themselves are bad (CLI exit 2).
"""


class DensRatioError(Exception):
    pass


class ContractError(DensRatioError):
    """A precondition on an operation was violated by the caller."""


class DataError(DensRatioError):
    """Well-formed input carries unusable values (NaN, zero-norm rows, ...)."""


class FormatError(DataError):
    """Input file or record cannot be parsed under the declared format."""


class TrainingDiverged(DensRatioError):
    """Loss became non-finite during training; carries the failing step."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"loss became non-finite at step {step}")
