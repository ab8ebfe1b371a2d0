"""Exception hierarchy.

Errors fall into two families that the CLI maps to stable exit codes:
:class:`ContractViolation` (exit 2) and :class:`DataError` (exit 3).
"""

from __future__ import annotations


class FireContractError(Exception):
    """Base class for every error raised by this package."""


class ContractViolation(FireContractError):
    """Scores or reports from different evaluation contracts were mixed."""


class DataError(FireContractError):
    """Inputs are malformed or violate an operation's preconditions."""


class GridMismatch(DataError):
    pass


class NaNInScores(DataError):
    pass


class NoPositives(DataError):
    pass


class UndefinedCorrelation(DataError):
    pass


class InvalidArea(DataError):
    pass


class NoCandidates(DataError):
    pass


class InvalidFraction(DataError):
    pass


class ShapeError(DataError):
    pass


class SingleClassData(DataError):
    pass


class EmptyInput(DataError):
    pass


class InvalidSceneConfig(DataError):
    pass


class FormatError(DataError):
    """Base class for binary grid file problems."""


class BadMagic(FormatError):
    pass


class TruncatedPayload(FormatError):
    pass


class ConfigError(DataError):
    """A run configuration or contract document failed strict parsing."""
