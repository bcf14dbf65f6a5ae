"""Exception hierarchy shared by every module in the package."""

from __future__ import annotations


class SubdataError(Exception):
    """Base class for all errors raised by :mod:`obdsub`."""


class InvalidInput(SubdataError, ValueError):
    """Arguments violate a documented precondition."""


class SingularInformation(SubdataError, ArithmeticError):
    """An information (moment) matrix is numerically singular.

    ``min_eigenvalue`` carries the smallest eigenvalue found, when known.
    """

    def __init__(self, message: str = "information matrix is singular", min_eigenvalue: float | None = None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class InvalidDesign(SubdataError, ValueError):
    """A design's weights or partition are inconsistent."""


class DegenerateData(SubdataError, ValueError):
    """The data cannot support the requested model (constant or rank-deficient features)."""


class TooLarge(SubdataError):
    """An exhaustive enumeration would exceed its size guard."""


class NoFeasibleSubset(SubdataError):
    """Every candidate subset has a singular information matrix."""


class IngestError(SubdataError, ValueError):
    """A data file could not be parsed.

    ``rows`` lists the one-based file line numbers that failed, if any.
    """

    def __init__(self, message: str, rows: list[int] | None = None):
        super().__init__(message)
        self.rows = list(rows or [])
