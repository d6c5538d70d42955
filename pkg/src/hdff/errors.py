"""Exception types shared across the package.

The CLI maps ``UsageError`` to exit code 1 and every other ``HdffError``
(bad data, bad files) to exit code 2.
"""

from __future__ import annotations


class HdffError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(HdffError, ValueError):
    """The caller violated an API contract (empty input, bad argument)."""


class DimensionError(HdffError, ValueError):
    """Vector or matrix shapes do not line up."""


class DegenerateInputError(HdffError, ValueError):
    """A zero-norm vector reached an angle computation.

    A zero descriptor means something upstream is broken (empty class,
    all-zero features); it is never treated as a valid 90-degree geometry.
    """


class FitError(HdffError, ValueError):
    """Model fitting failed (empty class, degenerate descriptor, bad shapes)."""


class FormatError(HdffError, ValueError):
    """An on-disk file violates its documented format."""


class PackValidationError(FormatError):
    """A feature pack's manifest and tensor files are inconsistent."""
