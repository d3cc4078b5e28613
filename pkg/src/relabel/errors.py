"""Exception hierarchy.

The CLI maps :class:`DataError` to exit code 2 and :class:`NumericalError`
to exit code 3; everything else is a bug.
"""

from __future__ import annotations


class DataError(ValueError):
    """Input data violates a format or referential contract."""


class NumericalError(RuntimeError):
    """A numerical routine failed to produce an acceptable answer."""


class NoGroundTruthError(DataError):
    pass


class UnknownImageError(DataError, KeyError):
    def __init__(self, image_id: str):
        super().__init__(f"unknown image_id {image_id!r}")
        self.image_id = image_id

    def __str__(self) -> str:
        return self.args[0]


class AnnotationFormatError(DataError):
    pass


class PGMFormatError(DataError):
    pass


class ConfigError(DataError):
    pass


class DetectorError(RuntimeError):
    """A detector call failed; ``view`` names the offending TTA view."""

    def __init__(self, message: str, view=None):
        super().__init__(message)
        self.view = view


class SolverError(NumericalError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (final residual {residual:.3e})")
        self.residual = residual


class NonIncreasingFitError(NumericalError):
    pass
