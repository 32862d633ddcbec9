"""Exception types shared across the package."""


class MaskFaceError(Exception):
    """Base class for all package errors."""


class ValidationError(MaskFaceError, ValueError):
    """Input data violates a documented invariant."""


class GeometryError(MaskFaceError, ValueError):
    """Degenerate geometric configuration (coincident or collinear points, singular transforms)."""


class LibraryError(MaskFaceError, KeyError):
    """Requested mask template, pattern or color is not in the library."""

    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class StratificationError(MaskFaceError, ValueError):
    """Pairs cannot be split into folds that each hold both labels."""


class InsufficientPairsError(MaskFaceError, ValueError):
    """Requested more verification pairs than the embeddings can supply."""
