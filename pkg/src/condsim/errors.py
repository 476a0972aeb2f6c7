"""Exception types shared across the package."""
from __future__ import annotations


class CondsimError(Exception):
    """Base class for all package errors."""


class SchemaError(CondsimError):
    """A record in an input file is malformed."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        loc = ""
        if path is not None:
            loc = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{loc}{message}")


class IntegrityError(CondsimError):
    """Records are individually well-formed but mutually inconsistent."""


class GeometryError(CondsimError):
    """A bounding box or crop request is degenerate."""


class InsufficientScene(CondsimError):
    """A reference image lacks the category diversity required by a task."""


class TemplateUnderflow(CondsimError):
    """Not enough qualifying gallery members for one template; skip and count."""


class ValidationError(CondsimError):
    """A built benchmark violates its task contract."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        head = violations[0] if violations else "unspecified"
        super().__init__(f"{len(self.violations)} violation(s); first: {head}")


class DimensionMismatch(CondsimError):
    """Array shapes disagree with the declared embedding dimension."""


class NonFinite(CondsimError):
    """A NaN or infinity appeared where a finite value is required."""


class MissingEmbedding(CondsimError):
    """An id referenced by a triplet or template has no stored vector."""


class EmptyTemplateSet(CondsimError):
    """An evaluation was requested over zero templates."""
