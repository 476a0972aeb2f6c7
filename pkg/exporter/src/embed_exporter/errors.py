"""Exception taxonomy for the export pipeline."""
from __future__ import annotations


class ExporterError(Exception):
    """Base class for everything this package raises on purpose."""


class ManifestError(ExporterError):
    """Malformed manifest file or row."""

    def __init__(self, message: str, path: str | None = None,
                 line: int | None = None):
        self.path = path
        self.line = line
        if path is not None and line is not None:
            message = f"{path}:{line}: {message}"
        elif path is not None:
            message = f"{path}: {message}"
        super().__init__(message)


class ModelLoadError(ExporterError):
    """Requested encoder is unknown or unavailable."""


class ImageDecodeError(ExporterError):
    """Image file could not be opened or decoded."""

    def __init__(self, row_id: str, message: str):
        self.row_id = row_id
        super().__init__(f"{row_id}: {message}")
