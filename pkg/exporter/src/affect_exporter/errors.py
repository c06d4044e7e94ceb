"""Exception types for the exporter."""


class ExporterError(Exception):
    """Base class for all exporter errors."""


class SetupError(ExporterError):
    """Bad job configuration or unobtainable model weights."""


class StorageError(ExporterError):
    """I/O failure while writing an output artifact."""
