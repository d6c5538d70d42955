"""Extractor error types; the CLI maps them to exit code 2."""


class ExtractorError(Exception):
    """Base class for extraction failures."""


class CheckpointError(ExtractorError):
    """The checkpoint file cannot be loaded or holds no module."""


class HookResolutionError(ExtractorError):
    """No module name matched the hook patterns."""


class DatasetError(ExtractorError):
    """The dataset directory is unusable (no images, mixed sizes)."""
