"""Exception types shared across the pipeline."""


class CorpusFormatError(ValueError):
    """Raised when a corpus file cannot be parsed into valid study records."""


class ConfigurationError(RuntimeError):
    """Raised when a named backend, tokenizer, or backbone cannot be resolved."""


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss becomes non-finite."""
