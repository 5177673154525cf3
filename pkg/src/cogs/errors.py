"""Exception taxonomy shared across the engine."""


class CogsError(Exception):
    """Base class for all engine errors."""


class ConfigurationError(CogsError):
    """Inconsistent shapes, counts, or settings supplied by the caller."""


class StateError(CogsError):
    """Operation requires model state (masks, signals, ...) that is absent."""


class InputError(CogsError, ValueError):
    """A runtime input value is outside its documented range."""


class DegenerateControlError(CogsError):
    """Control extraction hit a trajectory or set with no usable motion."""


class IngestionError(CogsError):
    """Dataset directory or frame could not be read."""


class CodecError(CogsError):
    """Image file could not be decoded."""


class CheckpointError(CogsError):
    """Checkpoint container is unreadable."""


class BadMagicError(CheckpointError):
    pass


class BadVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass
