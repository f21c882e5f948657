"""Exception types shared across the package."""


class VibegestError(Exception):
    """Base class for all package-specific errors."""


class InvalidSpecError(VibegestError, ValueError):
    """A parameter object (filter spec, model config, ...) violates its invariants."""


class InvalidArgumentError(VibegestError, ValueError):
    """A call received an out-of-range or otherwise unusable argument."""


class ShapeError(VibegestError, ValueError):
    """An array argument has an incompatible shape."""


class FormatError(VibegestError, ValueError):
    """An on-disk artifact (recording, checkpoint, manifest) is malformed."""


class ConfigError(VibegestError, ValueError):
    """A pipeline, split, or training configuration cannot be executed."""


class TrainingError(VibegestError, RuntimeError):
    """Training received non-finite values or diverged."""
