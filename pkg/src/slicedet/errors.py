"""Exception types shared across the library."""


class SliceDetError(Exception):
    """Base class for all library-raised errors."""


class ConfigError(SliceDetError, ValueError):
    """Invalid configuration value or malformed operand shape."""


class FusionShapeError(SliceDetError, ValueError):
    """Element-wise fusion attempted on grids whose shapes differ."""


class UsageError(SliceDetError, RuntimeError):
    """API called out of order or on inputs that leave it undefined."""


class AnnotationError(SliceDetError, ValueError):
    """Ground-truth annotation violates its invariants."""


class IngestionError(SliceDetError, ValueError):
    """Corpus file missing, malformed, or inconsistent with its manifest."""


class InputError(SliceDetError, ValueError):
    """Runtime input (image file or extent) is unusable."""


class DegenerateRegionError(SliceDetError, ValueError):
    """A pooled region collapsed to zero area."""
