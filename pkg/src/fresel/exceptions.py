"""Exception hierarchy shared by all fresel modules."""


class FreselError(Exception):
    """Base class for library errors."""


class DimensionError(FreselError, ValueError):
    """Shapes, grids or lengths that should agree do not."""


class NotSPDError(FreselError, ValueError):
    """A matrix failed the symmetric positive definite check."""


class TagMismatchError(FreselError, TypeError):
    """Objects of different metric types were combined."""


class UnsupportedKernelError(FreselError, ValueError):
    """Kernel kind cannot be evaluated on the given covariate type."""


class ArgumentError(FreselError, ValueError):
    """Invalid argument value (empty input, bad index, degenerate split)."""


class NumericalError(FreselError, ArithmeticError):
    """A linear algebra routine failed."""


class ConfigError(FreselError, ValueError):
    """A run configuration failed validation."""


class DataError(FreselError, ValueError):
    """Input data files are malformed or inconsistent."""
