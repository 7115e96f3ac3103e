"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Shapes or modes of the operands are inconsistent."""


class DegenerateCoreError(ValueError):
    """A core unfolding is rank deficient, so its pseudo-inverse does not exist."""


class GenerationError(RuntimeError):
    """Random generation could not satisfy its rank constraints."""


class UnderdeterminedError(ValueError):
    """A least-squares refit has singular normal equations."""


class FormatError(ValueError):
    """Malformed input file (FENT payload, CSV rows, config JSON)."""


class LineSearchError(ArithmeticError):
    """No step along the search direction decreases the objective."""
