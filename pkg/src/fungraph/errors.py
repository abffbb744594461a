"""Exception hierarchy shared by all modules."""


class FunGraphError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(FunGraphError, ValueError):
    """An input violates a documented precondition."""


class DimensionError(ValidationError):
    """Array shapes or grids do not match."""


class InsufficientSamplesError(ValidationError):
    pass


class ParseError(FunGraphError, ValueError):
    """A dataset or config file could not be read."""


class RankError(FunGraphError, ValueError):
    """A requested basis size exceeds the numerical rank available."""


class DependenceError(RankError):
    """Gram-Schmidt met a function already in the span of its predecessors."""

    def __init__(self, index: int, pivot: float):
        super().__init__(
            f"input function {index} is numerically dependent on earlier inputs "
            f"(pivot norm {pivot:.3e})"
        )
        self.index = index
        self.pivot = pivot


class NumericalFailure(FunGraphError, ArithmeticError):
    """An iterative routine produced NaN/inf or failed to bracket a root."""


class ConstructionError(FunGraphError, RuntimeError):
    """A simulation model could not be built."""


class DegenerateTruthError(ValidationError):
    """ROC is undefined because the true graph has no edges or no non-edges."""
