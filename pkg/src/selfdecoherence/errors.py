"""Exception hierarchy shared by the library and the command line driver."""


class SelfDecoherenceError(Exception):
    """Base class for all library errors."""


class ShapeError(SelfDecoherenceError, ValueError):
    """Array shapes are inconsistent with the declared grid or channel count."""


class GridMismatchError(SelfDecoherenceError, ValueError):
    """Two operands live on different grids (or carry different hbar)."""


class BoundaryError(SelfDecoherenceError, ValueError):
    """Support reaches the periodic wrap of the grid, so the transform would alias."""


class NonHermitianError(SelfDecoherenceError, ValueError):
    """A block that must be hermitian is not, beyond round-off."""


class PreconditionError(SelfDecoherenceError, ValueError):
    """An operation was called on an input outside its domain."""


class NumericalError(SelfDecoherenceError, ArithmeticError):
    """A numerical stage produced a non-finite or inconsistent result."""


class UnreachableLevelError(SelfDecoherenceError, ValueError):
    """A requested level set does not close inside its chart."""


class ScenarioError(SelfDecoherenceError, ValueError):
    """Scenario file could not be parsed or violates a declared range."""

    def __init__(self, message, *, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class QuadratureAccuracyWarning(UserWarning):
    """Oscillatory quadrature is evaluated past its resolved time range."""
