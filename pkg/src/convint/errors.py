"""Exception types shared across the package."""


class ConvintError(Exception):
    """Base class for all package errors."""


class DegenerateDirection(ConvintError):
    """A symmetric matrix admits no symmetrized rank-one factorization with a != 0."""


class NotTraceFree(ConvintError):
    """A matrix expected to be trace-free is not (beyond tolerance)."""


class NotInInterior(ConvintError):
    """Boundary datum lies outside the open lamination convex hull."""


class StageExhausted(ConvintError):
    """A split was requested past the last sub-step of a stage cycle."""


class SelfIntersecting(ConvintError):
    """Polygon edges cross; triangulation refused."""


class BadParameter(ConvintError):
    """Parameter outside its admissible range."""


class NotAligned(ConvintError):
    """Triangle does not match the orientation/aspect of the current diamond frame."""


class BadAspect(ConvintError):
    """Rectangle aspect ratio incompatible with the requested stacking."""


class BudgetExceeded(ConvintError):
    """Cell budget exhausted; partial results remain valid."""

    def __init__(self, cell_count: int):
        super().__init__(f"cell budget exceeded at {cell_count} cells")
        self.cell_count = cell_count


class StageViolation(ConvintError):
    """An instantiated gradient failed target-stage membership in faithful mode."""


class NotARefinement(ConvintError):
    """Fine mesh does not refine the coarse one (missing ancestry)."""


class ExponentOutOfRange(ConvintError):
    """Requested Sobolev exponents violate s*p < theta0."""
