"""Exception types raised across the package."""


class StructConvError(Exception):
    """Base class for all library errors."""


class ShapeError(StructConvError, ValueError):
    """Operand shapes are inconsistent."""


class TensorIndexError(StructConvError, IndexError):
    """A (multi-)index lies outside its governing shape."""


class SingularBasisError(StructConvError, ArithmeticError):
    """A basis stack is singular or numerically too ill-conditioned to invert."""


class SizeError(StructConvError, MemoryError):
    """A dense materialisation would exceed the configured entry cap."""


class ArgumentError(StructConvError, ValueError):
    """An argument has an invalid value."""
