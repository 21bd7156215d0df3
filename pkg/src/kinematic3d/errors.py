"""Exception types raised across the package."""


class Kinematic3DError(Exception):
    """Base class for every error raised by this package."""


class NonPositiveDepth(Kinematic3DError, ValueError):
    pass


class BehindCamera(NonPositiveDepth):
    pass


class SingularCalibration(Kinematic3DError, ValueError):
    pass


class SingularInnovation(Kinematic3DError, ArithmeticError):
    pass


class RangeError(Kinematic3DError, ValueError):
    pass


class InsufficientData(Kinematic3DError, ValueError):
    pass


class InsufficientFrames(InsufficientData):
    pass


class EmptyMatchSet(Kinematic3DError, ValueError):
    pass


class DegenerateVariance(Kinematic3DError, ValueError):
    pass


class ParseError(Kinematic3DError, ValueError):
    """Malformed input text.

    ``line`` and ``column`` are 1-based; either may be ``None`` when unknown.
    """

    def __init__(self, message, line=None, column=None, path=None):
        self.message = message
        self.line = line
        self.column = column
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class UnitError(ParseError):
    """A field parsed as a number but is not finite."""


class ZeroIoUWarning(UserWarning):
    """A foreground box had zero overlap; the log term was clamped."""
