"""Exception hierarchy shared across the package."""


class SpeedrsError(Exception):
    pass


class ZeroInitialValue(SpeedrsError, ValueError):
    pass


class TooFewPoints(SpeedrsError, ValueError):
    pass


class WindowTooShort(SpeedrsError, ValueError):
    pass


class IndexOutOfRange(SpeedrsError, IndexError):
    pass


class DimMismatch(SpeedrsError, ValueError):
    pass


class ShapeMismatch(SpeedrsError, ValueError):
    pass


class LengthMismatch(SpeedrsError, ValueError):
    pass


class EmptyBundle(SpeedrsError, ValueError):
    pass


class TooFewSamples(SpeedrsError, ValueError):
    pass


class WindowGridMismatch(SpeedrsError, ValueError):
    pass


class OddPathCount(SpeedrsError, ValueError):
    pass


class IndivisibleCount(SpeedrsError, ValueError):
    pass


class PackingTooDense(SpeedrsError, RuntimeError):
    pass


class NumericalOverflow(SpeedrsError, ArithmeticError):
    pass


class SingularSystem(SpeedrsError, ArithmeticError):
    pass


class NonFiniteLoss(SpeedrsError, ArithmeticError):
    pass


class ConfigError(SpeedrsError, ValueError):
    pass


class EmptyResults(SpeedrsError, LookupError):
    pass
