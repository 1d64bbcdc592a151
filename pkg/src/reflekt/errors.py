"""Exception hierarchy shared by all modules."""


class ReflektError(Exception):
    """Base class for every error raised by the package."""


class NonPositiveMass(ReflektError, ValueError):
    pass


class MetricAxiomViolation(ReflektError, ValueError):
    """Raised with the offending point tuple in ``witness``."""

    def __init__(self, message, witness=()):
        super().__init__(message)
        self.witness = tuple(witness)


class UnknownPoint(ReflektError, KeyError):
    pass


class EmptyDomain(ReflektError, ValueError):
    pass


class UnknownGenerator(ReflektError, ValueError):
    pass


class ResolutionTooLarge(ReflektError, ValueError):
    pass


class NegativeArgument(ReflektError, ValueError):
    pass


class DimensionMismatch(ReflektError, ValueError):
    pass


class CoverageFailure(ReflektError, RuntimeError):
    pass


class GeometryViolation(ReflektError, AssertionError):
    def __init__(self, message, witness=()):
        super().__init__(message)
        self.witness = tuple(witness)


class SingularSystem(ReflektError, RuntimeError):
    pass


class EmptyInner(ReflektError, ValueError):
    pass


class ZeroDenominator(ReflektError, ArithmeticError):
    pass


class FeasibilityFailure(ReflektError, AssertionError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ZeroMass(ReflektError, ArithmeticError):
    pass


class NonPositiveTime(ReflektError, ValueError):
    pass


class NotAhlforsRegular(ReflektError, ValueError):
    def __init__(self, message, witness=()):
        super().__init__(message)
        self.witness = tuple(witness) if witness is not None else ()


class InvalidCutoff(ReflektError, ValueError):
    pass


class ConfigError(ReflektError, ValueError):
    pass


class IoFailure(ReflektError, OSError):
    pass


class InvariantFailure(ReflektError, AssertionError):
    """Structured pipeline failure: which module/operation broke and why."""

    def __init__(self, module, operation, message, witness=()):
        super().__init__(f"{module}.{operation}: {message}")
        self.module = module
        self.operation = operation
        self.witness = tuple(witness)
