"""Exception hierarchy shared by all ddinfo modules."""


class DdinfoError(Exception):
    """Base class for every error raised by ddinfo."""


class InvalidInputError(DdinfoError, ValueError):
    """Non-square, non-finite or otherwise malformed numeric input."""


class ShapeMismatchError(InvalidInputError):
    pass


class NotPSDError(DdinfoError, ValueError):
    pass


class NotAnEllipsoidError(DdinfoError, ValueError):
    pass


class PreconditionError(DdinfoError, ValueError):
    pass


class AssumptionViolatedError(DdinfoError, ValueError):
    """The QMI matrix of a perturbation model is not a matrix ellipsoid."""


class InvalidModelError(DdinfoError, ValueError):
    pass


class SingularRError(DdinfoError, ValueError):
    """A requested perturbation is not reachable through a singular R factor."""


class InvalidCertificateError(DdinfoError, ValueError):
    pass


class MalformedProblemError(DdinfoError, ValueError):
    pass


class MissingVariableError(DdinfoError, KeyError):
    pass


class SolverError(DdinfoError, RuntimeError):
    pass


class SamplingExhaustedError(DdinfoError, RuntimeError):
    pass


class NumericalError(DdinfoError, ArithmeticError):
    """A postcondition that should hold exactly failed beyond tolerance."""


class SchemaError(InvalidInputError):
    """A configuration or data file does not match its documented layout."""
