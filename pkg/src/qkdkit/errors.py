"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line front-end can map
failures to stable process exit statuses: 1 parse, 2 validation,
3 dimension, 4 numerical.
"""


class QkdkitError(Exception):
    exit_code = 2


class ParseError(QkdkitError):
    exit_code = 1


class ValidationError(QkdkitError, ValueError):
    exit_code = 2


class NotHermitian(ValidationError):
    pass


class NotPSD(ValidationError):
    pass


class BadTrace(ValidationError):
    pass


class InvalidChannel(ValidationError):
    pass


class InvalidState(ValidationError):
    pass


class BadConfig(ValidationError):
    pass


class BadDistribution(ValidationError):
    pass


class BadEffect(ValidationError):
    pass


class UnsupportedLengths(ValidationError):
    pass


class EmptyPath(ValidationError):
    pass


class DimensionError(QkdkitError, ValueError):
    exit_code = 3


class DimMismatch(DimensionError):
    pass


class DimensionOverflow(DimensionError):
    pass


class NumericalError(QkdkitError, ArithmeticError):
    exit_code = 4


class EigensolverFailure(NumericalError):
    pass
