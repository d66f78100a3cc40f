"""Exception and warning types shared across the package.

Each error carries an ``exit_code`` so the command line front end can map
failures onto its documented status codes.
"""


class FrontlabError(Exception):
    exit_code = 1


class ConfigError(FrontlabError, ValueError):
    exit_code = 2


class DomainError(FrontlabError, ValueError):
    exit_code = 2


class InfeasibleParametersError(ConfigError):
    pass


class NumericalError(FrontlabError, ArithmeticError):
    exit_code = 3


class NumericalInstabilityError(NumericalError):
    pass


class WindowEscapeError(NumericalError):
    pass


class InsufficientResolutionError(NumericalError):
    pass


class CapError(NumericalError):
    pass


class BracketError(NumericalError):
    def __init__(self, message, curve=None):
        super().__init__(message)
        self.curve = curve


class InconsistencyError(NumericalError):
    pass


class InternalConsistencyError(NumericalError):
    pass


class UnreliableEstimateError(NumericalError):
    pass


class PreconditionError(FrontlabError):
    exit_code = 4


class SubcriticalVelocityError(PreconditionError):
    pass


class VarianceWarning(UserWarning):
    pass


class ExtrapolationWarning(UserWarning):
    pass
