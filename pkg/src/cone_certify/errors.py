"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class CertifyError(Exception):
    exit_code = 2


class ConfigError(CertifyError):
    exit_code = 1


class DomainError(CertifyError, ValueError):
    exit_code = 2


class EstimateUnavailable(DomainError):
    """A one-sided distance estimate could not be formed."""


class DegenerateVarianceError(DomainError):
    """sigma^2 vanishes (the observable is a coboundary)."""


class InconsistencyError(DomainError):
    """A computed quantity breaks an a-priori bound; the discretization is suspect."""


class ConvergenceError(CertifyError):
    exit_code = 3

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class VerificationFailure(CertifyError):
    exit_code = 4

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
