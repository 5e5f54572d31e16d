class PararealError(Exception):
    """Base class for every error raised by this package."""

    # parareal iteration and window where the failure happened, when known
    location = None

    def at(self, n, k):
        self.location = (n, k)
        return self


class ConfigurationError(PararealError, ValueError):
    pass


class IntegrationBlowup(PararealError, FloatingPointError):
    def __init__(self, message, step_index=None):
        super().__init__(message)
        self.step_index = step_index


class SingularityError(PararealError, ZeroDivisionError):
    pass


class InversionFailure(PararealError):
    pass


class DegenerateProjection(PararealError):
    pass
