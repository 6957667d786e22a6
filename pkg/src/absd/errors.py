"""Exception types raised by the solver and the analysis drivers."""


class AbsdError(Exception):
    """Base class for package errors."""


class ConfigError(AbsdError):
    """Malformed or inconsistent experiment configuration.

    ``lineno`` is set when the problem can be traced to a line of the
    configuration text.
    """

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class NonConvergence(AbsdError):
    """Newton inversion of the constitutive law failed.

    Carries the position of the worst offending point and, when raised from
    inside a time step, the simulation time.
    """

    def __init__(self, message: str, location=None, time: float | None = None):
        self.location = location
        self.time = time
        super().__init__(message)


class InsufficientHistory(AbsdError):
    """Too few stored states to form the requested time derivative."""


class DegenerateSeries(AbsdError):
    pass


class ZeroDissipation(AbsdError):
    pass


class ZeroDenominator(AbsdError):
    pass


class ProjectionError(AbsdError):
    """The weighted Poisson solve behind the Helmholtz projector diverged."""
