"""
Domain errors raised by the services.

Routes translate them to HTTPException, the CLI to exit code 2.
"""


class DgtdError(Exception):
    """Base class for every error raised by the DGTD services"""


class NonErgodic(DgtdError):
    pass


class SingularGram(DgtdError):
    pass


class SingularB(DgtdError):
    pass


class DimensionMismatch(DgtdError):
    pass


class NotConnected(DgtdError):
    pass


class DomainError(DgtdError):
    pass


class NoConvergence(DgtdError):
    pass


class SingularSystem(DgtdError):
    pass


class UnknownPreset(DgtdError):
    pass


class ConfigError(DgtdError):
    pass


class AssumptionViolation(DgtdError):
    """Constraint boxes do not contain the saddle components they must contain"""


class ProblemTooLarge(DgtdError):
    """A dense desk-scale oracle was asked to assemble a system beyond its size guard"""
