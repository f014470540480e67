"""Exception hierarchy.

Validation problems derive from :class:`ValidationError` (CLI exit code 2),
budget overruns from :class:`BudgetExceeded` (exit code 3).
"""


class RiskmonError(Exception):
    """Base class for all errors raised by riskmon."""


class ValidationError(RiskmonError, ValueError):
    """Input does not satisfy a structural or numerical invariant."""


class NonUniformDepth(ValidationError):
    pass


class BadProbability(ValidationError):
    pass


class OrphanNode(ValidationError):
    pass


class UnknownNode(ValidationError, KeyError):
    pass


class IncompleteProcess(ValidationError):
    pass


class ArityMismatch(ValidationError):
    pass


class DepthOrder(ValidationError):
    pass


class NegativePayoff(ValidationError):
    pass


class NegativeInput(ValidationError):
    pass


class ZeroMassAtom(ValidationError):
    pass


class InconsistentInputs(ValidationError):
    pass


class GridTooLarge(ValidationError):
    pass


class BudgetExceeded(RiskmonError):
    pass


class NoOrder(RiskmonError):
    """Neither one-step dominance direction holds between two monitors."""
