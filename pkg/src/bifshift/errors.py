"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class BifshiftError(Exception):
    """Base class for all package errors."""


class NonFinite(BifshiftError):
    pass


class SingularOperator(BifshiftError):
    pass


class DimensionMismatch(BifshiftError):
    pass


class EvalFailure(BifshiftError):
    """Raised when a problem evaluator is called outside its domain."""


class DegenerateAnchor(BifshiftError):
    pass


class SolutionResidualTooLarge(BifshiftError):
    pass


class NoConvergence(BifshiftError):
    pass


class DivergedOutsideTrustRegion(BifshiftError):
    pass


class ContinuationStall(BifshiftError):
    pass


class ConditionViolated(BifshiftError):
    pass


class InadmissibleProjection(BifshiftError):
    pass


class UnknownName(BifshiftError):
    pass


class BadParams(BifshiftError):
    pass


class IoFailure(BifshiftError):
    pass
