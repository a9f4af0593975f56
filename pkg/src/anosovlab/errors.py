"""Exception types raised by the lab.

Every error carries an ``exit_code`` used by the command-line runner so that
failures surface as typed, nonzero exits.
"""


class LabError(Exception):
    exit_code = 1


class NonConvergence(LabError):
    """An iterative solver (Newton inverse, bundle iteration) hit its cap."""

    exit_code = 10


class NotPartiallyHyperbolicAnosov(LabError):
    """The linear part lacks three real eigenvalues |a_uu| > |a_wu| > 1 > |a_s|."""

    exit_code = 11


class ConeViolation(LabError):
    """A cone condition failed at some grid point.

    ``point`` holds the worst grid point and ``detail`` names the check.
    """

    exit_code = 12

    def __init__(self, message, point=None, detail=None):
        super().__init__(message)
        self.point = point
        self.detail = detail


class PlaneDegeneracy(LabError):
    exit_code = 13


class OrientationJump(LabError):
    exit_code = 14


class VertexBudgetExceeded(LabError):
    exit_code = 15


class ResolutionTooCoarse(LabError):
    exit_code = 16


class TailBoundUnavailable(LabError):
    exit_code = 17


class AdaptednessViolation(LabError):
    exit_code = 18


class SeriesStall(LabError):
    exit_code = 19

    def __init__(self, message, ratio=None):
        super().__init__(message)
        self.ratio = ratio


class ScaleBelowResolution(LabError):
    exit_code = 20
