"""Exception types raised by the construction and its certifiers."""


class ConstructionError(Exception):
    """Base class for every error raised by this package."""


class DimensionHypothesisViolated(ConstructionError):
    pass


class NotContracting(ConstructionError):
    pass


class PackingInfeasible(ConstructionError):
    pass


class NotOnSphere(ConstructionError):
    pass


class ZeroVector(ConstructionError):
    pass


class TraceDiverged(ConstructionError):
    pass


class CurvesTooClose(ConstructionError):
    pass


class ProjectionPoleOnCurve(ConstructionError):
    pass


class TubeObstructed(ConstructionError):
    pass


class InsideExcludedBall(ConstructionError):
    pass


class CellCenterSingularity(ConstructionError):
    pass


class EvaluationFailed(ConstructionError):
    pass


class GridTooCoarse(ConstructionError):
    pass


class OutOfBox(ConstructionError):
    pass


class NearSingularSetWarning(UserWarning):
    """Finite-difference stencil may straddle a non-smooth set of F."""
