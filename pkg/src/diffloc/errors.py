"""Exception hierarchy for diffraction-aided positioning."""


class DiffLocError(Exception):
    """Base class for every error raised by this package."""


class GeometryError(DiffLocError):
    """Inputs describe a geometry the diffraction model cannot handle."""


class DegenerateEdge(GeometryError):
    pass


class InvalidGeometry(GeometryError):
    pass


class InvalidVector(GeometryError):
    pass


class NoSolution(GeometryError):
    pass


class CornerDiffraction(GeometryError):
    """The Fermat point falls outside the finite edge (diffraction from a corner)."""

    def __init__(self, message, lam=None):
        super().__init__(message)
        self.lam = lam


class NonDifferentiable(GeometryError):
    pass


class GrazingRay(GeometryError):
    pass


class ShadowBoundary(GeometryError):
    """Keller coefficients diverge; a UTD treatment would be required."""


class Divergent(DiffLocError):
    pass


class NotIdentifiable(DiffLocError):
    """The Jacobian has rank < 3, so the Fisher information is singular."""

    def __init__(self, message, rank):
        super().__init__(message)
        self.rank = rank


class DegenerateGeometry(DiffLocError):
    pass


class NotConverged(DiffLocError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ConfigError(DiffLocError):
    pass
