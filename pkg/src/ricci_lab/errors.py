"""Exception types raised by ricci_lab.

Plain argument problems (bad axis, mismatched grids, empty lists) raise
``ValueError``; the classes here cover failures that carry numerical context.
"""


class RicciLabError(Exception):
    pass


class GeometryError(RicciLabError):
    """A metric failed positive-definiteness; ``point`` is the worst grid index."""

    def __init__(self, message, point=None, min_eigenvalue=None):
        super().__init__(message)
        self.point = point
        self.min_eigenvalue = min_eigenvalue


class FlowDegeneracyError(GeometryError):
    """Positive-definiteness (or finiteness) was lost during a flow step.

    ``trajectory`` holds the snapshots recorded before the failure, when the
    error escapes from :func:`ricci_lab.flow.run`.
    """

    def __init__(self, message, t=None, point=None, min_eigenvalue=None, trajectory=None):
        super().__init__(message, point=point, min_eigenvalue=min_eigenvalue)
        self.t = t
        self.trajectory = trajectory


class ResolutionError(ValueError):
    """A generated feature is too narrow for the grid spacing."""


class InconsistencyError(RicciLabError):
    pass


class NumericalFailure(RicciLabError):
    pass


class ConfigError(ValueError):
    """An experiment configuration is malformed or inconsistent."""


class MemberFailure(RicciLabError):
    """A family member failed and strict mode is on."""
