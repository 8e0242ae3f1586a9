"""Exception types shared across the solver."""


class ResourceError(RuntimeError):
    """Requested problem size exceeds what this build supports."""


class TopologyError(ValueError):
    """Mesh entities passed together do not belong together."""


class ModelError(ValueError):
    """Input data violates a modelling assumption (e.g. velocity not tangent
    to the boundary)."""


class SolverError(RuntimeError):
    """Linear solver failed (breakdown, residual check failure)."""


class ConvergenceError(SolverError):
    """Iteration budget exhausted before reaching tolerance.

    Carries the residual history so callers can report how far the solve got.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class EliminationError(RuntimeError):
    """A local (per-cell) block was singular to working tolerance."""

    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell


class AssemblyError(RuntimeError):
    """An assembled matrix failed a structural check (e.g. symmetry
    certificate), which indicates a sign-convention bug."""


class StepError(RuntimeError):
    """A time step failed (Newton divergence or iteration cap).

    Carries the Newton residual history of the failed step.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []
