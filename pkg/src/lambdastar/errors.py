"""Exception types shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for all toolkit-specific failures."""


class RejectedInputError(ToolkitError, ValueError):
    """Input violates a documented precondition (domain, shape, parameters)."""


class WrongClassError(RejectedInputError):
    """Operation requires the other nonlinearity class."""


class SingularEvaluationError(ToolkitError, ValueError):
    """Evaluation requested at a singular point (t = 0 ratio, domain edge)."""


class SearchFailureError(ToolkitError):
    """A constructive search (mu, k, threshold) found no admissible value."""


class NonConvergenceError(ToolkitError):
    """Iterative solver exhausted its budget without reaching tolerance."""


class DomainExitError(NonConvergenceError):
    """Iterates left the nonlinearity's domain and damping could not recover."""


class NoContractionError(ToolkitError):
    """Fixed-point map is not a contraction at the requested parameter."""


class InternalConsistencyError(ToolkitError):
    """A structural property the algorithm relies on failed (e.g. monotonicity)."""


class EigenSolverError(ToolkitError):
    """Eigenvalue computation stagnated or returned a non-real bottom eigenvalue."""


class StepFailureError(ToolkitError):
    """Continuation step size underflowed before producing any usable point."""


class UnavailableError(ToolkitError):
    """Requested quantity does not exist in the computed data (e.g. no fold)."""
