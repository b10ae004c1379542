"""Exception hierarchy shared by every curvlab module.

The CLI maps these onto exit codes: precondition failures exit 1,
non-convergence exits 2, unreadable input or output exits 3.
"""


class CurvlabError(Exception):
    """Base class for all curvlab errors."""

    exit_code = 1


class PreconditionError(CurvlabError, ValueError):
    """Input data violates the documented precondition of an operation."""

    exit_code = 1


class MeshError(PreconditionError):
    """Mesh is not a closed oriented 2-manifold or has degenerate faces."""


class GenusError(PreconditionError):
    """Operation requires genus >= 2."""


class SurfaceMismatchError(PreconditionError):
    """Fields living on different surfaces were combined."""


class MeshFormatError(CurvlabError):
    """Mesh text could not be parsed."""

    exit_code = 3


class ConvergenceError(CurvlabError, RuntimeError):
    """Iterative solver stopped without meeting its tolerance.

    ``diagnostics`` carries the last residual and iteration count so callers
    can report partial progress.
    """

    exit_code = 2

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
