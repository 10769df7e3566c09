"""Exception types shared across the package."""


class SplashlabError(Exception):
    """Base class for all package errors."""


class DomainParameterError(SplashlabError):
    """Domain parameters outside their admissible range."""


class GeometryError(SplashlabError):
    """Infeasible or degenerate geometry."""


class CoverageError(SplashlabError):
    """Chart atlas fails to cover the required region."""

    def __init__(self, message, gaps=None):
        super().__init__(message)
        self.gaps = gaps if gaps is not None else []


class MarkerError(SplashlabError):
    """Marker points could not be located on the mesh."""


class OperatorError(SplashlabError):
    """Field rank/order incompatible with the requested operator."""


class LabelError(SplashlabError):
    """Unknown boundary region label."""


class CompatibilityError(SplashlabError):
    """Boundary/solvability compatibility condition violated."""


class LinearAlgebraError(SplashlabError):
    """Sparse solve failed or did not converge."""

    def __init__(self, message, residual_history=None):
        super().__init__(message)
        self.residual_history = residual_history if residual_history is not None else []


class InversionError(SplashlabError):
    """Deformation gradient not invertible (mesh tangling)."""

    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell


class TangleError(SplashlabError):
    """Time step produced a non-positive Jacobian."""


class ConstructionError(SplashlabError):
    """Initial-data building block violates its support conditions."""


class AssemblyRejection(SplashlabError):
    """Initial data rejected: a compatibility residual exceeds its ceiling."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class HarnessError(SplashlabError):
    """Convergence-study harness misuse."""


class ConfigError(SplashlabError):
    """Run configuration unreadable or invalid."""


class FileLayoutError(SplashlabError):
    """Expected pipeline artifacts missing from a directory."""
