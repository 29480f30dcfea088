"""
Exception hierarchy for the radial inverse spectral toolkit

Every error carries the process exit code the CLI reports for it:
2 configuration, 3 numerical failure, 4 IO failure.
"""
from typing import Optional


class PipelineError(RuntimeError):
    exit_code = 1


class ConfigurationError(PipelineError):
    exit_code = 2


class ArtifactError(PipelineError):
    """Missing or malformed input/output files"""
    exit_code = 4


class NumericalError(PipelineError):
    exit_code = 3


class DomainError(NumericalError):
    """Point outside the potential's evaluation box"""


class CoverageError(NumericalError):
    """Sublevel set touches the quadrature box boundary"""


class UnsupportedGeometryError(NumericalError):
    """Level set is not star-shaped about the detected center"""


class NearCriticalError(NumericalError):
    """|grad V| too small on a sampled level surface"""


class EigensolverError(NumericalError):
    def __init__(self, message: str, ell: Optional[int] = None, h: Optional[float] = None):
        context = []
        if ell is not None:
            context.append(f"l={ell}")
        if h is not None:
            context.append(f"h={h:g}")
        if context:
            message = f"{message} ({', '.join(context)})"
        super().__init__(message)
        self.ell = ell
        self.h = h


class TruncationError(NumericalError):
    """Test function support reaches beyond the known spectrum"""


class InsufficientDataError(NumericalError):
    pass


class RegularizationError(NumericalError):
    pass


class InversionError(NumericalError):
    pass


class DivisionError(NumericalError):
    pass


class StagnationError(NumericalError):
    """Gradient flow stalled at a near-critical point"""


class DegenerateTrajectoryError(NumericalError):
    pass


class IllConditionedError(NumericalError):
    pass


class InvalidProfileError(NumericalError):
    pass


class AssemblyError(NumericalError):
    """Report requested before every pipeline stage produced its output"""
