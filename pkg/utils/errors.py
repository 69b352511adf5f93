class PipelineError(Exception):
    """Base class for every error the pipeline reports to the user"""
    exit_code = 1


class ConfigValidationError(PipelineError):
    """Run configuration failed schema validation"""
    exit_code = 2

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__('; '.join(self.errors))


class AdmissibilityError(PipelineError):
    """A control violates 0 <= c <= x, pi >= 0, c + sum(pi) <= x"""
    exit_code = 2


class DimensionError(PipelineError):
    """A density and a codebook live on different grids"""
    exit_code = 2


class MissingArtifactError(PipelineError):
    """An upstream stage output is missing or does not match the manifest"""
    exit_code = 2

    def __init__(self, stage, detail=''):
        self.stage = stage
        message = f"run stage '{stage}' first"
        if detail:
            message = f'{detail}: {message}'
        super().__init__(message)


class NumericalError(PipelineError):
    """Numerical failure (non-finite values, collapsed filters, divergent integrals)"""
    exit_code = 3


class DegenerateObservationError(NumericalError):
    """phi(r) fell below the underflow floor"""


class FilterCollapseError(NumericalError):
    """Filter density has zero (or non-finite) mass"""


class DivergentTailError(NumericalError):
    """Tail integral of |x|^-p diverges (p <= N)"""


class BoundUnavailableError(NumericalError):
    """A term of the error bound is not finite"""

    def __init__(self, term, detail=''):
        self.term = term
        super().__init__(f'bound term {term!r} unavailable {detail}'.strip())


class DomainTooWideError(NumericalError):
    """A Lipschitz or sup estimate is not finite on the working domain"""


class PruningError(NumericalError):
    """Pruning left no codebook rows"""


class InvariantViolation(NumericalError):
    """Internal invariant broken"""
