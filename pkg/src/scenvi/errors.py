"""Exception hierarchy.

Every error carries a short machine-readable ``code`` so the command line
front-end can emit ``{stage, code, message}`` objects.
"""


class ScenviError(Exception):
    code = "error"

    def __init__(self, message: str = "", stage: str | None = None):
        super().__init__(message)
        self.stage = stage

    def to_dict(self) -> dict:
        return {"stage": self.stage or "unknown", "code": self.code, "message": str(self)}


class InvalidQueryError(ScenviError, ValueError):
    code = "invalid-query"


class NoBracketError(ScenviError, ArithmeticError):
    code = "no-bracket"


class DimensionMismatchError(ScenviError, ValueError):
    code = "dimension-mismatch"


class InvalidSetError(ScenviError, ValueError):
    code = "invalid-set"


class InfeasibleSetError(ScenviError):
    code = "infeasible-set"


class NotConvergedError(ScenviError):
    """Raised when an iterative routine exhausts its budget.

    The best iterate found so far is attached as ``result`` when available.
    """

    code = "not-converged"

    def __init__(self, message: str = "", stage: str | None = None, result=None):
        super().__init__(message, stage)
        self.result = result


class DegeneratePairsError(ScenviError, ValueError):
    code = "degenerate-pairs"


class MissingGradientError(ScenviError, ValueError):
    code = "missing-gradient"


class EmptySamplesError(ScenviError, ValueError):
    code = "empty-samples"


class NonMonotoneError(ScenviError):
    code = "non-monotone-suspected"


class NonPSDCovarianceError(ScenviError, ValueError):
    code = "non-psd-covariance"


class SamplerFailureError(ScenviError):
    code = "sampler-failure"


class DegenerateTrialError(ScenviError):
    code = "degenerate-trial"


class ParseError(ScenviError, ValueError):
    code = "parse-error"


class NegativeDemandError(ScenviError, ValueError):
    code = "negative-demand"


class InconsistentWidthError(ScenviError, ValueError):
    code = "inconsistent-width"


class InsufficientDataError(ScenviError, ValueError):
    code = "insufficient-data"


class FactorizationError(ScenviError, ArithmeticError):
    code = "factorization-failure"
