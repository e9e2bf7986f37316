"""Error taxonomy shared by the library, CLI and service.

SchemaError   -> malformed input documents (CLI exit 1, HTTP 400)
InfeasibilityError -> no design/threshold satisfies the constraints (CLI exit 2, HTTP 422)
NumericError  -> a computation could not reach its accuracy target (CLI exit 3, HTTP 500)
"""


class GlrAdaptError(Exception):
    code = "internal"


class SchemaError(GlrAdaptError):
    code = "schema"

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class InfeasibilityError(GlrAdaptError):
    code = "infeasible"


class NumericError(GlrAdaptError):
    code = "numeric"


class PrecisionError(NumericError):
    """Monte Carlo target below resolution (target < 10/reps)."""

    code = "precision"
