"""Exception hierarchy.

Every error carries a machine-readable ``code`` and the CLI ``exit_code``
it maps to (2 = bad input/usage, 3 = numeric failure).
"""


class DAEError(Exception):
    code = "error"
    exit_code = 3

    def to_dict(self):
        return {"code": self.code, "message": str(self)}


class UsageError(DAEError):
    code = "usage"
    exit_code = 2


class DimensionError(DAEError):
    code = "dimension"
    exit_code = 2


class ExprSyntaxError(DAEError):
    code = "syntax"
    exit_code = 2

    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownIdentifierError(ExprSyntaxError):
    code = "unknown_identifier"


class ProblemError(DAEError):
    """Problem definition violates the schema or a structural invariant."""

    code = "problem"
    exit_code = 2

    def __init__(self, field, reason):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


class RestPointError(ProblemError):
    code = "rest_point_residual"

    def __init__(self, residual):
        super().__init__("rest_point", f"residual norm {residual:.3e} too large")
        self.residual = residual


class NumericError(DAEError):
    code = "numeric"


class DomainError(NumericError):
    code = "domain"

    def __init__(self, message, subexpr=None):
        if subexpr is not None:
            message = f"{message} in '{subexpr}'"
        super().__init__(message)
        self.subexpr = subexpr


class SingularMatrixError(NumericError):
    code = "singular_matrix"

    def __init__(self, pivot, message="matrix is singular to tolerance"):
        super().__init__(f"{message} (pivot magnitude {pivot:.3e})")
        self.pivot = pivot


class ConvergenceError(NumericError):
    code = "non_convergence"

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class DivergenceError(ConvergenceError):
    code = "divergence"


class PreconditionError(NumericError):
    code = "precondition"


class StepSizeError(NumericError):
    code = "step_underflow"


class ConstraintLossError(NumericError):
    code = "constraint_loss"

    def __init__(self, message, time):
        super().__init__(f"{message} at t={time:.17g}")
        self.time = time


class NoBranchError(NumericError):
    code = "no_branch"

    def __init__(self, k):
        super().__init__(f"constraint {k} has no simple real root")
        self.k = k


class DegenerateConstraintError(NumericError):
    code = "degenerate_constraint"
