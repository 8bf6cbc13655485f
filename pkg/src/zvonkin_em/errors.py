"""Exception hierarchy.

Validation errors (bad input, violated preconditions) derive from
:class:`ValidationError`; everything else raised at run time derives from
:class:`RuntimeFailure`. The CLI maps the two families to exit codes 1 and 2.
"""


class ZvonkinError(Exception):
    pass


class ValidationError(ZvonkinError, ValueError):
    pass


class RuntimeFailure(ZvonkinError, RuntimeError):
    pass


# model
class UnknownKind(ValidationError):
    pass


class InvalidConstant(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class NotOneDimensional(ValidationError):
    pass


class NonConstantSigma(ValidationError):
    pass


class EvaluationFailure(RuntimeFailure):
    pass


class NonSymmetricProduct(RuntimeFailure):
    pass


class MassLeak(RuntimeFailure):
    pass


# corrector
class UnsupportedDimension(ValidationError):
    pass


class SingularAssembly(RuntimeFailure):
    pass


class LinearSolveFailure(RuntimeFailure):
    pass


class LambdaSearchExhausted(RuntimeFailure):
    pass


class NoConvergence(RuntimeFailure):
    pass


# sampler
class NonFiniteState(RuntimeFailure):
    pass


class ExcursionGuard(RuntimeFailure):
    pass


class Case1Unsupported(ValidationError):
    pass


# metrics / harness
class EmptySampleSet(ValidationError):
    pass


class InsufficientPoints(ValidationError):
    pass


class DegenerateFit(ValidationError):
    pass


class IoFailure(RuntimeFailure):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


class StageFailure(RuntimeFailure):
    """Wraps an upstream error with the pipeline stage (and step size) it hit."""

    def __init__(self, stage, cause, eta=None):
        where = stage if eta is None else f"{stage} (eta={eta!r})"
        super().__init__(f"{where}: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.eta = eta
        self.cause = cause
