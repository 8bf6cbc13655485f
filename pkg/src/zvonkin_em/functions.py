"""Closed registry of coefficient functions.

Each spec evaluates on a single point ``x`` of shape (d,) or a batch of shape
(n, d). Vector fields return (d,) / (n, d); matrix fields return (d, d) /
(n, d, d). Evaluation is delegated to the compiled kernels so every caller
sees the same bits.
"""
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels as K
from .errors import DimensionMismatch, InvalidConstant, UnknownKind


def _as_matrix(value, dim):
    a = np.asarray(value, dtype=float)
    if a.ndim == 0:
        return float(a) * np.eye(dim)
    if a.ndim == 1 and a.size == dim:
        return np.diag(a)
    if a.shape != (dim, dim):
        raise DimensionMismatch(f"matrix of shape {a.shape} in dimension {dim}")
    return a


class FunctionSpec:
    """Base class: subclasses supply ``terms`` and the output rank."""

    kind: str = ""
    matrix_valued = False

    def terms(self) -> list[tuple[float, float, float, float, np.ndarray | None]]:
        raise NotImplementedError

    def discontinuities(self) -> list[float]:
        """Radii |x| = r across which the function jumps."""
        return []

    def encode(self, dim):
        rows, mats = [], []
        for code, p0, p1, p2, mat in self.terms():
            if mat is not None:
                if mat.shape != (dim, dim):
                    raise DimensionMismatch(
                        f"{self.kind}: matrix shape {mat.shape} in dimension {dim}")
                p0 = float(len(mats))
                mats.append(mat)
            rows.append((code, p0, p1, p2))
        terms = np.array(rows, dtype=float).reshape(-1, 4)
        mats_arr = np.array(mats, dtype=float) if mats else np.zeros((1, dim, dim))
        return terms, mats_arr

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.ascontiguousarray(np.atleast_2d(x))
        terms, mats = self.encode(X.shape[1])
        if self.matrix_valued:
            out = K.mat_field_batch(terms, mats, X)
        else:
            out = K.vec_field_batch(terms, mats, X)
        return out[0] if single else out

    def is_zero(self):
        return False


@dataclass(frozen=True, eq=False)
class Linear(FunctionSpec):
    """x -> A x."""

    matrix: np.ndarray
    kind = "Linear"

    def terms(self):
        return [(K.LINEAR, 0.0, 0.0, 0.0, self.matrix)]

    def is_zero(self):
        return not np.any(self.matrix)


@dataclass(frozen=True)
class HolderSine(FunctionSpec):
    """x -> amplitude * (|sin x_1|^alpha, ..., |sin x_d|^alpha); bounded, alpha-Hoelder."""

    amplitude: float
    alpha: float
    kind = "HolderSine"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise InvalidConstant(f"HolderSine alpha must lie in (0,1), got {self.alpha}")

    def terms(self):
        return [(K.HOLDER_SINE, self.amplitude, self.alpha, 0.0, None)]

    def is_zero(self):
        return self.amplitude == 0.0


@dataclass(frozen=True)
class Bump(FunctionSpec):
    """height * 1{|x| <= halfwidth} along the first coordinate direction.

    In one dimension the indicator is taken on (-w, w] (left limits at the jumps).
    """

    height: float
    halfwidth: float
    kind = "Bump"

    def __post_init__(self):
        if self.halfwidth <= 0:
            raise InvalidConstant("Bump halfwidth must be positive")

    def terms(self):
        return [(K.BUMP, self.height, self.halfwidth, 0.0, None)]

    def discontinuities(self):
        return [] if self.height == 0 else [self.halfwidth]

    def is_zero(self):
        return self.height == 0.0


@dataclass(frozen=True)
class Sine(FunctionSpec):
    """x -> amplitude * (sin(freq x_1), ..., sin(freq x_d)); smooth and bounded."""

    amplitude: float
    frequency: float = 1.0
    kind = "Sine"

    def terms(self):
        return [(K.SINE, self.amplitude, self.frequency, 0.0, None)]

    def is_zero(self):
        return self.amplitude == 0.0


@dataclass(frozen=True, eq=False)
class ConstantMatrix(FunctionSpec):
    matrix: np.ndarray
    kind = "ConstantMatrix"
    matrix_valued = True

    def terms(self):
        return [(K.CONST_MATRIX, 0.0, 0.0, 0.0, self.matrix)]


@dataclass(frozen=True)
class DiagonalSineMatrix(FunctionSpec):
    """diag(base + amplitude * sin(frequency * x_i)); eigenvalues in [base - amp, base + amp]."""

    base: float
    amplitude: float
    frequency: float = 1.0
    kind = "DiagonalSineMatrix"
    matrix_valued = True

    def __post_init__(self):
        if self.base - abs(self.amplitude) <= 0:
            raise InvalidConstant("DiagonalSineMatrix needs base - |amplitude| > 0")

    def terms(self):
        return [(K.DIAG_SINE_MATRIX, self.base, self.amplitude, self.frequency, None)]


@dataclass(frozen=True)
class Composite(FunctionSpec):
    """Sum of specs of the same rank."""

    parts: tuple
    kind = "Composite"

    def __post_init__(self):
        ranks = {p.matrix_valued for p in self.parts}
        if not self.parts or len(ranks) != 1:
            raise InvalidConstant("Composite needs at least one part, all of one rank")

    @property
    def matrix_valued(self):
        return self.parts[0].matrix_valued

    def terms(self):
        return [t for p in self.parts for t in p.terms()]

    def discontinuities(self):
        return sorted({r for p in self.parts for r in p.discontinuities()})

    def is_zero(self):
        return all(p.is_zero() for p in self.parts)


VECTOR_KINDS = ("Linear", "HolderSine", "Bump", "Sine", "Composite")
MATRIX_KINDS = ("ConstantMatrix", "DiagonalSineMatrix", "Composite")


def build_function(table: dict, dim: int, matrix_valued: bool) -> FunctionSpec:
    """Build a spec from a config table ``{kind = ..., <params>}``."""
    if "kind" not in table:
        raise UnknownKind("function table lacks a 'kind' key")
    kind = table["kind"]
    allowed = MATRIX_KINDS if matrix_valued else VECTOR_KINDS
    if kind not in allowed:
        raise UnknownKind(f"unknown {'matrix' if matrix_valued else 'vector'} kind {kind!r}; "
                          f"expected one of {', '.join(allowed)}")
    try:
        if kind == "Composite":
            parts: Sequence[dict] = table["parts"]
            return Composite(tuple(build_function(p, dim, matrix_valued) for p in parts))
        if kind == "Linear":
            return Linear(_as_matrix(table["matrix"], dim))
        if kind == "HolderSine":
            return HolderSine(float(table["amplitude"]), float(table["alpha"]))
        if kind == "Bump":
            return Bump(float(table["height"]), float(table["halfwidth"]))
        if kind == "Sine":
            return Sine(float(table["amplitude"]), float(table.get("frequency", 1.0)))
        if kind == "ConstantMatrix":
            return ConstantMatrix(_as_matrix(table["matrix"], dim))
        return DiagonalSineMatrix(float(table["base"]), float(table["amplitude"]),
                                  float(table.get("frequency", 1.0)))
    except KeyError as exc:
        raise InvalidConstant(f"{kind}: missing parameter {exc.args[0]!r}") from None
