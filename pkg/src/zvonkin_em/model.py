"""SDE problem instances, sampled assumption checks and exact 1D references."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import qmc

from .errors import (DimensionMismatch, EvaluationFailure, InvalidConstant, MassLeak,
                     NonConstantSigma, NonSymmetricProduct, NotOneDimensional,
                     UnknownKind)
from .functions import ConstantMatrix, FunctionSpec, build_function

CASE1 = "Case1_LinfL1"
CASE2 = "Case2_HolderAlpha"


@dataclass(frozen=True, eq=False)
class Problem:
    dim: int
    b1: FunctionSpec
    b2: FunctionSpec
    sigma: FunctionSpec
    case_tag: str
    theta1: float
    theta2: float
    theta3: float
    lambda_sigma: float
    alpha: Optional[float] = None
    name: str = "problem"

    def drift(self, x):
        """Full drift b1 + b2 (pointwise representative of b1)."""
        return self.b1(x) + self.b2(x)

    @property
    def case_label(self):
        return "Case1" if self.case_tag == CASE1 else "Case2"


def _positive(spec, key):
    try:
        value = float(spec[key])
    except KeyError:
        raise InvalidConstant(f"missing constant {key!r}") from None
    return value


def make_problem(spec: dict) -> Problem:
    """Build and validate a :class:`Problem` from a ``[problem]`` table.

    Recognised keys: ``dim``, ``case`` (``"Case1"`` or ``"Case2"``), ``alpha``
    (Case 2), ``theta1..3``, ``lambda_sigma``, ``name`` and the sub-tables
    ``b1``, ``b2``, ``sigma``.
    """
    try:
        dim = int(spec["dim"])
    except KeyError:
        raise InvalidConstant("missing 'dim'") from None
    if dim < 1:
        raise InvalidConstant(f"dim must be >= 1, got {dim}")

    case = str(spec.get("case", ""))
    if case in ("Case1", CASE1):
        case_tag, alpha = CASE1, None
    elif case in ("Case2", CASE2):
        case_tag = CASE2
        if "alpha" not in spec:
            raise InvalidConstant("Case2 needs 'alpha'")
        alpha = float(spec["alpha"])
        if not 0.0 < alpha < 1.0:
            raise InvalidConstant(f"alpha must lie in (0,1), got {alpha}")
    else:
        raise UnknownKind(f"unknown case {case!r}; expected 'Case1' or 'Case2'")

    theta = [_positive(spec, k) for k in ("theta1", "theta2", "theta3")]
    lam_s = _positive(spec, "lambda_sigma")
    # theta2 may be 0 for exactly linear b2 (e.g. b2 = -x)
    if theta[0] <= 0 or theta[2] <= 0 or theta[1] < 0:
        raise InvalidConstant(f"theta constants must be positive, got {theta}")
    if not 0.0 < lam_s < 1.0:
        raise InvalidConstant(f"lambda_sigma must lie in (0,1), got {lam_s}")

    for key in ("b1", "b2", "sigma"):
        if key not in spec:
            raise InvalidConstant(f"missing sub-table [problem.{key}]")
    b1 = build_function(spec["b1"], dim, matrix_valued=False)
    b2 = build_function(spec["b2"], dim, matrix_valued=False)
    sigma = build_function(spec["sigma"], dim, matrix_valued=True)
    for name, f in (("b1", b1), ("b2", b2), ("sigma", sigma)):
        f.encode(dim)  # raises DimensionMismatch on wrong matrix sizes
    if case_tag == CASE2 and getattr(b1, "alpha", alpha) != alpha:
        raise DimensionMismatch(
            f"b1 Hoelder exponent {b1.alpha} disagrees with case alpha {alpha}")

    return Problem(dim=dim, b1=b1, b2=b2, sigma=sigma, case_tag=case_tag,
                   theta1=theta[0], theta2=theta[1], theta3=theta[2],
                   lambda_sigma=lam_s, alpha=alpha,
                   name=str(spec.get("name", "problem")))


def ball_points(dim, n_points, radius, seed):
    """Scrambled Sobol points, uniform-ish in the closed ball of given radius."""
    if n_points < 1 or radius <= 0:
        raise InvalidConstant("need n_points >= 1 and radius > 0")
    engine = qmc.Sobol(d=dim, scramble=True, seed=seed)
    out = []
    have = 0
    while have < n_points:
        m = int(np.ceil(np.log2(max(2 * (n_points - have), 2))))
        pts = (2.0 * engine.random_base2(m) - 1.0) * radius
        pts = pts[np.linalg.norm(pts, axis=1) <= radius]
        out.append(pts)
        have += len(pts)
    return np.concatenate(out)[:n_points]


def _evaluate(f, X):
    try:
        values = f(X)
    except Exception as exc:  # pragma: no cover - defensive
        raise EvaluationFailure(str(exc)) from exc
    bad = ~np.isfinite(values.reshape(len(X), -1)).all(axis=1)
    if bad.any():
        raise EvaluationFailure(f"non-finite value at x = {X[np.argmax(bad)]}")
    return values


@dataclass
class DissipativityReport:
    max_violation: float
    worst_point: np.ndarray

    @property
    def passed(self):
        return self.max_violation <= 0.0


def check_dissipativity(problem, n_points=10_000, radius=10.0, seed=0):
    """Largest sampled value of <x, b2(x)> + theta1 |x|^2 - theta2."""
    X = ball_points(problem.dim, n_points, radius, seed)
    B = _evaluate(problem.b2, X)
    g = np.einsum("ij,ij->i", X, B) + problem.theta1 * np.einsum("ij,ij->i", X, X) - problem.theta2
    i = int(np.argmax(g))
    return DissipativityReport(float(g[i]), X[i])


@dataclass
class LipschitzReport:
    estimate: float
    theta3: float

    @property
    def flagged(self):
        return self.estimate > self.theta3 * (1 + 1e-6)


def check_lipschitz_b2(problem, n_pairs=10_000, radius=10.0, seed=0):
    """Max sampled difference quotient of b2.

    Half the pairs are independent ball points; the other half are close pairs
    (offsets on the scale 1e-3 * radius) so local slopes are probed too.
    """
    rng = np.random.default_rng(seed)
    X = ball_points(problem.dim, n_pairs, radius, seed)
    Y = ball_points(problem.dim, n_pairs, radius, seed + 1)
    near = rng.standard_normal(X.shape) * (1e-3 * radius)
    Y[: n_pairs // 2] = X[: n_pairs // 2] + near[: n_pairs // 2]
    dist = np.linalg.norm(X - Y, axis=1)
    keep = dist > 0
    num = np.linalg.norm(_evaluate(problem.b2, X) - _evaluate(problem.b2, Y), axis=1)
    est = float(np.max(num[keep] / dist[keep])) if keep.any() else 0.0
    return LipschitzReport(est, problem.theta3)


@dataclass
class EllipticityReport:
    min_eig: float
    max_eig: float
    lambda_sigma: float

    @property
    def passed(self):
        return self.min_eig >= self.lambda_sigma and self.max_eig <= 1.0 / self.lambda_sigma


def check_ellipticity(problem, n_points=10_000, radius=10.0, seed=0):
    """Extreme eigenvalues of sigma sigma' over sampled points."""
    X = ball_points(problem.dim, n_points, radius, seed)
    S = _evaluate(problem.sigma, X)
    A = S @ np.swapaxes(S, 1, 2)
    asym = np.max(np.abs(A - np.swapaxes(A, 1, 2)))
    if asym > 1e-12:
        raise NonSymmetricProduct(f"sigma sigma' asymmetric by {asym:.3g}")
    eig = np.linalg.eigvalsh(A)
    return EllipticityReport(float(eig.min()), float(eig.max()), problem.lambda_sigma)


# Gauss-Legendre 3-point rule on [-1, 1]
_GL_NODES = np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
_GL_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 9.0


def _gl(f, a, c):
    """Per-interval 3-point Gauss-Legendre integrals of vectorised ``f``."""
    mid = 0.5 * (a + c)
    half = 0.5 * (c - a)
    t = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    vals = f(t.ravel()).reshape(t.shape)
    return half * (vals @ _GL_WEIGHTS)


@dataclass
class ReferenceMeasure:
    """Tabulated 1D law on [-R, R]: density, CDF and quantile on a uniform grid."""

    radius: float
    x: np.ndarray
    density: np.ndarray
    cdf: np.ndarray
    normalization_error: float
    mean: float
    variance: float
    abs_first_moment: float = field(default=np.nan)

    def quantile(self, t):
        t = np.asarray(t, dtype=float)
        # restrict to the strictly increasing part of the CDF
        keep = np.concatenate(([True], np.diff(self.cdf) > 0))
        return np.interp(t, self.cdf[keep], self.x[keep])

    def cdf_at(self, x):
        return np.interp(x, self.x, self.cdf, left=0.0, right=1.0)

    def density_at(self, x):
        return np.interp(x, self.x, self.density, left=0.0, right=0.0)


def gibbs_reference_1d(problem, R_ref=12.0, n_grid=24_001):
    """Exact stationary law p(x) ~ exp((2/s^2) int_0^x b) of a 1D constant-sigma problem.

    The grid is uniform; cells containing a jump of b1 are split at the jump
    and each piece is integrated with 3-point Gauss-Legendre, so jumps are
    handled exactly and no quadrature node sits on a discontinuity.
    """
    if problem.dim != 1:
        raise NotOneDimensional(f"reference needs dim = 1, got {problem.dim}")
    if not isinstance(problem.sigma, ConstantMatrix):
        raise NonConstantSigma("reference needs sigma = ConstantMatrix(s)")
    s = float(problem.sigma.matrix[0, 0])
    if s == 0:
        raise NonConstantSigma("reference needs s > 0")
    if n_grid < 1000:
        raise InvalidConstant("n_grid must be >= 1000")

    x = np.linspace(-R_ref, R_ref, n_grid)
    breaks = []
    for r in problem.b1.discontinuities():
        breaks.extend([-r, r])
    breaks = np.array([b for b in breaks if -R_ref < b < R_ref])
    pts = np.union1d(x, breaks)
    a, c = pts[:-1], pts[1:]
    node_pos = np.searchsorted(pts, x)

    def b(t):
        return problem.drift(t.reshape(-1, 1))[:, 0]

    scale = 2.0 / s**2
    Ib = _gl(b, a, c) * scale
    F_start = np.concatenate(([0.0], np.cumsum(Ib)))  # F at every point of pts
    shift = F_start.max()

    def piece_integral(g):
        # int_a^c g(t) exp(F(t) - shift) dt with F(t) = F(a) + scale * int_a^t b
        mid = 0.5 * (a + c)
        half = 0.5 * (c - a)
        t = mid[:, None] + half[:, None] * _GL_NODES[None, :]
        inner = np.stack([_gl(b, a, t[:, q]) for q in range(3)], axis=1) * scale
        w = np.exp(F_start[:-1, None] + inner - shift) * g(t)
        return half * (w @ _GL_WEIGHTS)

    mass = piece_integral(np.ones_like)
    Z = mass.sum()
    density_pts = np.exp(F_start - shift) / Z
    density = density_pts[node_pos]
    cum = np.concatenate(([0.0], np.cumsum(mass))) / Z
    cdf = cum[node_pos]
    cdf[-1] = 1.0
    peak = density.max()
    if density[0] > 1e-10 * peak or density[-1] > 1e-10 * peak:
        raise MassLeak(f"tail density at +/-{R_ref} exceeds 1e-10 of the peak; enlarge R_ref")
    m1 = piece_integral(lambda t: t).sum() / Z
    m2 = piece_integral(lambda t: t * t).sum() / Z
    mabs = piece_integral(np.abs).sum() / Z
    norm_err = abs(mass.sum() / Z - 1.0)
    return ReferenceMeasure(radius=R_ref, x=x, density=density, cdf=cdf,
                            normalization_error=float(norm_err), mean=float(m1),
                            variance=float(m2 - m1 * m1), abs_first_moment=float(mabs))

