"""Wasserstein-1 distances, empirical moments and Lyapunov drift probes."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import qmc

from .errors import DimensionMismatch, EmptySampleSet, ValidationError

EXACT_SAMPLE_SAMPLE = "Exact1DSampleSample"
EXACT_SAMPLE_REFERENCE = "Exact1DSampleReference"
SLICED = "Sliced"


@dataclass
class W1Result:
    value: float
    method: str
    n1: int
    n2: int
    ci_half_width: Optional[float] = None
    n_directions: Optional[int] = None
    subsampled: bool = False


def _array(s):
    """Samples as an (n, d) float array from a SampleSet or array-like."""
    a = np.asarray(getattr(s, "samples", s), dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    return a


def _values_1d(s):
    a = _array(s)
    if a.shape[1] != 1:
        raise DimensionMismatch(f"expected 1D samples, got dimension {a.shape[1]}")
    return a[:, 0]


def _stride_subsample(sorted_x, n):
    """n quantile-matched order statistics of a sorted array of length m >= n."""
    m = len(sorted_x)
    idx = np.floor((np.arange(n) + 0.5) * m / n).astype(int)
    return sorted_x[idx]


def _w1_sorted(x, y):
    if len(x) != len(y):
        if len(x) > len(y):
            x = _stride_subsample(x, len(y))
        else:
            y = _stride_subsample(y, len(x))
    return float(np.mean(np.abs(x - y)))


def w1_exact_1d(s1, s2):
    """W1 between two 1D empirical measures via sorted order statistics.

    Unequal sizes: the larger set is reduced to quantile-matched order
    statistics (deterministic stride subsampling) and ``subsampled`` is set.
    """
    x = np.sort(_values_1d(s1))
    y = np.sort(_values_1d(s2))
    if len(x) == 0 or len(y) == 0:
        raise EmptySampleSet("w1_exact_1d needs non-empty samples")
    return W1Result(_w1_sorted(x, y), EXACT_SAMPLE_SAMPLE, len(x), len(y),
                    subsampled=len(x) != len(y))


def _w1_ref_sorted(y, ref):
    """int |F_emp - F_ref| dx with F_ref piecewise linear on the reference grid."""
    n = len(y)
    pts = np.union1d(ref.x, y)
    left = pts[:-1]
    width = np.diff(pts)
    f_emp = np.searchsorted(y, left, side="right") / n
    F = ref.cdf_at(pts)
    d0 = F[:-1] - f_emp
    d1 = F[1:] - f_emp
    same = d0 * d1 >= 0
    area = np.where(same, 0.5 * (np.abs(d0) + np.abs(d1)) * width, 0.0)
    cross = ~same
    a0, a1 = np.abs(d0[cross]), np.abs(d1[cross])
    area[cross] = 0.5 * (a0**2 + a1**2) / (a0 + a1) * width[cross]
    return float(area.sum())


def w1_to_reference_1d(s, ref, n_boot=0, seed=0, groups=None):
    """W1 between 1D samples and a tabulated reference law.

    Computed exactly as the integral of |F_emp - F_ref| (equal to the L1
    distance of the quantile functions). With ``n_boot > 0`` a percentile
    bootstrap half-width is attached; ``groups`` (e.g. chain ids) makes it a
    block bootstrap over groups instead of over single samples.
    """
    y = np.sort(_values_1d(s))
    if len(y) == 0:
        raise EmptySampleSet("w1_to_reference_1d needs samples")
    value = _w1_ref_sorted(y, ref)
    ci = None
    if n_boot > 0:
        reps = bootstrap_w1_to_reference(s, ref, n_boot, seed, groups)
        lo, hi = np.percentile(reps, [2.5, 97.5])
        ci = float(0.5 * (hi - lo))
    return W1Result(value, EXACT_SAMPLE_REFERENCE, len(y), len(ref.x), ci_half_width=ci)


def bootstrap_w1_to_reference(s, ref, n_boot, seed, groups=None):
    vals = _values_1d(s)
    rng = np.random.default_rng(seed)
    out = np.empty(n_boot)
    if groups is None:
        for b in range(n_boot):
            out[b] = _w1_ref_sorted(np.sort(rng.choice(vals, size=len(vals))), ref)
        return out
    groups = np.asarray(groups)
    labels = np.unique(groups)
    blocks = [vals[groups == g] for g in labels]
    for b in range(n_boot):
        pick = rng.integers(0, len(blocks), size=len(blocks))
        out[b] = _w1_ref_sorted(np.sort(np.concatenate([blocks[i] for i in pick])), ref)
    return out


def unit_directions(dim, n_directions, seed):
    """Quasi-uniform unit vectors, deterministic in ``seed``.

    d = 2: equally spaced angles on the half circle with a seeded offset.
    d > 2: scrambled Sobol points pushed through the normal quantile, normalised.
    """
    rng = np.random.default_rng(seed)
    if dim == 2:
        ang = (rng.random() + np.arange(n_directions)) * np.pi / n_directions
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    from scipy.stats import norm
    u = qmc.Sobol(d=dim, scramble=True, seed=rng).random(n_directions)
    g = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def sliced_w1(s1, s2, n_directions=64, seed=0):
    """Average 1D W1 of projections; a surrogate (lower-bound flavoured), not exact W1."""
    a, b = _array(s1), _array(s2)
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch(f"dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[1] < 2:
        raise DimensionMismatch("sliced_w1 needs dimension >= 2")
    if n_directions < 8:
        raise ValidationError("n_directions must be >= 8")
    if len(a) == 0 or len(b) == 0:
        raise EmptySampleSet("sliced_w1 needs non-empty samples")
    dirs = unit_directions(a.shape[1], n_directions, seed)
    vals = [_w1_sorted(np.sort(a @ th), np.sort(b @ th)) for th in dirs]
    return W1Result(float(np.mean(vals)), SLICED, len(a), len(b), n_directions=n_directions,
                    subsampled=len(a) != len(b))


def empirical_moment(s, k):
    """(1/n) sum |x_i|^k."""
    if k < 1:
        raise ValidationError("moment order must be >= 1")
    a = _array(s)
    if len(a) == 0:
        raise EmptySampleSet("empirical_moment needs samples")
    return float(np.mean(np.linalg.norm(a, axis=1) ** k))


@dataclass
class DriftReport:
    eta: float
    probe_points: np.ndarray
    lhs: np.ndarray
    lhs_se: np.ndarray
    rhs: np.ndarray
    violations: int
    fitted_theta1_hat: float
    theta1_se: float
    fitted_c3: float
    ball_radius_sq: float

    @property
    def passed(self):
        return (self.violations == 0 and self.fitted_theta1_hat > 0
                and self.fitted_theta1_hat > 3 * self.theta1_se)


def lyapunov_drift_probe(coeffs, probe_points, eta, n_draws=10_000, seed=0):
    """Monte-Carlo check of E V(Z_1^x) <= (1 - theta1_hat eta / 2) V(x) + c3 eta 1_B(x).

    V(x) = 1 + |x|^2. The slope of E V(Z_1^x) against V(x) is fitted by least
    squares, giving 1 - theta1_hat * eta. c3 is the smallest constant making
    E V(Z_1^x) <= (1 - theta1_hat eta) V(x) + c3 eta hold on every probe, and
    B = {V <= 2 c3 / theta1_hat}. A probe violates when its estimate exceeds
    the right-hand side by more than three standard errors.
    """
    if n_draws < 1000:
        raise ValidationError("n_draws must be >= 1000")
    P = np.atleast_2d(np.asarray(probe_points, dtype=float))
    if P.shape[1] != coeffs.dim:
        raise DimensionMismatch("probe points have the wrong dimension")
    if len(P) < 3:
        raise ValidationError("need at least three probe points")
    xi = np.random.default_rng(seed).standard_normal((n_draws, coeffs.dim))
    drift, diff = coeffs.drift(P), coeffs.diffusion(P)
    drift = np.atleast_2d(drift)
    diff = np.asarray(diff).reshape(len(P), coeffs.dim, coeffs.dim)
    sq = math.sqrt(eta)
    lhs = np.empty(len(P))
    se = np.empty(len(P))
    for i in range(len(P)):
        Z = P[i] + eta * drift[i] + sq * xi @ diff[i].T
        V = 1.0 + np.einsum("ij,ij->i", Z, Z)
        lhs[i] = V.mean()
        se[i] = V.std(ddof=1) / math.sqrt(n_draws)
    Vx = 1.0 + np.einsum("ij,ij->i", P, P)
    design = np.stack([Vx, np.ones_like(Vx)], axis=1)
    coef, *_ = np.linalg.lstsq(design, lhs, rcond=None)
    slope = coef[0]
    resid = lhs - design @ coef
    dof = max(len(P) - 2, 1)
    s2 = resid @ resid / dof
    cov = s2 * np.linalg.inv(design.T @ design)
    theta1 = (1.0 - slope) / eta
    theta1_se = math.sqrt(max(cov[0, 0], 0.0)) / eta
    c3 = max(float(np.max(lhs - slope * Vx)) / eta, 0.0)
    ball = 2.0 * c3 / theta1 if theta1 > 0 else math.inf
    rhs = (1.0 - 0.5 * theta1 * eta) * Vx + c3 * eta * (Vx <= ball)
    violations = int(np.sum(lhs - rhs > 3.0 * se))
    return DriftReport(eta=eta, probe_points=P, lhs=lhs, lhs_se=se, rhs=rhs,
                       violations=violations, fitted_theta1_hat=float(theta1),
                       theta1_se=float(theta1_se), fitted_c3=c3, ball_radius_sq=ball - 1.0)
