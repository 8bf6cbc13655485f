import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_force_w1
from zvonkin_em.corrector import TransformedCoefficients, default_grid, select_lambda
from zvonkin_em.errors import DimensionMismatch, EmptySampleSet, ValidationError
from zvonkin_em.metrics import (EXACT_SAMPLE_REFERENCE, SLICED, empirical_moment,
                                lyapunov_drift_probe, sliced_w1, unit_directions, w1_exact_1d,
                                w1_to_reference_1d)
from zvonkin_em.model import gibbs_reference_1d, make_problem
from zvonkin_em.problems import preset


class Coeffs:
    def __init__(self, drift, diffusion, dim=1):
        self.dim = dim
        self.drift = drift
        self.diffusion = diffusion


@pytest.fixture(scope="module")
def ou_ref():
    return gibbs_reference_1d(make_problem(preset("ou_1d")))


def test_w1_examples():
    assert w1_exact_1d([0.0, 2.0], [1.0, 1.0]).value == 1.0
    assert w1_exact_1d([0.0], [-3.5]).value == 3.5
    x = np.random.default_rng(0).normal(size=50)
    assert w1_exact_1d(x, x[::-1]).value == 0.0


def test_w1_matches_brute_force_matching():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        n = int(rng.integers(1, 9))
        a, b = rng.normal(size=n), rng.normal(size=n)
        assert w1_exact_1d(a, b).value == pytest.approx(brute_force_w1(a, b), rel=1e-14,
                                                        abs=1e-15)


def test_w1_triangle_and_symmetry():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = int(rng.integers(1, 200))
        a, b, c = (rng.standard_cauchy(n) for _ in range(3))
        ab, bc, ac = (w1_exact_1d(p, q).value for p, q in ((a, b), (b, c), (a, c)))
        assert ac <= ab + bc + 1e-12
        assert ab == w1_exact_1d(b, a).value


def test_w1_unequal_sizes_are_subsampled():
    r = w1_exact_1d(np.arange(10.0), np.arange(5.0))
    assert r.subsampled and r.n1 == 10 and r.n2 == 5
    # stride keeps 1, 3, 5, 7, 9 against 0..4: gaps 1..5
    assert r.value == 3.0


def test_w1_errors():
    with pytest.raises(DimensionMismatch):
        w1_exact_1d(np.zeros((3, 2)), np.zeros((3, 2)))
    with pytest.raises(EmptySampleSet):
        w1_exact_1d([], [1.0])


def test_reference_point_mass_at_origin(ou_ref):
    r = w1_to_reference_1d(np.zeros(100), ou_ref)
    # E|X| for X ~ N(0, 1/2)
    assert r.value == pytest.approx(1.0 / math.sqrt(math.pi), abs=1e-6)
    assert r.method == EXACT_SAMPLE_REFERENCE


def test_reference_own_quantiles_shrink_like_one_over_n(ou_ref):
    vals = []
    for n in (100, 1000, 10_000):
        t = (np.arange(n) + 0.5) / n
        vals.append(w1_to_reference_1d(ou_ref.quantile(t), ou_ref).value)
    assert vals[1] <= vals[0] / 5 and vals[2] <= vals[1] / 5
    assert vals[2] <= 1e-3


def test_reference_shift_bounds(ou_ref):
    n = 2000
    base = ou_ref.quantile((np.arange(n) + 0.5) / n)
    v0 = w1_to_reference_1d(base, ou_ref).value
    for c in (0.01, 0.1, -0.5):
        v = w1_to_reference_1d(base + c, ou_ref).value
        assert abs(c) - v0 - 1e-12 <= v <= abs(c) + v0 + 1e-12


def test_reference_bootstrap_half_width(ou_ref):
    x = np.random.default_rng(0).normal(0, math.sqrt(0.5), 4000)
    r = w1_to_reference_1d(x, ou_ref, n_boot=50, seed=1)
    assert r.ci_half_width is not None and 0 < r.ci_half_width < 0.1
    assert r.value == w1_to_reference_1d(x, ou_ref).value


def test_reference_errors(ou_ref):
    with pytest.raises(EmptySampleSet):
        w1_to_reference_1d([], ou_ref)


def test_sliced_identity_symmetry_and_translation():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(3000, 2))
    assert sliced_w1(a, a).value == 0.0
    b = rng.normal(size=(3000, 2))
    assert sliced_w1(a, b, seed=4).value == sliced_w1(b, a, seed=4).value
    v = np.array([0.3, -0.4])
    r = sliced_w1(a, a + v, n_directions=256)
    assert r.method == SLICED and r.n_directions == 256
    assert (2 / math.pi) * 0.5 * (1 - 1e-3) <= r.value <= 0.5


def test_sliced_shrinks_with_sample_size():
    rng = np.random.default_rng(5)
    small = sliced_w1(rng.normal(size=(1000, 2)), rng.normal(size=(1000, 2))).value
    big = sliced_w1(rng.normal(size=(16000, 2)), rng.normal(size=(16000, 2))).value
    assert big < small / 2


def test_sliced_errors():
    with pytest.raises(DimensionMismatch):
        sliced_w1(np.zeros((4, 1)), np.zeros((4, 1)))
    with pytest.raises(DimensionMismatch):
        sliced_w1(np.zeros((4, 2)), np.zeros((4, 3)))
    with pytest.raises(ValidationError):
        sliced_w1(np.zeros((4, 2)), np.zeros((4, 2)), n_directions=4)


def test_unit_directions_are_deterministic_unit_vectors():
    for d in (2, 3):
        u = unit_directions(d, 64, seed=3)
        np.testing.assert_allclose(np.linalg.norm(u, axis=1), 1.0, rtol=1e-14)
        np.testing.assert_array_equal(u, unit_directions(d, 64, seed=3))


def test_moment_examples():
    assert empirical_moment(np.zeros(5), 3) == 0.0
    assert empirical_moment([1.0, -1.0], 2) == 1.0
    x = np.random.default_rng(0).normal(0, math.sqrt(0.5), 200_000)
    assert empirical_moment(x, 2) == pytest.approx(0.5, rel=0.05)
    with pytest.raises(ValidationError):
        empirical_moment(x, 0)
    with pytest.raises(EmptySampleSet):
        empirical_moment([], 2)


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=40), st.floats(-3, 3),
       st.integers(1, 6), st.randoms(use_true_random=False))
@settings(max_examples=60, deadline=None)
def test_moment_permutation_and_scaling(xs, c, k, rnd):
    x = np.array(xs)
    y = list(xs)
    rnd.shuffle(y)
    assert empirical_moment(y, k) == pytest.approx(empirical_moment(x, k), rel=1e-12, abs=1e-300)
    assert empirical_moment(c * x, k) == pytest.approx(abs(c) ** k * empirical_moment(x, k),
                                                       rel=1e-10, abs=1e-300)


def test_drift_probe_ou():
    eta = 2 ** -6
    rep = lyapunov_drift_probe(Coeffs(lambda x: -x, lambda x: np.ones((len(x), 1, 1))),
                               np.arange(9.0)[:, None], eta)
    assert rep.fitted_theta1_hat == pytest.approx(2 - eta, abs=0.05)
    assert rep.violations == 0 and rep.passed
    assert len(rep.lhs) == len(rep.rhs) == len(rep.probe_points) == 9


def test_drift_probe_driftless_fails():
    rep = lyapunov_drift_probe(Coeffs(lambda x: np.zeros_like(x),
                                      lambda x: np.ones((len(x), 1, 1))),
                               np.arange(9.0)[:, None], 2 ** -6)
    assert abs(rep.fitted_theta1_hat) < 0.05
    assert not rep.passed


def test_drift_probe_bump():
    p = make_problem(preset("bump_1d"))
    _, fld = select_lambda(p, default_grid(1))
    rep = lyapunov_drift_probe(TransformedCoefficients(p, fld), np.arange(9.0)[:, None], 2 ** -6)
    assert rep.violations == 0 and rep.fitted_theta1_hat > 0


def test_drift_probe_preconditions():
    c = Coeffs(lambda x: -x, lambda x: np.ones((len(x), 1, 1)))
    with pytest.raises(ValidationError):
        lyapunov_drift_probe(c, np.arange(9.0)[:, None], 0.1, n_draws=10)
    with pytest.raises(ValidationError):
        lyapunov_drift_probe(c, np.arange(2.0)[:, None], 0.1)
    with pytest.raises(DimensionMismatch):
        lyapunov_drift_probe(c, np.zeros((4, 2)), 0.1)
