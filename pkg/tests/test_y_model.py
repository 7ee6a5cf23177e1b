import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from haarweak.errors import IntegrandError, ParameterError
from haarweak.y_model import YMeasure, log_y_density, y_density, y_moment


def _density_by_convolution(y, sigma):
    f = lambda u: math.exp(-u - 0.5 * ((y - u) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
    lo, hi = max(0.0, y - 12 * sigma), max(y, 0.0) + 12 * sigma
    val = integrate.quad(f, lo, hi, points=[min(max(y, lo), hi)], epsabs=0, epsrel=1e-13, limit=200)[0]
    return val


def test_density_normalizes():
    sigma = 0.3
    total = integrate.quad(lambda y: y_density(y, sigma), -8 * sigma, 40, points=[0.0, 1.0],
                           epsabs=0, epsrel=1e-12, limit=400)[0]
    assert abs(total - 1.0) <= 1e-8


def test_density_matches_convolution():
    assert abs(y_density(0.5, 0.3) - _density_by_convolution(0.5, 0.3)) <= 1e-10


@given(st.floats(-1, 10), st.floats(0.05, 2.0))
def test_density_matches_convolution_property(y, sigma):
    ref = _density_by_convolution(y, sigma)
    assert y_density(y, sigma) == pytest.approx(ref, rel=1e-8, abs=1e-300)


def test_second_moment_from_density():
    sigma = 0.3
    m2 = integrate.quad(lambda y: y * y * y_density(y, sigma), -8 * sigma, 60, points=[0.0, 1.0],
                        epsabs=0, epsrel=1e-12, limit=400)[0]
    assert m2 == pytest.approx(2 + sigma ** 2, rel=1e-9)


def test_log_density_far_left_is_finite():
    assert np.isfinite(log_y_density(-30.0, 0.1))


@pytest.mark.parametrize("sigma", [0.0, -1.0, np.nan])
def test_bad_sigma(sigma):
    with pytest.raises(ParameterError):
        y_density(1.0, sigma)


def test_empirical_mean():
    assert YMeasure.empirical([1, 2, 3], 0.3).expect(lambda y: y) == 2.0


@pytest.mark.parametrize("sigma", [0.01, 0.3, 1.0])
def test_population_mean_is_one(sigma):
    assert abs(YMeasure.population(sigma).expect(lambda y: y) - 1.0) <= 1e-10


@pytest.mark.slow
def test_population_third_moment_against_monte_carlo():
    sigma = 0.25
    rng = np.random.default_rng(11)
    vals = []
    for _ in range(10):
        y = rng.exponential(size=1_000_000) + sigma * rng.standard_normal(1_000_000)
        vals.append(y ** 3)
    v = np.concatenate(vals)
    mc, se = v.mean(), v.std(ddof=1) / math.sqrt(v.size)
    got = YMeasure.population(sigma).expect(lambda y: y ** 3)
    assert abs(got - mc) <= 3 * se


@pytest.mark.parametrize("k", range(7))
@pytest.mark.parametrize("sigma", [0.05, 0.3, 1.0])
def test_population_moments_match_analytic(k, sigma):
    # E (E + s eps)^k with E ~ Exp(1): binomial sum over j! and (r-1)!!
    analytic = sum(math.comb(k, j) * math.factorial(j) * sigma ** (k - j) * math.prod(range(k - j - 1, 0, -2))
                   for j in range(k + 1) if (k - j) % 2 == 0)
    got = YMeasure.population(sigma).expect(lambda y: y ** k)
    assert got == pytest.approx(analytic, rel=1e-8)
    assert y_moment(k, sigma) == pytest.approx(analytic, rel=1e-14)


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=50), st.randoms(use_true_random=False))
def test_empirical_expect_permutation_invariant(sample, rnd):
    shuffled = list(sample)
    rnd.shuffle(shuffled)
    f = lambda y: np.sin(y) + y ** 2
    a = YMeasure.empirical(sample, 0.3).expect(f)
    b = YMeasure.empirical(shuffled, 0.3).expect(f)
    assert a == b


def test_expect_reports_offending_abscissa():
    meas = YMeasure.empirical([0.5, 2.0, 3.0], 0.3)
    with pytest.raises(IntegrandError) as info:
        meas.expect(lambda y: np.where(y == 2.0, np.inf, 0.0))
    assert info.value.abscissa == 2.0


def test_atoms_reproduce_population_moments():
    meas = YMeasure.population(0.3)
    y, w = meas.atoms()
    for k in range(5):
        assert float(np.dot(w, y ** k)) == pytest.approx(y_moment(k, 0.3), rel=1e-8)


def test_large_empirical_sample_is_compressed_faithfully():
    rng = np.random.default_rng(3)
    s = rng.exponential(size=50_000) + 0.3 * rng.standard_normal(50_000)
    meas = YMeasure.empirical(s, 0.3)
    y, w = meas.atoms()
    assert y.size < s.size
    for k in range(1, 4):
        assert float(np.dot(w, y ** k)) == pytest.approx(np.mean(s ** k), rel=1e-6)


def test_csv_round_trip(tmp_path):
    meas = YMeasure.empirical([0.1, 2.5, -0.3, 1e-7], 0.2)
    path = tmp_path / "y.csv"
    meas.to_csv(path)
    back = YMeasure.from_csv(path, 0.2)
    assert np.array_equal(back.sample, meas.sample)


def test_csv_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x\n1\n")
    with pytest.raises(ParameterError):
        YMeasure.from_csv(path, 0.2)


def test_second_moment_accessor():
    assert YMeasure.population(0.25).second_moment() == 2 + 0.25 ** 2
    assert YMeasure.empirical([1.0, 3.0], 0.25).second_moment() == 5.0
