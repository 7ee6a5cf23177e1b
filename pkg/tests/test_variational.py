import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from haarweak.errors import ParameterError
from haarweak.free_energy import zero_noise_curvature
from haarweak.simulator import SimConfig, simulate
from haarweak.variational import (
    box_radius,
    p1_value,
    p2_value,
    solve_xi1,
    solve_xi2,
    xi1_via_min_t,
    xi2_curvature_at_zero,
    xi2_second_derivative,
)
from haarweak.y_model import YMeasure

SIGMAS = (0.02, 0.05, 0.1, 0.3, 0.5, 1.0)


@pytest.fixture(scope="module")
def measures():
    return {s: YMeasure.population(s) for s in SIGMAS + (0.01,)}


@pytest.mark.parametrize("sigma", SIGMAS)
def test_xi1_two_routes_agree(measures, sigma):
    assert abs(solve_xi1(measures[sigma]).value - xi1_via_min_t(measures[sigma])) <= 1e-7


def test_xi1_two_routes_agree_empirical():
    rng = np.random.default_rng(0)
    meas = YMeasure.empirical(rng.exponential(size=500) + 0.3 * rng.standard_normal(500), 0.3)
    assert abs(solve_xi1(meas).value - xi1_via_min_t(meas)) <= 1e-7


def test_xi1_population_stationarity(measures):
    # the maximizer balances E[mean of Texp] = 1; for the population law it sits at zero tilt
    sol = solve_xi1(measures[0.3])
    assert abs(sol.lam) <= 1e-9
    assert sol.hessian[0, 0] < 0


def test_xi1_approaches_one_as_noise_vanishes(measures):
    vals = [solve_xi1(measures[s]).value for s in (0.5, 0.1, 0.02, 0.01)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert abs(vals[-1] - 1.0) <= 0.01


@pytest.mark.parametrize("sigma", (0.05, 0.3, 1.0))
def test_xi2_at_zero_is_twice_xi1(measures, sigma):
    xi1 = solve_xi1(measures[sigma])
    xi2 = solve_xi2(0.0, measures[sigma])
    assert abs(xi2.value - 2 * xi1.value) <= 1e-8
    assert abs(xi2.phi) <= 1e-9


@pytest.mark.parametrize("q,sigma", [(0.1, 0.3), (0.5, 0.3), (0.8, 0.05), (0.3, 1.0)])
def test_xi2_second_derivative_matches_finite_differences(measures, q, sigma):
    meas = measures[sigma]
    h = 1e-3
    sol = solve_xi2(q, meas)
    vals = [solve_xi2(q + d, meas, sol.argmax).value for d in (-h, 0.0, h)]
    fd = (vals[0] - 2 * vals[1] + vals[2]) / h ** 2
    assert xi2_second_derivative(q, meas, sol) == pytest.approx(fd, rel=1e-4)


@given(st.floats(0.0, 0.95), st.sampled_from((0.05, 0.3, 1.0)))
def test_xi2_convex_in_overlap(measures, q, sigma):
    assert xi2_second_derivative(q, measures[sigma]) >= 0


def test_curvature_at_zero_small_noise(measures):
    curv = xi2_curvature_at_zero(measures[0.01])
    assert abs(curv - zero_noise_curvature()) <= 0.02
    assert abs(curv - 1.0) <= 0.02


@pytest.mark.parametrize("sigma", (0.05, 0.3))
def test_curvature_at_zero_matches_general_formula(measures, sigma):
    assert xi2_curvature_at_zero(measures[sigma]) == pytest.approx(
        xi2_second_derivative(0.0, measures[sigma]), rel=1e-8)


def test_xi2_divergence_lower_bound_single_point_calibration(measures):
    # constant fixed by equality at q = 0.5, bound asserted at q = 0.9
    meas = measures[0.05]
    c = -solve_xi2(0.5, meas).value - 0.5 * math.log(0.5)
    assert solve_xi2(0.9, meas).value >= -c - 0.5 * math.log1p(-0.9)


@pytest.mark.parametrize("sigma", (0.05, 0.3))
def test_xi2_divergence_lower_bound_extrapolates(measures, sigma):
    # constant fitted on [0.5, 0.9], bound checked beyond the fitting range
    meas = measures[sigma]
    start = None
    fit = []
    for q in np.linspace(0.5, 0.9, 9):
        sol = solve_xi2(float(q), meas, start)
        start = sol.argmax
        fit.append(-sol.value - 0.5 * math.log1p(-q))
    c = max(fit)
    for q in (0.93, 0.96, 0.98, 0.99, 0.995, 0.999):
        sol = solve_xi2(q, meas, start)
        start = sol.argmax
        assert sol.value >= -c - 0.5 * math.log1p(-q)


@given(st.floats(0.0, 0.95), st.sampled_from((0.05, 0.3, 1.0)))
def test_argmax_inside_coercivity_box(measures, q, sigma):
    sol = solve_xi2(q, measures[sigma])
    assert abs(sol.lam) + abs(sol.phi) <= box_radius(q, measures[sigma])


def _segment(rng, radius, dim):
    pts = rng.uniform(-1, 1, size=(2, dim))
    pts *= radius * rng.uniform(0, 1, size=(2, 1)) / np.abs(pts).sum(axis=1, keepdims=True)
    return pts


@given(st.integers(0, 2 ** 32 - 1), st.sampled_from((0.05, 0.3, 1.0)))
def test_p1_concave_on_segments(measures, seed, sigma):
    meas = measures[sigma]
    a, b = _segment(np.random.default_rng(seed), box_radius(0.0, meas), 1)[:, 0]
    mid = p1_value(0.5 * (a + b), meas)
    assert mid >= 0.5 * (p1_value(a, meas) + p1_value(b, meas)) - 1e-10


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.0, 0.9), st.sampled_from((0.05, 0.3, 1.0)))
def test_p2_concave_on_segments(measures, seed, q, sigma):
    meas = measures[sigma]
    a, b = _segment(np.random.default_rng(seed), box_radius(q, meas), 2)
    mid = p2_value(0.5 * (a + b), q, meas)
    assert mid >= 0.5 * (p2_value(a, q, meas) + p2_value(b, q, meas)) - 1e-10


@pytest.mark.parametrize("q", [1.0, 1.5, -0.1, float("nan")])
def test_xi2_rejects_bad_overlap(measures, q):
    with pytest.raises(ParameterError):
        solve_xi2(q, measures[0.3])


def test_known_values(measures):
    assert solve_xi1(measures[0.3]).value == pytest.approx(1.2536440044289374, abs=1e-9)
    sol = solve_xi2(0.5, measures[0.3])
    assert sol.value == pytest.approx(2.66450, abs=1e-5)


@pytest.mark.slow
def test_empirical_maximizers_converge():
    out = simulate(SimConfig(n=100_000, delta=1.0, sigma=0.3, ensemble="haar", seed=0))
    emp, pop = out.measure(), YMeasure.population(0.3)
    for q in (0.3, 0.6, 0.9):
        e, p = solve_xi2(q, emp), solve_xi2(q, pop)
        assert abs(e.value - p.value) <= 0.02
        assert np.max(np.abs(e.argmax - p.argmax)) <= 0.05
