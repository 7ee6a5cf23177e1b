import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, optimize, special

from haarweak.errors import ParameterError, ScanError
from haarweak.free_energy import (
    FAILS,
    HOLDS,
    FreeEnergyCurve,
    GridSpec,
    ModelParams,
    check_condition,
    curve_from_overlap,
    free_energy,
    gaussian_baseline_F,
    gaussian_curvature_at_zero,
    kibble_tilt,
    laplace_check,
    log_f_gauss,
    log_volume_terms,
    overlap_curve,
    threshold_scan,
    zero_noise_curvature,
    zero_noise_f,
    zero_noise_f_increasing,
    zero_noise_xi2,
)
from haarweak.simulator import SimConfig, simulate
from haarweak.y_model import log_y_density


# --- free energy at a point ----------------------------------------------------

@pytest.mark.parametrize("sigma", [0.0, 0.01, 0.3])
def test_free_energy_vanishes_at_zero(sigma):
    assert free_energy(0.0, ModelParams(sigma, 1.5, 0.1)) == pytest.approx(0.0, abs=1e-10)


@pytest.mark.parametrize("sigma", [0.0, 0.3])
def test_free_energy_flat_at_zero(sigma):
    # F is even in q, so the one-sided difference quotient is F''(0) h / 2
    p = ModelParams(sigma, 1.5, 0.1)
    h = 1e-5
    assert abs((free_energy(h, p) - free_energy(0.0, p)) / h) <= 1e-5


def test_free_energy_small_overlap_quadratic():
    q, delta = 0.1, 1.5
    approx = 0.5 * q * q * (2 - delta) / delta
    assert free_energy(q, ModelParams(0.01, delta, 0.0)) == pytest.approx(approx, rel=0.2)


@pytest.mark.parametrize("q", [1.0, 1.2, -0.1])
def test_free_energy_rejects_bad_overlap(q):
    with pytest.raises(ParameterError):
        free_energy(q, ModelParams(0.3, 1.5, 0.0))


@pytest.mark.parametrize("kw", [dict(sigma=0.1, delta=0.0), dict(sigma=0.1, delta=1.0, Delta=-1.0),
                                dict(sigma=-0.1, delta=1.0), dict(sigma=float("nan"), delta=1.0)])
def test_model_params_validation(kw):
    with pytest.raises(ParameterError):
        ModelParams(**kw)


@given(st.floats(0.0, 0.99), st.floats(0.2, 5.0), st.floats(0.0, 2.0))
def test_log_volume_terms_even_and_curvature(q, delta, Delta):
    from haarweak.free_energy import log_volume_curvature
    assert log_volume_terms(q, delta, Delta) == log_volume_terms(-q, delta, Delta)
    h = 1e-4
    fd = 2 * float(log_volume_terms(h, delta, Delta)) / h ** 2
    assert fd == pytest.approx(log_volume_curvature(delta, Delta), abs=1e-6)


# --- verdicts on the small-noise curve ------------------------------------------

def test_condition_holds_on_side_information_line():
    delta = 1.8
    curve = check_condition(ModelParams(0.01, delta, (2 - delta) / (2 * delta)))
    assert curve.verdict == HOLDS
    assert curve.tail_certified


def test_condition_fails_above_threshold():
    curve = check_condition(ModelParams(0.01, 2.5, 0.01))
    assert curve.verdict == FAILS
    assert curve.curvature_at_zero < 0


def test_boundary_curvature_vanishes():
    curve = check_condition(ModelParams(0.01, 2.0, 0.0))
    assert abs(curve.curvature_at_zero) <= 0.01


def test_curvature_identity_against_grid():
    p = ModelParams(0.01, 1.5, 0.1)
    curve = check_condition(p)
    h = 1e-2
    fd = 2 * (free_energy(h, p) - free_energy(0.0, p)) / h ** 2
    assert curve.curvature_at_zero == pytest.approx(fd, abs=1e-3)


def test_check_condition_needs_full_grid():
    with pytest.raises(ParameterError):
        check_condition(ModelParams(0.3, 1.5), GridSpec(n=20, q_max=0.9))


def test_threshold_small_side_information():
    res = threshold_scan(1e-3, 0.01)
    assert abs(res.delta_star - 2.0) <= 0.05


def test_threshold_large_side_information():
    res = threshold_scan(0.25, 0.01)
    root = optimize.brentq(lambda d: res_curv(d, 0.25), 1.0, 4.0)
    assert abs(res.delta_star - 2 / 1.25) <= 0.05
    assert abs(res.delta_star - root) <= 2e-3


def res_curv(delta, Delta):
    return check_condition(ModelParams(0.01, delta, Delta)).curvature_at_zero


def test_threshold_gaussian_baseline():
    res = threshold_scan(1e-3, 0.01, gaussian=True)
    assert abs(res.delta_star - 1.0) <= 0.05


def test_threshold_scan_without_sign_change():
    with pytest.raises(ScanError):
        threshold_scan(5.0, 0.01)


def test_curve_csv_round_trip():
    curve = check_condition(ModelParams(0.0, 1.5, 0.0), GridSpec(n=30))
    lines = curve.to_csv_text().splitlines()
    assert lines[0] == "q,F,xi2,xi1,lambda2,phi"
    assert len(lines) == 31
    values = np.array([float(r.split(",")[1]) for r in lines[1:]])
    assert np.array_equal(values, curve.values)


# --- zero-noise branch -------------------------------------------------------------

def test_zero_noise_at_origin():
    assert zero_noise_xi2(0.0) == (2.0, 0.0)


def _zero_noise_stationarity(phi, q):
    # E[E I1(phi E)/I0(phi E)] - q for E ~ Exp(1), via adaptive quadrature
    f = lambda e: e * special.i1e(phi * e) / special.i0e(phi * e) * math.exp(-e)
    return integrate.quad(f, 0, np.inf, epsabs=1e-14, epsrel=1e-13, limit=400)[0] - q


def test_zero_noise_stationarity_root():
    _, phi = zero_noise_xi2(0.5)
    ref = optimize.bisect(_zero_noise_stationarity, 0.0, 50.0, args=(0.5,), xtol=1e-12)
    assert abs(phi - ref) <= 1e-8


def test_zero_noise_value_by_quadrature():
    val, phi = zero_noise_xi2(0.5)
    g = lambda e: (math.log(special.i0e(phi * e)) + phi * e) * math.exp(-e)
    ref = 2 + 0.5 * phi - integrate.quad(g, 0, np.inf, epsabs=1e-14, limit=400)[0]
    assert val == pytest.approx(ref, abs=1e-10)


def test_zero_noise_phi_increasing():
    phis = [zero_noise_xi2(q)[1] for q in np.linspace(0.05, 0.99, 30)]
    assert all(a < b for a, b in zip(phis, phis[1:]))


def test_zero_noise_curvature_is_one():
    assert zero_noise_curvature() == pytest.approx(1.0, abs=1e-12)


def test_zero_noise_rejects_unit_overlap():
    with pytest.raises(ParameterError):
        zero_noise_xi2(1.0)


GRID = np.linspace(0.01, 0.99, 99)


@pytest.mark.parametrize("delta,Delta,expected", [(1.5, 0.1, True), (2.4, 0.0, False),
                                                  (1.0, 0.0, True), (1.0, 0.5, True), (1.0, 0.99, True)])
def test_zero_noise_f_increasing(delta, Delta, expected):
    assert zero_noise_f_increasing(delta, Delta, GRID) is expected


def test_zero_noise_f_matches_free_energy():
    p = ModelParams(0.0, 1.5, 0.1)
    assert zero_noise_f(0.4, 1.5, 0.1)[0] - 2.0 == pytest.approx(free_energy(0.4, p), abs=1e-14)


def test_small_noise_matches_zero_noise_branch():
    oc = overlap_curve(1e-3, GridSpec(n=19, q_max=0.9))
    p = ModelParams(1e-3, 1.5, 0.1)
    haar = curve_from_overlap(oc, p).values
    zero = zero_noise_f(oc.grid, 1.5, 0.1) - 2.0
    assert np.max(np.abs(haar - zero)) <= 0.05


def test_divergence_bound_near_one():
    # constant fitted on [0.5, 0.9], bound checked on (0.9, 0.99]
    for sigma, delta in ((0.0, 1.5), (0.3, 1.2)):
        curve = check_condition(ModelParams(sigma, delta, 0.0))
        slope = (2 - delta) / (2 * delta)
        fit = (curve.grid >= 0.5) & (curve.grid <= 0.9)
        c = np.max(-curve.values[fit] - slope * np.log1p(-curve.grid[fit]))
        tail = curve.grid > 0.9
        assert np.all(curve.values[tail] >= -slope * np.log1p(-curve.grid[tail]) - c)


# --- Gaussian baseline --------------------------------------------------------------

def test_gaussian_log_f_at_zero():
    assert log_f_gauss(0.0, 0.3) == 0.0


def test_gaussian_baseline_at_least_one():
    for q in (0.1, 0.5, 0.9):
        assert log_f_gauss(q, 0.3) >= 0.0


def test_kibble_tilt_reduces_to_independence():
    assert kibble_tilt(0.0) == (0.0, 0.0)


def _log_pair(u, v, q):
    c = 1 - q * q
    a = 2 * q * np.sqrt(u * v) / c
    return -(u + v) / c + np.log(special.i0e(a)) + a - math.log(c)


def gaussian_f_monte_carlo(q, sigma, n, seed, scale=2.0, chunk=1_000_000):
    """Importance-sampled F_Gauss(q).

    The plain estimator has infinite variance (its square grows like e^{u+v}
    against a tail e^{-(u+v)/(1+q)}); drawing the correlated pair at variance
    ``scale`` keeps the second moment finite whenever scale > 1/(1-q).
    """
    rng = np.random.default_rng(seed)
    hx, hw = np.polynomial.hermite_e.hermegauss(24)
    hw = hw / hw.sum()
    t = sigma * math.sqrt(2)
    parts = []
    for _ in range(n // chunk):
        g1 = (rng.standard_normal(chunk) + 1j * rng.standard_normal(chunk)) * math.sqrt(scale / 2)
        g2 = (rng.standard_normal(chunk) + 1j * rng.standard_normal(chunk)) * math.sqrt(scale / 2)
        u = np.abs(g1) ** 2
        v = np.abs(q * g1 + math.sqrt(1 - q * q) * g2) ** 2
        log_w = _log_pair(u, v, q) - _log_pair(u / scale, v / scale, q) + 2 * math.log(scale)
        # phi(y-u) phi(y-v) = phi_{sigma sqrt2}(u-v) phi_{sigma/sqrt2}(y-(u+v)/2), y integrated by Hermite
        log_k = -0.5 * ((u - v) / t) ** 2 - math.log(t * math.sqrt(2 * math.pi))
        y = 0.5 * (u + v)[:, None] + sigma / math.sqrt(2) * hx[None, :]
        inner = np.exp(-log_y_density(y, sigma)) @ hw
        parts.append(np.exp(log_w + log_k) * inner)
    x = np.concatenate(parts)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


@pytest.mark.slow
def test_gaussian_baseline_against_monte_carlo():
    mean, se = gaussian_f_monte_carlo(0.3, 0.1, 10_000_000, seed=1)
    assert abs(math.exp(log_f_gauss(0.3, 0.1)) - mean) <= 3 * se


def test_gaussian_curvature_by_finite_differences():
    sigma = 0.3
    h = 1e-2
    g = -log_f_gauss(h, sigma) - math.log1p(-h * h)
    assert gaussian_curvature_at_zero(sigma) == pytest.approx(2 * g / h ** 2, abs=1e-3)


def test_gaussian_baseline_free_energy_at_zero():
    assert gaussian_baseline_F(0.0, ModelParams(0.3, 1.0, 0.0)) == 0.0


# --- Laplace principle -----------------------------------------------------------------

def _synthetic(values_fn, curvature, n=2001, q_max=0.99):
    grid = np.linspace(0.0, q_max, n)
    return FreeEnergyCurve.from_values(grid, values_fn(grid), curvature)


def test_laplace_half_gaussian_mass():
    m = 1e4
    curve = _synthetic(lambda q: 0.5 * q * q, 1.0)
    expected = math.log(math.sqrt(math.pi / (2 * m))) / m
    assert laplace_check(curve, m) == pytest.approx(expected, rel=0.01)


def test_laplace_rate():
    curve = check_condition(ModelParams(0.0, 1.5, 0.0))
    a, b = laplace_check(curve, 1e3), laplace_check(curve, 1e4)
    assert abs(b) * 5 <= abs(a)


def test_laplace_picks_interior_minimum():
    c = 0.2
    curve = _synthetic(lambda q: c + (q - 0.5) ** 2, 2.0)
    assert laplace_check(curve, 1e5) == pytest.approx(-c, abs=1e-3)


def test_laplace_rejects_failing_curve():
    curve = _synthetic(lambda q: -q * q, -2.0)
    with pytest.raises(ParameterError):
        laplace_check(curve, 1e4)
    with pytest.raises(ParameterError):
        laplace_check(_synthetic(lambda q: q * q, 2.0), 10)


# --- empirical vs population ------------------------------------------------------------

@pytest.mark.slow
def test_empirical_free_energy_close_to_population():
    out = simulate(SimConfig(n=100_000, delta=1.0, sigma=0.3, ensemble="haar", seed=0))
    grid = GridSpec(n=20, q_max=0.9)
    p = ModelParams(0.3, 1.5, 0.1)
    pop = curve_from_overlap(overlap_curve(0.3, grid), p)
    emp = curve_from_overlap(overlap_curve(0.3, grid, out.measure()), p)
    assert np.max(np.abs(pop.values - emp.values)) <= 0.03
