import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from haarweak import clt
from haarweak.errors import ParameterError
from haarweak.simulator import rng_for
from haarweak.tilted import texp_mean_var
from haarweak.verify import model_instance


def _phi(x, s):
    return np.exp(-0.5 * (x / s) ** 2) / (s * math.sqrt(2 * math.pi))


# --- denominator: the m = 2 direct value --------------------------------------

@pytest.mark.slow
def test_direct_value_against_monte_carlo():
    y, sigma = (1.0, 1.0), 0.3
    rng = np.random.default_rng(0)
    vals = []
    for _ in range(10):
        u = rng.uniform(0, 2, 1_000_000)
        vals.append(_phi(y[0] - u, sigma) * _phi(y[1] - 2 + u, sigma))
    v = np.concatenate(vals)
    assert abs(clt.script_l_direct(y, sigma) - v.mean()) <= 3 * v.std(ddof=1) / math.sqrt(v.size)


@given(st.floats(-1, 3), st.floats(-1, 3), st.floats(0.05, 2.0))
def test_direct_value_symmetric(a, b, sigma):
    assert clt.log_script_l_direct((a, b), sigma) == pytest.approx(clt.log_script_l_direct((b, a), sigma), abs=1e-10)


def test_direct_value_flat_kernel_limit():
    sigma = 10.0
    y = (0.7, 1.6)
    assert clt.script_l_direct(y, sigma) == pytest.approx(_phi(y[0] - 1, sigma) * _phi(y[1] - 1, sigma), rel=0.02)


def test_direct_value_only_for_pairs():
    with pytest.raises(ParameterError):
        clt.script_l_direct((1.0, 1.0, 1.0), 0.3)


# --- denominator: change of measure -----------------------------------------------

def test_representation_pair_instance():
    chk = clt.representation_check((1.0, 1.0), 0.3)
    assert chk.spread <= clt.SPREAD_TOL
    assert chk.direct_gap <= clt.DIRECT_TOL
    assert chk.passed


@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 8), st.sampled_from((0.1, 0.3, 0.5, 1.0)))
@settings(max_examples=15)
def test_representation_invariant_in_tilt(seed, m, sigma):
    y = model_instance(m, sigma, np.random.default_rng(seed))
    assert clt.representation_check(y, sigma).spread <= clt.SPREAD_TOL


def test_representation_at_empirical_tilt():
    y = model_instance(8, 0.3, rng_for(3, 0))
    lam_hat, _ = clt.empirical_lambda1(y, 0.3)
    chk = clt.representation_check(y, 0.3, lambdas=(0.0, lam_hat))
    assert chk.spread <= clt.SPREAD_TOL


def test_sum_density_integrates_to_one():
    y = model_instance(5, 0.3, rng_for(4, 0))
    lam = 0.2
    mean, var = texp_mean_var(lam, y, 0.3)
    mu, sd = float(mean.sum()), math.sqrt(float(var.sum()))
    f = lambda s: math.exp(clt.log_sum_density(s, lam, y, 0.3))
    total = integrate.quad(f, max(0.0, mu - 10 * sd), mu + 10 * sd, epsabs=0, epsrel=1e-10, limit=200)[0]
    assert total == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("point_shift", [-2.0, 0.0, 1.5])
def test_sum_density_matches_characteristic_function(point_shift):
    y = model_instance(6, 0.4, rng_for(5, 0))
    lam = -0.3
    mean, var = texp_mean_var(lam, y, 0.4)
    point = float(mean.sum()) + point_shift * math.sqrt(float(var.sum()))
    conv = math.exp(clt.log_sum_density(point, lam, y, 0.4))
    assert conv == pytest.approx(clt.sum_density_cf(point, lam, y, 0.4), rel=1e-8)


def test_log_factorial_against_summation():
    for m in range(1, 65):
        direct = math.fsum(math.log(k) for k in range(1, m))
        assert abs(clt.log_factorial(m - 1) - direct) <= 1e-12


def test_lower_bound_holds_at_scale():
    y = clt.clt_instance(0.3, 2000, 0)
    chk = clt.lower_bound_check(y, 0.3)
    assert chk.passed
    assert 1.0 / chk.envelope <= chk.v_hat <= chk.envelope


# --- numerator: fiber representation ----------------------------------------------

@pytest.mark.parametrize("m", [2, 3, 5])
def test_numerator_invariant_in_tilt(m):
    y = model_instance(m, 0.5, rng_for(6, m))
    chk = clt.numerator_check(y, 0.4, 0.5, seed=1, frame_count=5000)
    assert chk.spread <= clt.FIBER_TOL


def test_bloch_frames_are_unitary():
    frames, weights = clt.bloch_frames(20, 20)
    prod = np.einsum("nai,nbi->nab", frames, np.conj(frames))
    assert np.allclose(prod, np.eye(2), atol=1e-13)
    assert weights.sum() == pytest.approx(1.0)


def test_stiefel_frames_orthonormal_rows():
    frames, weights = clt.stiefel_frames(5, 100, np.random.default_rng(0))
    prod = np.einsum("nai,nbi->nab", frames, np.conj(frames))
    assert np.allclose(prod, np.eye(2), atol=1e-13)


def test_fiber_density_normalized():
    y = model_instance(2, 0.5, rng_for(7, 0))
    norm = clt.fiber_normalization(y, -0.2, 0.5, 0.5, samples=100_000, seed=2)
    assert norm.passed, (norm.total, norm.total_se, norm.mean, norm.target_mean)


def test_overlap_matrix_validation():
    q = clt.as_overlap_matrix(0.3)
    assert np.allclose(q, [[1, 0.3], [0.3, 1]])
    with pytest.raises(ParameterError):
        clt.as_overlap_matrix(1.0)


# --- local CLT ------------------------------------------------------------------------

def test_local_clt_1d_small_run():
    rep = clt.local_clt_error_1d(0.3, 500, 5000, seed=0)
    assert rep.mean_ok
    assert abs(rep.estimate - rep.gaussian) <= 4 * rep.estimate_se + 0.01 * rep.gaussian


def test_exact_gap_shrinks_with_size():
    assert clt.local_clt_gap_exact(0.3, 4000, 0) < clt.local_clt_gap_exact(0.3, 500, 0)


def test_local_clt_4d_small_run():
    rep = clt.local_clt_error_4d(0.3, 0.5, 100, 4000, seed=0)
    assert rep.trace_ok
    assert np.all(np.abs(rep.mean_z) <= clt.MEAN_SE_MULT)
    assert rep.cov_gap <= 0.1


def test_report_csv(tmp_path):
    rows = clt.local_clt_error_1d(0.3, 100, 200, seed=1).rows()
    path = tmp_path / "r.csv"
    clt.write_report(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(clt.REPORT_FIELDS)
    assert len(lines) == len(rows) + 1
    assert all(line.split(",")[-1] in ("true", "false") for line in lines[1:])
