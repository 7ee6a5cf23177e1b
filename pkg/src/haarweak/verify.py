"""Verification suites behind ``haarweak verify``.

Each suite returns rows (experiment, m, trials, statistic, value,
tolerance, passed); a suite passes when every row does.  All randomness
derives from the seed.
"""

from __future__ import annotations

import math

import numpy as np

from . import clt
from .clt import REPORT_FIELDS  # noqa: F401  (re-exported for the CLI)
from .errors import ParameterError
from .simulator import (
    CDP_MOMENT_TOL,
    KS_TOL,
    SimConfig,
    cdp_haar_moments,
    cdp_orthogonality_error,
    concentration_check,
    haar_route_ks,
    overlap_law_check,
    rng_for,
    simulate,
    wlln_report,
)

IDENTITY_INSTANCES = 50
IDENTITY_DIRECT = 10          # leading instances forced to m = 2
IDENTITY_SIGMAS = (0.1, 0.3, 0.5)
CDP_ORTHO_TOL = 1e-12
LOG_FACTORIAL_TOL = 1e-12
RATE_SEEDS = 5
RATE_MIN_WINS = 4


def _row(experiment, m, trials, statistic, value, tolerance, passed) -> dict:
    return dict(experiment=experiment, m=int(m), trials=int(trials), statistic=statistic,
                value=float(value), tolerance=float(tolerance), passed=bool(passed))


def model_instance(m: int, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """y = m * (uniform point of the simplex) + sigma * noise."""
    return m * rng.dirichlet(np.ones(m)) + sigma * rng.standard_normal(m)


def identity_instances(seed: int, count: int = IDENTITY_INSTANCES, max_m: int = 8):
    rng = rng_for(seed, 10)
    for k in range(count):
        m = 2 if k < IDENTITY_DIRECT else int(rng.integers(2, max_m + 1))
        sigma = float(rng.choice(IDENTITY_SIGMAS))
        yield model_instance(m, sigma, rng), sigma


def suite_identities(seed: int = 0, trials: int | None = None) -> list[dict]:
    rows = []
    checks = [clt.representation_check(y, s) for y, s in identity_instances(seed)]
    spread = max(c.spread for c in checks)
    direct = max(c.direct_gap for c in checks if c.direct_gap is not None)
    rows.append(_row("denominator_identity", 8, len(checks), "lambda_spread_max", spread,
                     clt.SPREAD_TOL, spread <= clt.SPREAD_TOL))
    rows.append(_row("denominator_identity", 2, IDENTITY_DIRECT, "direct_gap_max", direct,
                     clt.DIRECT_TOL, direct <= clt.DIRECT_TOL))

    rng = rng_for(seed, 11)
    frames = trials or 20000
    worst = 0.0
    for m in (2, 3, 5, 8):
        y = model_instance(m, 0.5, rng)
        chk = clt.numerator_check(y, 0.4, 0.5, seed=seed, frame_count=frames)
        worst = max(worst, chk.spread)
    rows.append(_row("numerator_identity", 8, frames, "tilt_spread_max", worst,
                     clt.FIBER_TOL, worst <= clt.FIBER_TOL))

    y2 = model_instance(2, 0.5, rng)
    norm = clt.fiber_normalization(y2, -0.2, 0.5, 0.5, samples=200_000, seed=seed)
    z = abs(norm.total - 1.0) / norm.total_se
    rows.append(_row("fiber_density", 2, norm.samples, "total_mass_z", z,
                     clt.MEAN_SE_MULT, z <= clt.MEAN_SE_MULT))
    zm = float(np.max(np.abs(norm.mean - norm.target_mean) / norm.mean_se))
    rows.append(_row("fiber_density", 2, norm.samples, "first_moment_z_max", zm,
                     clt.MEAN_SE_MULT, zm <= clt.MEAN_SE_MULT))

    lf = max(abs(math.lgamma(m) - math.fsum(math.log(k) for k in range(1, m))) for m in range(1, 65))
    rows.append(_row("stirling", 64, 0, "log_factorial_gap", lf, LOG_FACTORIAL_TOL,
                     lf <= LOG_FACTORIAL_TOL))

    y = clt.clt_instance(0.3, 2000, seed)
    lb = clt.lower_bound_check(y, 0.3)
    rows.append(_row("lower_bound", 2000, 0, "log_margin", lb.log_l - lb.log_bound, 0.0, lb.passed))
    return rows


def suite_clt1d(seed: int = 0, trials: int | None = None) -> list[dict]:
    trials = trials or 1_000_000
    rep = clt.local_clt_error_1d(0.3, 2000, trials, seed)
    rows = [dict(r, value=float(r["value"]), tolerance=float(r["tolerance"]), passed=bool(r["passed"]))
            for r in rep.rows()]
    wins = 0
    for s in range(seed, seed + RATE_SEEDS):
        small = clt.local_clt_gap_exact(0.3, 500, s)
        large = clt.local_clt_gap_exact(0.3, 4000, s)
        wins += large < small
    rows.append(_row("clt1d_rate", 4000, RATE_SEEDS, "seeds_gap_4000_below_500", wins,
                     RATE_MIN_WINS, wins >= RATE_MIN_WINS))
    return rows


def suite_clt4d(seed: int = 0, trials: int | None = None) -> list[dict]:
    rep = clt.local_clt_error_4d(0.3, 0.5, 500, trials or 40_000, seed)
    return [dict(r, value=float(r["value"]), tolerance=float(r["tolerance"]), passed=bool(r["passed"]))
            for r in rep.rows()]


def suite_wlln(seed: int = 0, trials: int | None = None) -> list[dict]:
    m = trials or 100_000
    out = simulate(SimConfig(n=m, delta=1.0, sigma=0.3, ensemble="haar", seed=seed))
    rep = wlln_report(out)
    rows = [_row("wlln", m, 1, f"moment_{r.k}_gap", r.gap, r.tolerance, r.passed) for r in rep.rows]
    rows.append(_row("wlln", m, 1, "lnz_sup_gap", rep.lnz_sup_gap, rep.lnz_tolerance,
                     rep.lnz_sup_gap <= rep.lnz_tolerance))
    conc = concentration_check(m, 0.3, seed)
    rows.append(_row("concentration", m, 1, "xi1_gap", conc.xi1_gap, conc.xi1_tolerance,
                     conc.xi1_gap <= conc.xi1_tolerance))
    rows.append(_row("concentration", m, 1, "xi2_sup_gap", conc.xi2_sup_gap, conc.xi2_tolerance,
                     conc.xi2_sup_gap <= conc.xi2_tolerance))
    return rows


def suite_overlap(seed: int = 0, trials: int | None = None) -> list[dict]:
    trials = trials or 100_000
    law = overlap_law_check(10, trials, seed)
    rows = [_row("overlap_law", 10, trials, "ks_beta", law.ks_distance, KS_TOL, law.passed)]
    ortho = cdp_orthogonality_error(256, 4, seed)
    rows.append(_row("cdp_columns", 1024, 1, "orthogonality_error", ortho, CDP_ORTHO_TOL,
                     ortho <= CDP_ORTHO_TOL))
    ks = haar_route_ks(64, 2.0, 0.3, trials, seed)
    rows.append(_row("haar_routes", 128, trials, "ks_two_sample", ks, KS_TOL, ks <= KS_TOL))
    for r in cdp_haar_moments(seed=seed):
        rows.append(_row("cdp_vs_haar", 4096, 400, f"moment_{r.k}_relative_gap", r.relative_gap,
                         CDP_MOMENT_TOL, r.passed))
    return rows


SUITE_FUNCS = {
    "identities": suite_identities,
    "clt1d": suite_clt1d,
    "clt4d": suite_clt4d,
    "wlln": suite_wlln,
    "overlap": suite_overlap,
}


def run_suite(name: str, seed: int = 0, trials: int | None = None) -> list[dict]:
    try:
        func = SUITE_FUNCS[name]
    except KeyError:
        raise ParameterError(f"unknown suite {name!r}; choose from {sorted(SUITE_FUNCS)}") from None
    return func(seed=seed, trials=trials)
