"""Measurement-model simulator and concentration reports.

y_i = m |(A x)_i|^2 + sigma eps_i with x a uniform unit vector in C^n and
A one of

* haar:     first n columns of an m x m Haar unitary.  A x is then uniform
            on the unit sphere of C^m, so y is sampled directly as
            m |U|^2 + sigma eps without building A.
* cdp:      L stacked blocks F P_l / sqrt(L), F the unitary DFT and P_l a
            diagonal of uniform random phases; A^H A = I.
* gaussian: i.i.d. CN(0, 1/m) entries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import ParameterError
from .tilted import texp_log_z
from .y_model import YMeasure, y_moment

ENSEMBLES = ("haar", "cdp", "gaussian")
KS_TOL = 0.01
WLLN_SE_MULT = 4.0
LNZ_GAP_TOL = 0.01
CDP_MOMENT_TOL = 0.02
XI1_GAP_TOL = 0.01
XI2_GAP_TOL = 0.02


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings; ``masks`` is the CDP mask count L (m = L n)."""

    n: int
    delta: float
    sigma: float
    ensemble: str = "haar"
    seed: int = 0
    masks: int | None = None

    def __post_init__(self) -> None:
        if not (isinstance(self.n, (int, np.integer)) and self.n >= 2):
            raise ParameterError(f"n must be an integer >= 2, got {self.n!r}")
        if not (math.isfinite(self.delta) and self.delta > 0):
            raise ParameterError(f"delta must be positive, got {self.delta!r}")
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise ParameterError(f"sigma must be non-negative, got {self.sigma!r}")
        if self.ensemble not in ENSEMBLES:
            raise ParameterError(f"ensemble must be one of {ENSEMBLES}, got {self.ensemble!r}")
        if not (0 <= int(self.seed) < 2 ** 64):
            raise ParameterError("seed must be a 64-bit unsigned integer")
        if self.ensemble == "cdp":
            if self.mask_count * self.n != self.m:
                raise ParameterError(f"cdp needs m = L n; got m = {self.m}, n = {self.n}, L = {self.mask_count}")

    @property
    def m(self) -> int:
        return int(math.ceil(self.delta * self.n - 1e-9))

    @property
    def mask_count(self) -> int:
        if self.masks is not None:
            return int(self.masks)
        return int(round(self.delta))


@dataclass(frozen=True)
class SimOutput:
    y: np.ndarray
    ensemble: str
    seed: int
    config: SimConfig = field(repr=False)

    def measure(self) -> YMeasure:
        """Empirical Y-measure of the measurements (needs sigma > 0)."""
        return YMeasure.empirical(self.y, self.config.sigma)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("y\n")
            for v in self.y:
                fh.write(f"{float(v):.17g}\n")


def rng_for(seed: int, *path: int) -> np.random.Generator:
    """Generator for a sub-stream: the seed plus a spawn-key path."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(path)))


def complex_gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard complex Gaussian: E|z|^2 = 1."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def uniform_unit_vector(rng: np.random.Generator, dim: int, count: int | None = None) -> np.ndarray:
    shape = (dim,) if count is None else (count, dim)
    z = complex_gaussian(rng, shape)
    return z / np.linalg.norm(z, axis=-1, keepdims=True)


def haar_unitary(m: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed m x m unitary via QR with the R-diagonal phase fix."""
    z = complex_gaussian(rng, (m, m))
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def cdp_matrix(n: int, masks: int, rng: np.random.Generator) -> np.ndarray:
    """Stacked [F P_1; ...; F P_L] / sqrt(L) with uniform phases on (-pi, pi]."""
    f = np.fft.fft(np.eye(n), norm="ortho")
    blocks = []
    for _ in range(masks):
        theta = -rng.uniform(-math.pi, math.pi, n)  # (-pi, pi]
        blocks.append(f * np.exp(1j * theta)[None, :])
    return np.vstack(blocks) / math.sqrt(masks)


def _cdp_apply(x: np.ndarray, masks: int, rng: np.random.Generator) -> np.ndarray:
    n = x.size
    out = []
    for _ in range(masks):
        theta = -rng.uniform(-math.pi, math.pi, n)
        out.append(np.fft.fft(np.exp(1j * theta) * x, norm="ortho"))
    return np.concatenate(out) / math.sqrt(masks)


def simulate(cfg: SimConfig) -> SimOutput:
    """Draw one measurement vector; identical configs give identical output."""
    m = cfg.m
    signal_rng, noise_rng = rng_for(cfg.seed, 0), rng_for(cfg.seed, 1)
    if cfg.ensemble == "haar":
        ax = uniform_unit_vector(signal_rng, m)
    elif cfg.ensemble == "cdp":
        x = uniform_unit_vector(signal_rng, cfg.n)
        ax = _cdp_apply(x, cfg.mask_count, signal_rng)
    else:
        x = uniform_unit_vector(signal_rng, cfg.n)
        a = complex_gaussian(signal_rng, (m, cfg.n)) / math.sqrt(m)
        ax = a @ x
    y = m * np.abs(ax) ** 2
    if cfg.sigma > 0:
        y = y + cfg.sigma * noise_rng.standard_normal(m)
    return SimOutput(y, cfg.ensemble, int(cfg.seed), cfg)


def simulate_haar_explicit(cfg: SimConfig) -> SimOutput:
    """Haar measurements from a materialized unitary (reference route)."""
    if cfg.ensemble != "haar":
        raise ParameterError("explicit route is defined for the haar ensemble")
    m = cfg.m
    signal_rng, noise_rng = rng_for(cfg.seed, 0), rng_for(cfg.seed, 1)
    a = haar_unitary(m, signal_rng)[:, : cfg.n]
    x = uniform_unit_vector(signal_rng, cfg.n)
    y = m * np.abs(a @ x) ** 2
    if cfg.sigma > 0:
        y = y + cfg.sigma * noise_rng.standard_normal(m)
    return SimOutput(y, "haar", int(cfg.seed), cfg)


def pooled_sample(cfg: SimConfig, size: int, explicit: bool = False) -> np.ndarray:
    """Concatenate measurements of independent trials until ``size`` values."""
    out, total, trial = [], 0, 0
    run = simulate_haar_explicit if explicit else simulate
    while total < size:
        sub = SimConfig(cfg.n, cfg.delta, cfg.sigma, cfg.ensemble,
                        int(np.random.SeedSequence(cfg.seed, spawn_key=(2, trial)).generate_state(1, np.uint64)[0]),
                        cfg.masks)
        y = run(sub).y
        out.append(y)
        total += y.size
        trial += 1
    return np.concatenate(out)[:size]


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WllnRow:
    k: int
    empirical: float
    population: float
    gap: float
    tolerance: float
    passed: bool


@dataclass(frozen=True)
class WllnReport:
    rows: list
    lnz_sup_gap: float
    lnz_tolerance: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows) and self.lnz_sup_gap <= self.lnz_tolerance


def wlln_report(out: SimOutput, orders=(1, 2, 3, 4), lam_grid=None) -> WllnReport:
    """Empirical vs population moments of Y, and the log-normalizer gap.

    Moment tolerance is four standard errors of the sample mean of y^k;
    the log-normalizer gap is the sup over |lam| <= 1 of
    |mean ln Z_Texp(lam, y_i) - E ln Z_Texp(lam, Y)|.
    """
    if out.ensemble != "haar":
        raise ParameterError("the WLLN report is defined for the haar ensemble")
    sigma = out.config.sigma
    if not sigma > 0:
        raise ParameterError("the WLLN report needs sigma > 0")
    y = out.y
    rows = []
    for k in orders:
        if not (isinstance(k, (int, np.integer)) and 1 <= k <= 6):
            raise ParameterError(f"moment orders must lie in 1..6, got {k!r}")
        yk = y ** k
        emp = float(np.mean(yk))
        pop = y_moment(int(k), sigma)
        tol = WLLN_SE_MULT * float(np.std(yk, ddof=1)) / math.sqrt(y.size)
        rows.append(WllnRow(int(k), emp, pop, abs(emp - pop), tol, abs(emp - pop) <= tol))
    if lam_grid is None:
        lam_grid = np.linspace(-1.0, 1.0, 21)
    pop_measure = YMeasure.population(sigma)
    ya, wa = pop_measure.atoms()
    gaps = [abs(float(np.mean(texp_log_z(lam, y, sigma))) - float(np.dot(wa, texp_log_z(lam, ya, sigma))))
            for lam in lam_grid]
    return WllnReport(rows, float(max(gaps)), LNZ_GAP_TOL)


@dataclass(frozen=True)
class OverlapLawReport:
    n: int
    trials: int
    ks_distance: float
    p_value: float
    mean: float
    mean_se: float

    @property
    def passed(self) -> bool:
        return self.ks_distance <= KS_TOL


def overlap_law_check(n: int, trials: int, seed: int = 0) -> OverlapLawReport:
    """KS distance of |x^H x'|^2 (independent uniform unit x, x') to Beta(1, n-1)."""
    if n < 2:
        raise ParameterError("n must be at least 2")
    if trials < 10_000:
        raise ParameterError("overlap law check needs at least 1e4 trials")
    rng = rng_for(seed, 3)
    x = uniform_unit_vector(rng, n, trials)
    xp = uniform_unit_vector(rng, n, trials)
    q2 = np.abs(np.sum(np.conj(x) * xp, axis=1)) ** 2
    res = stats.kstest(q2, stats.beta(1, n - 1).cdf)
    return OverlapLawReport(n, trials, float(res.statistic), float(res.pvalue), float(q2.mean()),
                            float(q2.std(ddof=1) / math.sqrt(trials)))


def two_sample_ks(a: np.ndarray, b: np.ndarray) -> float:
    return float(stats.ks_2samp(a, b).statistic)


def haar_route_ks(n: int, delta: float, sigma: float, size: int = 100_000, seed: int = 0) -> float:
    """Two-sample KS distance between shortcut and explicit-matrix Haar measurements."""
    cfg = SimConfig(n, delta, sigma, "haar", seed)
    shortcut = pooled_sample(cfg, size)
    explicit = pooled_sample(SimConfig(n, delta, sigma, "haar", seed + 1), size, explicit=True)
    return two_sample_ks(shortcut, explicit)


def cdp_orthogonality_error(n: int, masks: int, seed: int = 0) -> float:
    """Spectral norm of A^H A - I for one CDP draw."""
    a = cdp_matrix(n, masks, rng_for(seed, 4))
    return float(np.linalg.norm(a.conj().T @ a - np.eye(n), 2))


@dataclass(frozen=True)
class UniversalityRow:
    k: int
    haar: float
    cdp: float
    relative_gap: float
    tolerance: float
    passed: bool


def cdp_haar_moments(n: int = 1024, masks: int = 4, sigma: float = 0.25, trials: int = 400,
                     seed: int = 0, orders=(1, 2, 3)) -> list:
    """Pooled CDP vs Haar moments of y; the tolerance is an artifact calibration
    (relative gap 0.02), not a proven bound."""
    delta = float(masks)
    size = n * masks * trials
    cdp = pooled_sample(SimConfig(n, delta, sigma, "cdp", seed, masks), size)
    haar = pooled_sample(SimConfig(n, delta, sigma, "haar", seed + 1), size)
    rows = []
    for k in orders:
        h, c = float(np.mean(haar ** k)), float(np.mean(cdp ** k))
        gap = abs(c - h) / abs(h)
        rows.append(UniversalityRow(int(k), h, c, gap, CDP_MOMENT_TOL, gap <= CDP_MOMENT_TOL))
    return rows


@dataclass(frozen=True)
class ConcentrationReport:
    m: int
    sigma: float
    xi1_empirical: float
    xi1_population: float
    xi2_sup_gap: float
    q_grid: np.ndarray
    xi1_tolerance: float = XI1_GAP_TOL
    xi2_tolerance: float = XI2_GAP_TOL

    @property
    def xi1_gap(self) -> float:
        return abs(self.xi1_empirical - self.xi1_population)

    @property
    def passed(self) -> bool:
        return self.xi1_gap <= self.xi1_tolerance and self.xi2_sup_gap <= self.xi2_tolerance


def concentration_check(m: int = 100_000, sigma: float = 0.3, seed: int = 0,
                        q_grid=None) -> ConcentrationReport:
    """Empirical vs population Xi1 and sup-gap of Xi2 over a grid of q <= 0.9."""
    from .variational import solve_xi1, solve_xi2

    if not sigma > 0:
        raise ParameterError("the concentration check needs sigma > 0")
    if q_grid is None:
        q_grid = np.linspace(0.0, 0.9, 20)
    q_grid = np.asarray(q_grid, dtype=float)
    out = simulate(SimConfig(n=m, delta=1.0, sigma=sigma, ensemble="haar", seed=seed))
    emp, pop = out.measure(), YMeasure.population(sigma)
    e1, p1 = solve_xi1(emp), solve_xi1(pop)
    gaps = []
    e_start, p_start = np.array([e1.lam, 0.0]), np.array([p1.lam, 0.0])
    for q in q_grid:
        e2 = solve_xi2(float(q), emp, e_start)
        p2 = solve_xi2(float(q), pop, p_start)
        e_start, p_start = e2.argmax, p2.argmax
        gaps.append(abs(e2.value - p2.value))
    return ConcentrationReport(m, float(sigma), e1.value, p1.value, float(max(gaps)), q_grid)
