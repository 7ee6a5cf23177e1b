"""The free energy F(q; delta, Delta, sigma) and its weak-recovery verdict.

Every variant is written as

    F(q) = G(q) + (1 - 1/delta) ln(1 - q^2) + Delta ln(1 - q^2/2)

with a delta-independent overlap part G:

* haar:       G = Xi2(q) - Xi2(0)          (Xi2(0) = 2 Xi1)
* zero-noise: G = Xi2(q; 0) - 2
* gaussian:   G = -ln[(1 - q^2) F_Gauss(q)]

G is computed once per (measure, grid) and cached, so verdicts and
threshold scans over delta cost almost nothing after the first curve.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import interpolate, special

from .core_math import bessel_ratio, bessel_ratio_over_x, gauss_laguerre, legendre_nodes, log_bessel_i0
from .errors import NumericalError, ParameterError, ScanError
from .tilted import texp_mean_var, twis_log_z
from .variational import box_radius, solve_xi1, solve_xi2, xi2_curvature_at_zero
from .y_model import YMeasure, log_y_density

HOLDS = "condition-holds"
FAILS = "condition-fails"
# G(q) >= -C - TAIL_SLOPE ln(1 - q) near q = 1
TAIL_SLOPE = {"haar": 0.5, "zero-noise": 0.5, "gaussian": 0.0}
# the q <-> 1 bound is calibrated on grid points beyond this overlap
TAIL_CALIBRATION_FROM = 0.5


# ---------------------------------------------------------------------------
# parameters and grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelParams:
    """Noise level sigma (0 selects the zero-noise branch), sampling ratio
    delta = m/n and side-information rate Delta."""

    sigma: float
    delta: float
    Delta: float = 0.0

    def __post_init__(self) -> None:
        for name in ("sigma", "delta", "Delta"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ParameterError(f"{name} must be a finite number, got {v!r}")
        if self.delta <= 0:
            raise ParameterError(f"delta must be positive, got {self.delta}")
        if self.Delta < 0:
            raise ParameterError(f"Delta must be non-negative, got {self.Delta}")
        if self.sigma < 0:
            raise ParameterError(f"sigma must be non-negative, got {self.sigma}")


@dataclass(frozen=True)
class GridSpec:
    """Chebyshev grid of ``n`` overlaps on [0, q_max], dense at both ends."""

    n: int = 200
    q_max: float = 0.99

    def __post_init__(self) -> None:
        if self.n < 3:
            raise ParameterError("grid needs at least 3 points")
        if not (0.0 < self.q_max < 1.0):
            raise ParameterError(f"q_max must lie in (0, 1), got {self.q_max}")

    def points(self) -> np.ndarray:
        return chebyshev_grid(self.n, self.q_max)


def chebyshev_grid(n: int, q_max: float) -> np.ndarray:
    j = np.arange(n)
    q = 0.5 * q_max * (1.0 - np.cos(np.pi * j / (n - 1)))
    q[0], q[-1] = 0.0, q_max
    return q


def log_volume_terms(q, delta: float, Delta: float):
    """(1 - 1/delta) ln(1 - q^2) + Delta ln(1 - q^2/2)."""
    q = np.asarray(q, dtype=float)
    return (1.0 - 1.0 / delta) * np.log1p(-q * q) + Delta * np.log1p(-0.5 * q * q)


def log_volume_curvature(delta: float, Delta: float) -> float:
    """Second q-derivative of :func:`log_volume_terms` at q = 0."""
    return -2.0 * (1.0 - 1.0 / delta) - Delta


def _check_q(q: float) -> None:
    if not (math.isfinite(q) and 0.0 <= q < 1.0):
        raise ParameterError(f"overlap must lie in [0, 1), got {q!r}")


@lru_cache(maxsize=32)
def population_measure(sigma: float) -> YMeasure:
    """Shared population measure, so caches keyed on the measure are reused."""
    return YMeasure.population(sigma)


# ---------------------------------------------------------------------------
# overlap part G
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OverlapCurve:
    """delta-independent part G(q) of F on a grid, with its curvature at 0."""

    variant: str
    sigma: float
    grid: np.ndarray
    g: np.ndarray
    curvature_at_zero: float
    xi1: float = float("nan")
    xi2: np.ndarray | None = None
    lambda2: np.ndarray | None = None
    phi: np.ndarray | None = None
    extra: dict = field(default_factory=dict)


def _haar_overlap_curve(measure: YMeasure, grid: np.ndarray) -> OverlapCurve:
    xi1 = solve_xi1(measure)
    radius = box_radius(float(grid[-1]), measure)
    xi2, lam2, phi = np.empty_like(grid), np.empty_like(grid), np.empty_like(grid)
    start = np.array([xi1.lam, 0.0])
    sol0 = None
    for i, q in enumerate(grid):
        try:
            sol = solve_xi2(float(q), measure, start, radius=radius)
        except NumericalError as exc:
            raise type(exc)(f"at q={q}: {exc}") from exc
        if i == 0:
            sol0 = sol
        xi2[i], lam2[i], phi[i] = sol.value, sol.lam, sol.phi
        start = sol.argmax
    gap = abs(sol0.value - 2.0 * xi1.value)
    if gap > 1e-8:
        raise NumericalError(f"Xi2(0) and 2 Xi1 disagree by {gap:.3e}")
    # referencing Xi2(0) rather than 2 Xi1 cancels the shared quadrature bias
    g = xi2 - xi2[0]
    curv = xi2_curvature_at_zero(measure, xi1)
    return OverlapCurve("haar", measure.sigma, grid, g, curv, xi1.value, xi2, lam2, phi,
                        {"xi2_zero_gap": gap})


@lru_cache(maxsize=64)
def _cached_overlap_curve(variant: str, measure: YMeasure | None, sigma: float,
                          n: int, q_max: float) -> OverlapCurve:
    grid = chebyshev_grid(n, q_max)
    if variant == "haar":
        return _haar_overlap_curve(measure, grid)
    if variant == "zero-noise":
        return _zero_noise_overlap_curve(grid)
    if variant == "gaussian":
        return _gaussian_overlap_curve(sigma, grid)
    raise ParameterError(f"unknown variant {variant!r}")


def overlap_curve(sigma: float, grid: GridSpec = GridSpec(), measure: YMeasure | None = None,
                  gaussian: bool = False) -> OverlapCurve:
    """G(q) on ``grid`` for the requested variant (cached)."""
    if gaussian:
        if measure is not None:
            raise ParameterError("the Gaussian baseline is defined for the population law only")
        if sigma <= 0:
            raise ParameterError("the Gaussian baseline needs sigma > 0")
        return _cached_overlap_curve("gaussian", None, float(sigma), grid.n, grid.q_max)
    if measure is None:
        if sigma == 0:
            return _cached_overlap_curve("zero-noise", None, 0.0, grid.n, grid.q_max)
        measure = population_measure(float(sigma))
    elif measure.sigma != sigma:
        raise ParameterError("measure noise level differs from sigma")
    return _cached_overlap_curve("haar", measure, float(sigma), grid.n, grid.q_max)


# ---------------------------------------------------------------------------
# free energy and verdict
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FreeEnergyCurve:
    """F on a grid together with the weak-recovery verdict.

    ``verdict`` is HOLDS iff ``min_interior > 0`` and ``curvature_at_zero > 0``.
    ``tail_certified`` reports whether the q -> 1 divergence bound also
    certifies F > 0 on (q_max, 1).
    """

    grid: np.ndarray
    values: np.ndarray
    curvature_at_zero: float
    min_interior: float
    verdict: str
    reason: str = ""
    tail_certified: bool = False
    params: ModelParams | None = None
    variant: str = "haar"
    overlap: OverlapCurve | None = field(default=None, repr=False)

    @property
    def holds(self) -> bool:
        return self.verdict == HOLDS

    @classmethod
    def from_values(cls, grid, values, curvature_at_zero: float, **kw) -> "FreeEnergyCurve":
        """Assemble a curve (and its verdict) from precomputed values."""
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        if grid.ndim != 1 or grid.shape != values.shape or grid.size < 2:
            raise ParameterError("grid and values must be matching 1-d arrays")
        if np.any(np.diff(grid) <= 0) or grid[0] < 0 or grid[-1] >= 1:
            raise ParameterError("grid must be strictly increasing inside [0, 1)")
        min_int = float(np.min(values[1:]))
        reasons = []
        if not curvature_at_zero > 0:
            reasons.append(f"curvature at zero {curvature_at_zero:.6g} <= 0")
        if not min_int > 0:
            q_bad = float(grid[1:][np.argmin(values[1:])])
            reasons.append(f"F = {min_int:.6g} <= 0 at q = {q_bad:.6g}")
        verdict = HOLDS if not reasons else FAILS
        return cls(grid, values, float(curvature_at_zero), min_int, verdict, "; ".join(reasons), **kw)

    def to_csv_text(self) -> str:
        oc = self.overlap
        fh = io.StringIO()
        w = csv.writer(fh, lineterminator="\n")
        if self.variant == "gaussian":
            w.writerow(["q", "F", "log_f_gauss"])
            for q, f, lf in zip(self.grid, self.values, oc.extra["log_f_gauss"]):
                w.writerow([_fmt(q), _fmt(f), _fmt(lf)])
        else:
            w.writerow(["q", "F", "xi2", "xi1", "lambda2", "phi"])
            for i, (q, f) in enumerate(zip(self.grid, self.values)):
                w.writerow([_fmt(q), _fmt(f), _fmt(oc.xi2[i]), _fmt(oc.xi1),
                            _fmt(oc.lambda2[i]), _fmt(oc.phi[i])])
        return fh.getvalue()

    def to_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv_text())


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _tail_certificate(oc: OverlapCurve, p: ModelParams) -> bool:
    """Certify F > 0 on (q_max, 1) from G >= -C - k ln(1 - q).

    C is calibrated on the grid points beyond TAIL_CALIBRATION_FROM.  The
    bound B(q) is certified positive if B(q_max) > 0 and a lower bound on
    B'(q) valid for all q >= q_max is positive.
    """
    k = TAIL_SLOPE[oc.variant]
    q, g = oc.grid, oc.g
    sel = q >= TAIL_CALIBRATION_FROM
    if not np.any(sel):
        return False
    c = float(np.max(-g[sel] - k * np.log1p(-q[sel])))
    qm = float(q[-1])
    b_end = -c - k * math.log1p(-qm) + float(log_volume_terms(qm, p.delta, p.Delta))
    c1 = 1.0 - 1.0 / p.delta
    if c1 > 0:
        if k <= c1:
            return False
        slope = (k - c1) / (1.0 - qm) - 2.0 * p.Delta
    else:
        slope = k / (1.0 - qm) - c1 * 2.0 * qm / (1.0 - qm * qm) - 2.0 * p.Delta
    return b_end > 0 and slope > 0


def curve_from_overlap(oc: OverlapCurve, p: ModelParams) -> FreeEnergyCurve:
    values = oc.g + log_volume_terms(oc.grid, p.delta, p.Delta)
    values[0] = 0.0 if abs(values[0]) <= 1e-8 else values[0]
    curv = oc.curvature_at_zero + log_volume_curvature(p.delta, p.Delta)
    return FreeEnergyCurve.from_values(oc.grid, values, curv, tail_certified=_tail_certificate(oc, p),
                                       params=p, variant=oc.variant, overlap=oc)


def check_condition(p: ModelParams, grid: GridSpec = GridSpec(), measure: YMeasure | None = None,
                    gaussian: bool = False) -> FreeEnergyCurve:
    """Evaluate F on the grid and decide F(q) > 0 on (0, q_max] with F''(0) > 0."""
    if grid.q_max < 0.99:
        raise ParameterError("verdict grids must reach q_max >= 0.99")
    return curve_from_overlap(overlap_curve(p.sigma, grid, measure, gaussian), p)


def free_energy(q: float, p: ModelParams, measure: YMeasure | None = None) -> float:
    """F(q; delta, Delta, sigma) at a single overlap (zero-noise branch when sigma = 0)."""
    _check_q(q)
    vol = float(log_volume_terms(q, p.delta, p.Delta))
    if p.sigma == 0 and measure is None:
        return zero_noise_xi2(q)[0] - 2.0 + vol
    if measure is None:
        measure = population_measure(float(p.sigma))
    xi1 = solve_xi1(measure)
    xi2 = solve_xi2(q, measure, np.array([xi1.lam, 0.0]))
    return xi2.value - 2.0 * xi1.value + vol


# ---------------------------------------------------------------------------
# threshold scan
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThresholdResult:
    """Largest delta (to ``tol``) at which the verdict holds."""

    delta_star: float
    curvature_root: float
    bracket: tuple[float, float]
    sigma: float
    Delta: float
    variant: str
    tail_certified: bool
    iterations: int

    def as_dict(self) -> dict:
        return {
            "delta_star": self.delta_star,
            "curvature_root": self.curvature_root,
            "bracket_lo": self.bracket[0],
            "bracket_hi": self.bracket[1],
            "sigma": self.sigma,
            "Delta": self.Delta,
            "variant": self.variant,
            "tail_certified": self.tail_certified,
            "iterations": self.iterations,
        }


SCAN_BRACKET = {"haar": (1.0, 4.0), "zero-noise": (1.0, 4.0), "gaussian": (0.5, 4.0)}


def _bisect(pred, lo: float, hi: float, tol: float) -> tuple[float, float, int]:
    """Shrink [lo, hi] with pred(lo) true and pred(hi) false to width tol."""
    it = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if pred(mid):
            lo = mid
        else:
            hi = mid
        it += 1
    return lo, hi, it


def threshold_scan(Delta: float, sigma: float, tol: float = 1e-3, gaussian: bool = False,
                   grid: GridSpec = GridSpec(), measure: YMeasure | None = None) -> ThresholdResult:
    """Bisect delta for the largest value at which the verdict holds.

    The curvature F''(0) is monotone in delta, so it is bisected first; the
    full verdict is then confirmed at the lower bracket end, and bisected
    on its own only if that confirmation fails.
    """
    if not tol >= 1e-4:
        raise ParameterError("tolerance must be at least 1e-4")
    oc = overlap_curve(sigma, grid, measure, gaussian)
    lo, hi = SCAN_BRACKET[oc.variant]

    def curvature_ok(d: float) -> bool:
        return oc.curvature_at_zero + log_volume_curvature(d, Delta) > 0

    def verdict_ok(d: float) -> bool:
        return curve_from_overlap(oc, ModelParams(sigma, d, Delta)).holds

    if not (curvature_ok(lo) and not curvature_ok(hi)):
        raise ScanError(f"no sign change of the curvature criterion in [{lo}, {hi}]")
    c_lo, c_hi, it = _bisect(curvature_ok, lo, hi, tol)
    if verdict_ok(c_lo):
        d_lo, d_hi = c_lo, c_hi
    else:
        if not verdict_ok(lo):
            raise ScanError(f"verdict fails at the lower bracket end delta = {lo}")
        d_lo, d_hi, extra = _bisect(verdict_ok, lo, c_lo, tol)
        it += extra
    cert = curve_from_overlap(oc, ModelParams(sigma, d_lo, Delta)).tail_certified
    return ThresholdResult(d_lo, 0.5 * (c_lo + c_hi), (d_lo, d_hi), float(sigma), float(Delta),
                           oc.variant, cert, it)


# ---------------------------------------------------------------------------
# zero-noise branch
# ---------------------------------------------------------------------------

def _zero_noise_rule(phi: float) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights for E g(E), E ~ Exp(1), resolving the 1/phi scale of ln I0(phi E)."""
    lag = gauss_laguerre(96)
    if phi <= 1.0:
        return lag.nodes, lag.weights
    c = 20.0 / phi
    x, w = legendre_nodes(np.array(0.0), np.array(c), 48)
    return (np.concatenate([x, c + lag.nodes]),
            np.concatenate([w * np.exp(-x), math.exp(-c) * lag.weights]))


def _zero_noise_terms(phi: float) -> tuple[float, float, float]:
    """(E ln I0(phi E), E E A(phi E), E E^2 A'(phi E)) with A = I0'/I0."""
    x, w = _zero_noise_rule(phi)
    z = phi * x
    a = bessel_ratio(z)
    da = 1.0 - bessel_ratio_over_x(z) - a * a
    return (float(np.dot(w, log_bessel_i0(z))), float(np.dot(w, x * a)),
            float(np.dot(w, x * x * da)))


def zero_noise_xi2(q: float) -> tuple[float, float]:
    """(Xi2(q; 0), phi2(q; 0)) from 2 + max_phi (q phi - E ln I0(phi E)).

    Newton on the concave objective; the stationarity condition is
    E E A(phi E) = q, whose left side increases from 0 to 1.
    """
    _check_q(q)
    if q == 0:
        return 2.0, 0.0
    phi = 2.0 * q / (1.0 - q)  # near both endpoints of the stationarity curve
    lo, hi = 0.0, math.inf
    for _ in range(200):
        _, m1, m2 = _zero_noise_terms(phi)
        g = q - m1
        if abs(g) <= 1e-13:
            break
        if g > 0:
            lo = phi
        else:
            hi = phi
        step = phi + g / m2
        # safeguard Newton with the running bracket
        if not (lo < step < hi):
            step = 0.5 * (lo + hi) if math.isfinite(hi) else 2.0 * max(phi, 1.0)
        phi = step
    else:
        raise NumericalError(f"zero-noise stationarity did not converge at q={q}")
    val = _zero_noise_terms(phi)[0]
    return 2.0 + q * phi - val, phi


def zero_noise_curvature() -> float:
    """Curvature of Xi2(q; 0) at 0: 1 / E[E^2 A'(0)] = 2 / E E^2 = 1."""
    return 1.0 / _zero_noise_terms(0.0)[2]


def _zero_noise_overlap_curve(grid: np.ndarray) -> OverlapCurve:
    vals = np.empty_like(grid)
    phis = np.empty_like(grid)
    for i, q in enumerate(grid):
        vals[i], phis[i] = zero_noise_xi2(float(q))
    return OverlapCurve("zero-noise", 0.0, grid, vals - 2.0, zero_noise_curvature(), 1.0,
                        vals, np.full_like(grid, np.nan), phis)


def zero_noise_f(q, delta: float, Delta: float) -> np.ndarray:
    """f(q) = Xi2(q; 0) + (1 - 1/delta) ln(1 - q^2) + Delta ln(1 - q^2/2)."""
    q = np.atleast_1d(np.asarray(q, dtype=float))
    xi = np.array([zero_noise_xi2(float(v))[0] for v in q])
    return xi + log_volume_terms(q, delta, Delta)


def zero_noise_f_increasing(delta: float, Delta: float, grid) -> bool:
    """True iff f is strictly increasing along ``grid`` (sorted, inside (0, 1))."""
    grid = np.sort(np.asarray(grid, dtype=float))
    if grid.size < 2 or grid[0] <= 0 or grid[-1] >= 1:
        raise ParameterError("grid must lie inside (0, 1) and have at least two points")
    ModelParams(0.0, delta, Delta)
    return bool(np.all(np.diff(zero_noise_f(grid, delta, Delta)) > 0))


# ---------------------------------------------------------------------------
# Gaussian baseline
# ---------------------------------------------------------------------------

def kibble_tilt(q: float) -> tuple[float, float]:
    """(lam, phi) with f_q(u, v) = e^{-(1-lam)(u+v)} I0(phi sqrt(uv)) / (1 - q^2).

    f_q is the joint density of (|G1|^2, |q G1 + sqrt(1-q^2) G2|^2).
    """
    s = 1.0 - q * q
    return 1.0 - 1.0 / s, 2.0 * q / s


def _gauss_y_rule(sigma: float, q: float) -> tuple[np.ndarray, np.ndarray]:
    """Rule for int g(y) dy where g decays like e^{-r y}, r = (1-q)/(1+q)."""
    lo, core_hi = -12.0 * sigma, 12.0 * sigma
    c = max(2.0, core_hi)
    ys, ws = [], []
    x, w = legendre_nodes(np.array(lo), np.array(core_hi), 64)
    ys.append(x)
    ws.append(w)
    if c > core_hi:
        x, w = legendre_nodes(np.array(core_hi), np.array(c), 48)
        ys.append(x)
        ws.append(w)
    r = (1.0 - q) / (1.0 + q)
    lag = gauss_laguerre(96)
    ys.append(c + lag.nodes / r)
    ws.append(lag.weights * np.exp(lag.nodes) / r)
    return np.concatenate(ys), np.concatenate(ws)


def log_f_gauss(q: float, sigma: float) -> float:
    """ln F_Gauss(q) = ln int N(y; q) / p_Y(y) dy with N(y; q) = Z_TWis(kibble_tilt(q), y) / (1 - q^2).

    N(y; q) is the inner expectation E phi_sigma(y - |G1|^2) phi_sigma(y - |G1'|^2)
    for the q-correlated pair, and p_Y the squared denominator's root.
    """
    _check_q(q)
    if not sigma > 0:
        raise ParameterError("the Gaussian baseline needs sigma > 0")
    if q == 0:
        return 0.0
    lam, phi = kibble_tilt(q)
    y, w = _gauss_y_rule(sigma, q)
    log_terms = twis_log_z(lam, phi, y, sigma) - math.log1p(-q * q) - log_y_density(y, sigma)
    return float(special.logsumexp(log_terms, b=w))


def gaussian_curvature_at_zero(sigma: float) -> float:
    """Second q-derivative at 0 of G = -ln[(1 - q^2) F_Gauss(q)].

    F_Gauss = 1 + q^2 E[(1 - E[U | Y])^2] + O(q^4) by the Laguerre expansion
    of the correlated pair's density, with U | Y ~ Texp(0, Y).
    """
    meas = population_measure(float(sigma))
    y, w = meas.atoms()
    mean, _ = texp_mean_var(0.0, y, sigma)
    return 2.0 - 2.0 * float(np.dot(w, (1.0 - mean) ** 2))


def gaussian_baseline_F(q: float, p: ModelParams) -> float:
    """Gaussian-ensemble free energy -ln F_Gauss - (1/delta) ln(1-q^2) + Delta ln(1-q^2/2)."""
    return -log_f_gauss(q, p.sigma) - math.log1p(-q * q) + float(log_volume_terms(q, p.delta, p.Delta))


def _gaussian_overlap_curve(sigma: float, grid: np.ndarray) -> OverlapCurve:
    lf = np.array([log_f_gauss(float(q), sigma) for q in grid])
    g = -lf - np.log1p(-grid * grid)
    return OverlapCurve("gaussian", sigma, grid, g, gaussian_curvature_at_zero(sigma),
                        extra={"log_f_gauss": lf})


# ---------------------------------------------------------------------------
# Laplace principle
# ---------------------------------------------------------------------------

LAPLACE_POINTS = 20001


def laplace_check(curve: FreeEnergyCurve, m: float, require_holds: bool = True) -> float:
    """(1/m) ln int_0^{q_max} e^{-m F(q)} dq with F interpolated monotonically.

    Beyond q_max the integrand is negligible on curves whose tail is
    certified (F grows without bound there).
    """
    if m < 100:
        raise ParameterError("Laplace scale m must be at least 100")
    if require_holds and not curve.holds:
        raise ParameterError("Laplace check needs a curve on which the condition holds")
    interp = interpolate.PchipInterpolator(curve.grid, curve.values)
    q = np.linspace(curve.grid[0], curve.grid[-1], LAPLACE_POINTS)
    f = interp(q)
    w = np.full(q.size, q[1] - q[0])
    w[0] *= 0.5
    w[-1] *= 0.5
    return float(special.logsumexp(-m * f, b=w)) / m
