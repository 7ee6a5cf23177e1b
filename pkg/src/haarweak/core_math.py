"""Special functions, quadrature rules and closed-form Gaussian integrals.

The modified Bessel function I0 appears inside exponentials throughout the
package, so every evaluator here has a log-scale or exponentially scaled
companion that never overflows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Union

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.laguerre import laggauss
from numpy.polynomial.legendre import leggauss
from scipy import integrate, special

from .errors import AccuracyError, DomainError, ParameterError

ArrayLike = Union[float, np.ndarray]

QUAD_KINDS = ("half-line-exponential", "full-line-gaussian", "bounded-interval", "tensor-2d")

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# switch point between the power series and the large-argument expansion
_BESSEL_SPLIT = 15.0
_SERIES_TERMS = 64
_ASYMPTOTIC_TERMS = 30


# ---------------------------------------------------------------------------
# Gaussian helpers
# ---------------------------------------------------------------------------

def normal_pdf(x: ArrayLike, sigma: float = 1.0) -> ArrayLike:
    """Density of N(0, sigma^2) at x."""
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * (x / sigma) ** 2 - LOG_SQRT_2PI) / sigma


def log_normal_pdf(x: ArrayLike, sigma: float = 1.0) -> ArrayLike:
    x = np.asarray(x, dtype=float)
    return -0.5 * (x / sigma) ** 2 - LOG_SQRT_2PI - math.log(sigma)


def normal_cdf(x: ArrayLike) -> ArrayLike:
    return special.ndtr(x)


def log_normal_cdf(x: ArrayLike) -> ArrayLike:
    """ln Phi(x), accurate deep in the left tail."""
    return special.log_ndtr(x)


def mills_ratio(x: ArrayLike) -> ArrayLike:
    """phi(x)/Phi(x), computed without forming the two factors separately."""
    x = np.asarray(x, dtype=float)
    return math.sqrt(2.0 / math.pi) / special.erfcx(-x / math.sqrt(2.0))


# ---------------------------------------------------------------------------
# Modified Bessel functions
# ---------------------------------------------------------------------------

def _check_finite(x: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(x)):
        raise DomainError(f"{name} requires finite input")


def _series_i0_i1(ax: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Power series for I0 and I1 at 0 <= ax <= 15."""
    z = 0.25 * ax * ax
    t0 = np.ones_like(ax)
    t1 = np.ones_like(ax)
    s0 = t0.copy()
    s1 = t1.copy()
    for k in range(1, _SERIES_TERMS):
        t0 = t0 * z / (k * k)
        t1 = t1 * z / (k * (k + 1))
        s0 += t0
        s1 += t1
    return s0, 0.5 * ax * s1


def _asymptotic_sums(ax: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sums S0, S1 with I_nu(x) = e^x / sqrt(2 pi x) * S_nu for large x."""
    inv = 1.0 / (8.0 * ax)
    t0 = np.ones_like(ax)
    t1 = np.ones_like(ax)
    s0 = t0.copy()
    s1 = t1.copy()
    for k in range(1, _ASYMPTOTIC_TERMS):
        odd = (2 * k - 1) ** 2
        t0 = t0 * odd * inv / k
        t1 = t1 * (odd - 4.0) * inv / k
        s0 += t0
        s1 += t1
    return s0, s1


def log_bessel_i0(x: ArrayLike) -> ArrayLike:
    """ln I0(x) for any finite x; linear growth for large |x| instead of overflow."""
    arr = np.asarray(x, dtype=float)
    _check_finite(arr, "log_bessel_i0")
    ax = np.abs(np.atleast_1d(arr))
    out = np.empty_like(ax)
    small = ax <= _BESSEL_SPLIT
    if np.any(small):
        out[small] = np.log(_series_i0_i1(ax[small])[0])
    if np.any(~small):
        big = ax[~small]
        s0, _ = _asymptotic_sums(big)
        out[~small] = big + np.log(s0) - 0.5 * np.log(2.0 * math.pi * big)
    return out.reshape(arr.shape) if arr.ndim else float(out[0])


def bessel_i0_scaled(x: ArrayLike) -> ArrayLike:
    """exp(-|x|) I0(x), bounded in (0, 1]."""
    arr = np.asarray(x, dtype=float)
    _check_finite(arr, "bessel_i0_scaled")
    ax = np.abs(np.atleast_1d(arr))
    out = np.empty_like(ax)
    small = ax <= _BESSEL_SPLIT
    if np.any(small):
        out[small] = _series_i0_i1(ax[small])[0] * np.exp(-ax[small])
    if np.any(~small):
        big = ax[~small]
        out[~small] = _asymptotic_sums(big)[0] / np.sqrt(2.0 * math.pi * big)
    return out.reshape(arr.shape) if arr.ndim else float(out[0])


def bessel_i0(x: ArrayLike) -> ArrayLike:
    """I0(x) = (1/2pi) int exp(x cos t) dt; overflows only where I0 itself does."""
    arr = np.asarray(x, dtype=float)
    _check_finite(arr, "bessel_i0")
    ax = np.abs(np.atleast_1d(arr))
    out = np.empty_like(ax)
    small = ax <= _BESSEL_SPLIT
    if np.any(small):
        out[small] = _series_i0_i1(ax[small])[0]
    if np.any(~small):
        big = ax[~small]
        with np.errstate(over="ignore"):
            out[~small] = np.exp(big) * _asymptotic_sums(big)[0] / np.sqrt(2.0 * math.pi * big)
    return out.reshape(arr.shape) if arr.ndim else float(out[0])


def bessel_ratio(x: ArrayLike) -> ArrayLike:
    """I0'(x)/I0(x) = I1(x)/I0(x); odd, increasing, tends to sign(x)."""
    arr = np.asarray(x, dtype=float)
    _check_finite(arr, "bessel_ratio")
    flat = np.atleast_1d(arr)
    ax = np.abs(flat)
    out = np.empty_like(ax)
    small = ax <= _BESSEL_SPLIT
    if np.any(small):
        i0, i1 = _series_i0_i1(ax[small])
        out[small] = i1 / i0
    if np.any(~small):
        s0, s1 = _asymptotic_sums(ax[~small])
        out[~small] = s1 / s0
    out = np.copysign(out, flat)
    return out.reshape(arr.shape) if arr.ndim else float(out[0])


def bessel_ratio_over_x(x: ArrayLike) -> ArrayLike:
    """I1(x)/(x I0(x)), even in x, equal to 1/2 at the origin."""
    arr = np.asarray(x, dtype=float)
    ax = np.abs(np.atleast_1d(arr))
    out = np.full_like(ax, 0.5)
    tiny = ax < 1e-6
    # series 1/2 - x^2/16 near zero
    out[tiny] = 0.5 - ax[tiny] ** 2 / 16.0
    rest = ~tiny
    if np.any(rest):
        out[rest] = bessel_ratio(ax[rest]) / ax[rest]
    return out.reshape(arr.shape) if arr.ndim else float(out[0])


# ---------------------------------------------------------------------------
# Quadrature rules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and positive weights for one reference measure.

    ``kind`` names the reference weight:

    * ``half-line-exponential``: e^{-u} du on [0, inf)
    * ``full-line-gaussian``: standard normal density on R
    * ``bounded-interval``: Lebesgue measure on ``interval``
    * ``tensor-2d``: product of two 1-d rules; ``nodes`` has shape (N, 2)
    """

    nodes: np.ndarray
    weights: np.ndarray
    kind: str
    interval: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.kind not in QUAD_KINDS:
            raise ParameterError(f"unknown quadrature kind {self.kind!r}")
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or not np.all(w > 0):
            raise ParameterError("quadrature weights must be a 1-d array of positive reals")
        x = np.asarray(self.nodes, dtype=float)
        if self.kind == "tensor-2d":
            if x.ndim != 2 or x.shape != (w.size, 2):
                raise ParameterError("tensor-2d nodes must have shape (N, 2)")
        elif x.shape != w.shape or np.any(np.diff(x) <= 0):
            raise ParameterError("1-d nodes must be strictly increasing and match weights")

    @property
    def reference_mass(self) -> float:
        if self.kind == "bounded-interval":
            a, b = self.interval
            return b - a
        return 1.0

    def integrate(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        """Sum of w_i f(x_i); for tensor rules f receives the two coordinates."""
        if self.kind == "tensor-2d":
            vals = f(self.nodes[:, 0], self.nodes[:, 1])
        else:
            vals = f(self.nodes)
        return float(np.dot(self.weights, vals))


@lru_cache(maxsize=None)
def _laguerre(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = laggauss(n)
    return x, w


@lru_cache(maxsize=None)
def _legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    return leggauss(n)


@lru_cache(maxsize=None)
def _hermite_normal(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = hermegauss(n)
    return x, w / math.sqrt(2.0 * math.pi)


def gauss_laguerre(n: int = 96) -> QuadratureRule:
    """Rule for int_0^inf f(u) e^{-u} du."""
    x, w = _laguerre(n)
    return QuadratureRule(x.copy(), w.copy(), "half-line-exponential")


def gauss_hermite_normal(n: int = 40) -> QuadratureRule:
    """Rule for E f(Z), Z standard normal."""
    x, w = _hermite_normal(n)
    return QuadratureRule(x.copy(), w.copy(), "full-line-gaussian")


def gauss_legendre(a: float, b: float, n: int = 64) -> QuadratureRule:
    """Rule for int_a^b f(x) dx."""
    if not b > a:
        raise ParameterError("gauss_legendre needs b > a")
    x, w = _legendre(n)
    half = 0.5 * (b - a)
    return QuadratureRule(a + half * (x + 1.0), half * w, "bounded-interval", (float(a), float(b)))


def legendre_nodes(lo: np.ndarray, hi: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Broadcast Gauss-Legendre nodes onto many intervals at once.

    Returns arrays of shape ``lo.shape + (n,)``.
    """
    x, w = _legendre(n)
    lo = np.asarray(lo, dtype=float)[..., None]
    hi = np.asarray(hi, dtype=float)[..., None]
    half = 0.5 * (hi - lo)
    return lo + half * (x + 1.0), half * w


def tensor_rule(first: QuadratureRule, second: QuadratureRule) -> QuadratureRule:
    if "tensor-2d" in (first.kind, second.kind):
        raise ParameterError("tensor_rule combines two 1-d rules")
    a, b = np.meshgrid(first.nodes, second.nodes, indexing="ij")
    w = np.outer(first.weights, second.weights).ravel()
    return QuadratureRule(np.column_stack([a.ravel(), b.ravel()]), w, "tensor-2d")


def half_line_integral(f: Callable[[np.ndarray], np.ndarray], n: int = 96) -> float:
    """int_0^inf f(u) du by Gauss-Laguerre, falling back to adaptive quadrature.

    The fallback triggers when the last decile of nodes carries more than
    1e-8 of the total, i.e. the integrand's mass sits beyond the node range.
    """
    x, w = _laguerre(n)
    with np.errstate(over="ignore", invalid="ignore"):
        contrib = w * np.exp(x) * f(x)
    total = float(np.sum(contrib))
    tail = float(np.sum(np.abs(contrib[-max(1, n // 10):])))
    if np.all(np.isfinite(contrib)) and total != 0.0 and tail <= 1e-8 * abs(total):
        return total
    value, err = integrate.quad(lambda u: float(f(np.array([u]))[0]), 0.0, np.inf,
                                limit=500, epsabs=0.0, epsrel=1e-12)
    if not np.isfinite(value) or err > 1e-6 * max(abs(value), 1e-300):
        raise AccuracyError(f"half-line quadrature did not converge (estimate {value}, error {err})")
    return float(value)


# ---------------------------------------------------------------------------
# Bivariate Gaussian integral
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BivariateGaussSpec:
    """Arguments (a, b) and correlation rho of J(a, b)."""

    a: float
    b: float
    rho: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.a) and np.isfinite(self.b) and np.isfinite(self.rho)):
            raise ParameterError("BivariateGaussSpec fields must be finite")
        if abs(self.rho) > 1.0:
            raise ParameterError("correlation must lie in [-1, 1]")


def bivariate_gauss_integral(spec: BivariateGaussSpec) -> float:
    """J(a,b) = E phi(a - Z1) phi(b - Z2) for unit normals with Cov(Z1, Z2) = rho.

    Closed form: exp(-(a^2 + b^2 - rho a b) / (4 c)) / (4 pi sqrt(c)), c = 1 - rho^2/4.
    """
    if abs(spec.rho) >= 1.0:
        raise ParameterError("degenerate correlation |rho| = 1 is not supported")
    c = 1.0 - 0.25 * spec.rho ** 2
    expo = -(spec.a ** 2 + spec.b ** 2 - spec.rho * spec.a * spec.b) / (4.0 * c)
    return math.exp(expo) / (4.0 * math.pi * math.sqrt(c))
