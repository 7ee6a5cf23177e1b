"""Tilted exponential and tilted Wishart families.

Tilted exponential Texp(lam, y): density on [0, inf) proportional to
``exp(-(1 - lam) u) phi_sigma(u - y)``, i.e. a normal law with mean
``y + sigma^2 (lam - 1)`` truncated to the half-line.

Tilted Wishart TWis(lam, phi, y): law of (s, s', theta) with density
proportional to ``exp(-(1 - lam)(s + s') + phi sqrt(s s') cos theta)
phi_sigma(s - y) phi_sigma(s' - y)``, identified with the rank-one 2x2
Hermitian matrix S = [[s, sqrt(s s') e^{i theta}], [., s']].

Integrating theta out leaves I0(phi sqrt(s s')).  The remaining 2-d integral
is computed in the coordinates a = (s + s')/2, d = a sin(t), in which the
Gaussian kernels separate and the square-root singularity at |d| = a
disappears.  Both coordinates get Gauss-Legendre windows sized from the
local Gaussian scale, so the rule follows the mass wherever the tilts move it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.laguerre import laggauss
from scipy import special

from .core_math import legendre_nodes, log_normal_cdf, mills_ratio
from .errors import ParameterError

N_A = 48       # outer nodes in a = (s + s')/2
N_T = 32       # inner nodes in the angle t
WINDOW = 12.0  # half-width of each window in local standard deviations

_LOG_SQRT_PI = 0.5 * math.log(math.pi)


# ---------------------------------------------------------------------------
# parameter bundles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TiltedExpParams:
    lam: float
    y: float
    sigma: float

    def __post_init__(self) -> None:
        if not all(np.isfinite([self.lam, self.y, self.sigma])):
            raise ParameterError("tilted exponential parameters must be finite")
        if self.sigma <= 0:
            raise ParameterError("noise level must be positive")


@dataclass(frozen=True)
class TiltedWishartParams:
    lam: float
    phi: float
    y: float
    sigma: float

    def __post_init__(self) -> None:
        if not all(np.isfinite([self.lam, self.phi, self.y, self.sigma])):
            raise ParameterError("tilted Wishart parameters must be finite")
        if self.sigma <= 0:
            raise ParameterError("noise level must be positive")


@dataclass(frozen=True)
class WishartMomentBlock:
    """Mean (2x2 Hermitian) and covariance of vec(S) = (S11, S22, Re S12, Im S12)."""

    mean: np.ndarray
    cov: np.ndarray


# ---------------------------------------------------------------------------
# tilted exponential: vectorized kernels
# ---------------------------------------------------------------------------

def texp_log_z(lam, y, sigma: float):
    """ln int_0^inf e^{-(1-lam)u} phi_sigma(u - y) du (closed form, vectorized)."""
    g = np.asarray(lam, dtype=float) - 1.0
    y = np.asarray(y, dtype=float)
    return g * y + 0.5 * (sigma * g) ** 2 + log_normal_cdf(y / sigma + sigma * g)


def _texp_location(lam, y, sigma: float):
    """Standardized location x = mu/sigma of the untruncated normal."""
    return (np.asarray(y, dtype=float) + sigma ** 2 * (np.asarray(lam, dtype=float) - 1.0)) / sigma


# below this standardized location the truncated normal is nearly exponential
# and moments are taken by Laguerre quadrature instead of recursions
_DEEP_LEFT = -2.0
_LAG_X, _LAG_W = laggauss(60)


def _std_moments(x: np.ndarray, kmax: int) -> np.ndarray:
    """E t^k, k = 0..kmax, for t with density prop. to exp(-(t - x)^2/2) on t >= 0."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty((kmax + 1,) + x.shape)
    out[0] = 1.0
    deep = x < _DEEP_LEFT
    reg = ~deep
    if np.any(reg):
        xr = x[reg]
        r = mills_ratio(xr)
        prev2 = np.ones_like(xr)
        prev1 = xr + r
        out[1][reg] = prev1
        for k in range(2, kmax + 1):
            cur = xr * prev1 + (k - 1) * prev2
            out[k][reg] = cur
            prev2, prev1 = prev1, cur
    if np.any(deep):
        z = -x[deep]
        t = _LAG_X[:, None] / z[None, :]
        w = _LAG_W[:, None] * np.exp(-0.5 * t * t)
        norm = w.sum(axis=0)
        for k in range(1, kmax + 1):
            out[k][deep] = (w * t ** k).sum(axis=0) / norm
    return out


def _std_variance(x: np.ndarray) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty_like(x)
    deep = x < _DEEP_LEFT
    if np.any(~deep):
        xr = x[~deep]
        r = mills_ratio(xr)
        out[~deep] = 1.0 - r * (xr + r)
    if np.any(deep):
        z = -x[deep]
        t = _LAG_X[:, None] / z[None, :]
        w = _LAG_W[:, None] * np.exp(-0.5 * t * t)
        w = w / w.sum(axis=0)
        mean = (w * t).sum(axis=0)
        out[deep] = (w * (t - mean) ** 2).sum(axis=0)
    return out


def texp_mean_var(lam, y, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of Texp(lam, y), vectorized over y (and lam)."""
    x = _texp_location(lam, y, sigma)
    shape = np.shape(x)
    mean = sigma * _std_moments(x, 1)[1]
    var = sigma ** 2 * _std_variance(x)
    return mean.reshape(shape), var.reshape(shape)


def texp_log_pdf(u, lam: float, y: float, sigma: float):
    """Log density of Texp(lam, y) at u (-inf for u < 0)."""
    u = np.asarray(u, dtype=float)
    val = ((lam - 1.0) * u - 0.5 * ((u - y) / sigma) ** 2 - 0.5 * math.log(2 * math.pi)
           - math.log(sigma) - texp_log_z(lam, y, sigma))
    return np.where(u >= 0, val, -np.inf)


# ---------------------------------------------------------------------------
# tilted exponential: public operations
# ---------------------------------------------------------------------------

def log_z_texp(p: TiltedExpParams) -> float:
    """ln Z_Texp(lam, y) in closed form."""
    return float(texp_log_z(p.lam, p.y, p.sigma))


def texp_moment(p: TiltedExpParams, k: int) -> float:
    """E T^k for T ~ Texp(lam, y), 0 <= k <= 6."""
    if not 0 <= k <= 6:
        raise ParameterError("moment order must be in 0..6")
    if k == 0:
        return 1.0
    x = _texp_location(p.lam, p.y, p.sigma)
    return float(p.sigma ** k * _std_moments(np.array([x]), k)[k][0])


def texp_variance(p: TiltedExpParams) -> float:
    return float(texp_mean_var(p.lam, p.y, p.sigma)[1])


def sample_texp_batch(mu_over_sigma: np.ndarray, sigma: float, rng: np.random.Generator,
                      size: tuple[int, ...] | None = None) -> np.ndarray:
    """Exact draws of sigma * t, t ~ N(x, 1) truncated to t >= 0.

    Locations x >= 0 use rejection from N(x, 1) (acceptance Phi(x) >= 1/2);
    the rest invert P(t >= v) = Phi(x - v) / Phi(x) in log space, which
    stays accurate deep in the left tail.
    """
    x = np.asarray(mu_over_sigma, dtype=float)
    shape = size if size is not None else x.shape
    x = np.broadcast_to(x, shape)
    t = np.empty(shape)
    pos = x >= 0
    if np.any(pos):
        xp = x[pos]
        tp = xp + rng.standard_normal(xp.shape)
        bad = tp < 0
        while np.any(bad):
            tp[bad] = xp[bad] + rng.standard_normal(int(bad.sum()))
            bad = tp < 0
        t[pos] = tp
    neg = ~pos
    if np.any(neg):
        xn = x[neg]
        u = rng.random(xn.shape)
        # survival Phi(x - v)/Phi(x) = u  =>  v = x - ndtri_exp(ln u + ln Phi(x))
        t[neg] = np.maximum(xn - special.ndtri_exp(np.log(u) + log_normal_cdf(xn)), 0.0)
    return sigma * t


def sample_texp_rows(mu_over_sigma: np.ndarray, sigma: float, rng: np.random.Generator,
                     rows: int) -> np.ndarray:
    """(rows, len(x)) draws, column j from Texp with standardized location x_j.

    Same law as :func:`sample_texp_batch`, organized by columns so the
    rejection path runs on whole blocks.
    """
    x = np.asarray(mu_over_sigma, dtype=float)
    t = x + rng.standard_normal((rows, x.size))
    neg = np.flatnonzero(x < 0)
    if neg.size:
        t[:, neg] = sample_texp_batch(x[neg], 1.0, rng, (rows, neg.size))
    bad = np.nonzero(t < 0)
    while bad[0].size:
        t[bad] = x[bad[1]] + rng.standard_normal(bad[0].size)
        bad_sub = t[bad] < 0
        bad = (bad[0][bad_sub], bad[1][bad_sub])
    return sigma * t


def sample_texp(p: TiltedExpParams, seed: int, count: int) -> np.ndarray:
    """count i.i.d. draws from Texp(lam, y); deterministic in seed."""
    if count < 1:
        raise ParameterError("count must be >= 1")
    rng = np.random.default_rng(seed)
    x = _texp_location(p.lam, p.y, p.sigma)
    return sample_texp_batch(np.full(count, x), p.sigma, rng)


# ---------------------------------------------------------------------------
# tilted Wishart: quadrature kernel
# ---------------------------------------------------------------------------

@dataclass
class _TwisNodes:
    """Normalized node weights and node coordinates for a batch of y values.

    Arrays have shape (len(y), N_A, N_T); ``log_z`` has shape (len(y),).
    """

    log_z: np.ndarray
    prob: np.ndarray
    a: np.ndarray
    r: np.ndarray
    d2: np.ndarray
    cos_mean: np.ndarray   # E[cos theta | s, s']
    cos2_mean: np.ndarray  # E[cos^2 theta | s, s']


def _a_window(mu: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Window for a truncated normal N(mu, tau^2) on [0, inf)."""
    hi = np.maximum(mu, 0.0) + WINDOW * tau
    lo = np.maximum(mu - WINDOW * tau, 0.0)
    left = mu < 0
    if np.any(left):
        # decay rate |mu|/tau^2 at the boundary sets the scale
        hi = np.where(left, np.minimum(hi, 4.0 * WINDOW * tau ** 2 / np.maximum(-mu, 1e-300)), hi)
    return lo, hi


def _twis_log_weights(lam: float, phi: float, y: np.ndarray, sigma: float):
    """Node coordinates and log node weights of the collapsed TWis integral."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    aphi = abs(phi)
    kappa = 2.0 * (lam - 1.0) + aphi
    tau = sigma / math.sqrt(2.0)
    mu = y + 0.5 * kappa * sigma ** 2
    lo, hi = _a_window(mu, tau)
    a, wa = legendre_nodes(lo, hi, N_A)                   # (Y, N_A)

    # angle window: Gaussian in t with precision |phi| a + 2 a^2 / sigma^2
    prec = aphi * a + 2.0 * a * a / sigma ** 2
    t_hi = np.minimum(0.5 * math.pi, WINDOW / np.sqrt(np.maximum(prec, 1e-300)))
    t, wt = legendre_nodes(np.zeros_like(t_hi), t_hi, N_T)  # (Y, N_A, N_T)
    ct, st = np.cos(t), np.sin(t)
    a3 = a[..., None]
    r = a3 * ct
    x = aphi * r
    i0e = special.i0e(x)
    # log of the inner integrand, inner Gaussian e^{-d^2/sigma^2}/(sqrt(pi) sigma), d = a sin t
    log_inner = (np.log(2.0 * wt) + np.log(np.maximum(r, 1e-300)) + np.log(i0e)
                 - aphi * a3 * (1.0 - ct) - (a3 * st / sigma) ** 2
                 - _LOG_SQRT_PI - math.log(sigma))
    log_outer = (np.log(wa) + kappa * a - ((a - y[:, None]) / sigma) ** 2
                 - _LOG_SQRT_PI - math.log(sigma))
    return a3, r, x, i0e, st, log_inner + log_outer[..., None]


def _log_sum(log_all: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    shift = np.max(log_all, axis=(1, 2), keepdims=True)
    w = np.exp(log_all - shift)
    tot = w.sum(axis=(1, 2), keepdims=True)
    return (np.log(tot) + shift)[:, 0, 0], w, tot


def _twis_nodes(lam: float, phi: float, y: np.ndarray, sigma: float) -> _TwisNodes:
    a3, r, x, i0e, st, log_all = _twis_log_weights(lam, phi, y, sigma)
    log_z, w, tot = _log_sum(log_all)
    prob = w / tot
    ratio = np.where(x > 0, special.i1e(x) / i0e, 0.0)
    safe = np.where(x > 1e-6, x, 1.0)
    ratio_over_x = np.where(x > 1e-6, ratio / safe, 0.5 - x * x / 16.0)
    sign = 1.0 if phi >= 0 else -1.0
    return _TwisNodes(
        log_z=log_z,
        prob=prob,
        a=np.broadcast_to(a3, prob.shape),
        r=r,
        d2=(a3 * st) ** 2,
        cos_mean=sign * ratio,
        cos2_mean=1.0 - ratio_over_x,
    )


def twis_log_z(lam: float, phi: float, y, sigma: float) -> np.ndarray:
    """ln Z_TWis(lam, phi, y) vectorized over y."""
    return _log_sum(_twis_log_weights(lam, phi, y, sigma)[-1])[0]


def twis_potential_terms(lam: float, phi: float, y: np.ndarray, sigma: float):
    """ln Z and its (lam, phi) gradient and Hessian for each y.

    Returns (log_z, grad, hess) with shapes (Y,), (Y, 2), (Y, 2, 2); the
    gradient is (E(s + s'), E sqrt(s s') cos theta) and the Hessian is the
    covariance of that pair.
    """
    nd = _twis_nodes(lam, phi, y, sigma)
    p = nd.prob
    two_a = 2.0 * nd.a
    rc = nd.r * nd.cos_mean
    e1 = (p * two_a).sum(axis=(1, 2))
    e2 = (p * rc).sum(axis=(1, 2))
    e11 = (p * two_a ** 2).sum(axis=(1, 2))
    e12 = (p * two_a * rc).sum(axis=(1, 2))
    e22 = (p * nd.r ** 2 * nd.cos2_mean).sum(axis=(1, 2))
    grad = np.stack([e1, e2], axis=-1)
    h11 = e11 - e1 ** 2
    h12 = e12 - e1 * e2
    h22 = e22 - e2 ** 2
    hess = np.stack([np.stack([h11, h12], -1), np.stack([h12, h22], -1)], -2)
    return nd.log_z, grad, hess


# ---------------------------------------------------------------------------
# tilted Wishart: public operations
# ---------------------------------------------------------------------------

def log_z_twis(p: TiltedWishartParams) -> float:
    """ln Z_TWis(lam, phi, y) via the theta-collapsed 2-d quadrature."""
    return float(twis_log_z(p.lam, p.phi, np.array([p.y]), p.sigma)[0])


def twis_moments(p: TiltedWishartParams) -> WishartMomentBlock:
    """Mean of S and covariance of vec(S) under TWis(lam, phi, y)."""
    nd = _twis_nodes(p.lam, p.phi, np.array([p.y]), p.sigma)
    w = nd.prob[0]
    a, d2, r = nd.a[0], nd.d2[0], nd.r[0]
    c1, c2 = nd.cos_mean[0], nd.cos2_mean[0]
    # the d -> -d symmetry kills every odd power of d = (s - s')/2
    es = float((w * a).sum())
    ere = float((w * r * c1).sum())
    e_ss = float((w * (a * a + d2)).sum())
    e_sst = float((w * (a * a - d2)).sum())
    e_s_re = float((w * a * r * c1).sum())
    e_re2 = float((w * r * r * c2).sum())
    e_im2 = float((w * r * r * (1.0 - c2)).sum())
    mean = np.array([[es, ere], [ere, es]], dtype=complex)
    v_ss = e_ss - es * es
    c_ssp = e_sst - es * es
    c_sre = e_s_re - es * ere
    v_re = e_re2 - ere * ere
    cov = np.array([
        [v_ss, c_ssp, c_sre, 0.0],
        [c_ssp, v_ss, c_sre, 0.0],
        [c_sre, c_sre, v_re, 0.0],
        [0.0, 0.0, 0.0, e_im2],
    ])
    return WishartMomentBlock(mean=mean, cov=cov)


def sample_twis_batch(lam: float, phi: float, y: np.ndarray, sigma: float,
                      rng: np.random.Generator) -> np.ndarray:
    """One (s, s', theta) draw per entry of y, by exact rejection sampling.

    Proposal: s, s' i.i.d. Texp(lam + |phi|/2, y), which dominates the target
    because I0(phi sqrt(s s')) <= exp(|phi| (s + s')/2).  Acceptance
    probability is exp(-|phi|(sqrt s - sqrt s')^2 / 2) * e^{-x} I0(x) with
    x = |phi| sqrt(s s').  theta then follows a von Mises law.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    aphi = abs(phi)
    loc = _texp_location(lam + 0.5 * aphi, y, sigma)
    out = np.empty((y.size, 3))
    todo = np.arange(y.size)
    while todo.size:
        s1 = sample_texp_batch(loc[todo], sigma, rng)
        s2 = sample_texp_batch(loc[todo], sigma, rng)
        root = np.sqrt(s1 * s2)
        acc = np.exp(-0.5 * aphi * (np.sqrt(s1) - np.sqrt(s2)) ** 2) * special.i0e(aphi * root)
        ok = rng.random(todo.size) < acc
        idx = todo[ok]
        out[idx, 0] = s1[ok]
        out[idx, 1] = s2[ok]
        out[idx, 2] = rng.vonmises(0.0 if phi >= 0 else math.pi, aphi * root[ok])
        todo = todo[~ok]
    out[:, 2] = np.angle(np.exp(1j * out[:, 2]))
    return out


def sample_twis(p: TiltedWishartParams, seed: int, count: int) -> np.ndarray:
    """count i.i.d. (s, s', theta) triples from TWis(lam, phi, y)."""
    if count < 1:
        raise ParameterError("count must be >= 1")
    rng = np.random.default_rng(seed)
    return sample_twis_batch(p.lam, p.phi, np.full(count, p.y), p.sigma, rng)


def wishart_vec(draws: np.ndarray) -> np.ndarray:
    """Map (s, s', theta) triples to vec(S) = (S11, S22, Re S12, Im S12)."""
    s1, s2, th = draws[:, 0], draws[:, 1], draws[:, 2]
    r = np.sqrt(s1 * s2)
    return np.column_stack([s1, s2, r * np.cos(th), r * np.sin(th)])
