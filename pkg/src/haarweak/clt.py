"""Numerical checks of the change-of-measure identities and the local CLTs.

Denominator integral: for y in R^m,

    L(y) = E[ prod_i phi_sigma(y_i - |G_1i|^2) | ||G_1||^2 = m ],

where (|G_1i|^2 / m) is uniform on the simplex.  Tilting each coordinate to
Texp(lam, y_i) gives, for every lam,

    L(y) = (m-1)! e^{m(1-lam)} / m^{m-1} * F_{lam,y}(m) * prod_i Z_Texp(lam, y_i),

with F_{lam,y} the density of the sum of independent Texp(lam, y_i)
variables.  F is computed here by direct convolution on Legendre panels, so
the lam-invariance of the right-hand side is a sharp test.

Numerator integral: with S = sum_i g_i g_i^H the 2x2 Gram matrix of
complex Gaussian columns, U(y, Q) = E[prod phi_sigma phi_sigma | S = mQ]
and the tilted-Wishart analog holds with H_{lam,phi,y}, the density of the
sum of TWis draws.  H(X) is evaluated through the Stiefel fiber
G = X^{1/2} V, V V^H = I_2, for which

    H(X) = c_m det(X)^{m-2} E_V[ prod_i f_i(X^{1/2} v_i) ],
    c_m = pi^{2m-1} / ((m-1)! (m-2)!).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import optimize, special

from .core_math import log_normal_cdf, log_normal_pdf
from .errors import AccuracyError, ParameterError
from .tilted import (
    _texp_location,
    sample_texp_rows,
    sample_twis_batch,
    texp_log_pdf,
    texp_log_z,
    texp_mean_var,
    twis_log_z,
    twis_moments,
    TiltedWishartParams,
    wishart_vec,
)
from .y_model import YMeasure

CONV_WINDOW = 12.0     # half-width of each Texp support window, in sigma
CONV_NODES = 16        # Legendre nodes per panel
MAX_CONV_SIZE = 64
BAND_SD = 16.0         # partial-sum band half-width, in conditional sd
SPREAD_TOL = 1e-5
DIRECT_TOL = 1e-6
LCLT_1D_TOL = 0.1
COV_GAP_TOL = 0.05
DENSITY_4D_TOL = 0.5
MEAN_SE_MULT = 4.0
FIBER_TOL = 1e-4

_REF_X, _REF_W = np.polynomial.legendre.leggauss(CONV_NODES)


def _bary_weights(nodes: np.ndarray) -> np.ndarray:
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    return 1.0 / np.prod(diff, axis=1)


_REF_BARY = _bary_weights(_REF_X)


def _check_y(y, max_size: int | None = None) -> np.ndarray:
    arr = np.asarray(y, dtype=float).ravel()
    if arr.size == 0 or not np.all(np.isfinite(arr)):
        raise ParameterError("y must be a non-empty finite vector")
    if max_size is not None and arr.size > max_size:
        raise ParameterError(f"instance size {arr.size} exceeds {max_size}")
    return arr


def _check_sigma(sigma: float) -> None:
    if not (math.isfinite(sigma) and sigma > 0):
        raise ParameterError(f"sigma must be positive, got {sigma!r}")


def log_factorial(n: int) -> float:
    """ln n! through the log-gamma function."""
    return math.lgamma(n + 1)


# ---------------------------------------------------------------------------
# denominator: direct value for m = 2
# ---------------------------------------------------------------------------

def _log_l2_terms(y: np.ndarray, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Log integrand and log weights of (1/2) int_0^2 phi(y1 - u) phi(y2 - 2 + u) du."""
    # the product is a Gaussian in u centred at c with sd sigma / sqrt 2
    c = 0.5 * (y[0] + 2.0 - y[1])
    sd = sigma / math.sqrt(2.0)
    lo = max(0.0, min(c - CONV_WINDOW * sd, 2.0 - CONV_WINDOW * sd))
    hi = min(2.0, max(c + CONV_WINDOW * sd, CONV_WINDOW * sd))
    lo, hi = min(lo, hi), max(lo, hi)
    panels = max(1, int(math.ceil((hi - lo) / (0.5 * sd))))
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    u = (0.5 * (edges[:-1] + edges[1:]))[:, None] + half[:, None] * _REF_X
    logw = np.log(half[:, None] * _REF_W) + math.log(0.5)
    logf = log_normal_pdf(y[0] - u, sigma) + log_normal_pdf(y[1] - 2.0 + u, sigma)
    return logf.ravel(), logw.ravel()


def log_script_l_direct(y: Sequence[float], sigma: float) -> float:
    """ln L(y) for m = 2, where |G_11|^2 given ||G_1||^2 = 2 is uniform on [0, 2]."""
    arr = _check_y(y)
    if arr.size != 2:
        raise ParameterError(f"direct evaluation needs m = 2, got m = {arr.size}")
    _check_sigma(sigma)
    logf, logw = _log_l2_terms(arr, sigma)
    return float(special.logsumexp(logf + logw))


def script_l_direct(y: Sequence[float], sigma: float) -> float:
    return math.exp(log_script_l_direct(y, sigma))


# ---------------------------------------------------------------------------
# denominator: density of a sum of Texp variables by banded convolution
# ---------------------------------------------------------------------------

@dataclass
class _PanelLog:
    """ln of a positive function on equal Legendre panels of [a, b].

    The log is interpolated per panel: it is smooth and nearly quadratic
    where the density is small, which is where the target point often
    sits.  Outside [a, b] the function is zero.
    """

    a: float
    b: float
    values: np.ndarray          # (panels, CONV_NODES) log values

    @property
    def width(self) -> float:
        return (self.b - self.a) / self.values.shape[0]

    def __call__(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        n = self.values.shape[0]
        h = self.width
        out = np.full(s.shape, -np.inf)
        inside = (s >= self.a) & (s <= self.b)
        if not np.any(inside):
            return out
        if h <= 0:
            out[inside] = self.values[0, 0]
            return out
        si = s[inside]
        idx = np.clip(np.floor((si - self.a) / h).astype(int), 0, n - 1)
        t = 2.0 * (si - self.a - idx * h) / h - 1.0
        diff = t[:, None] - _REF_X[None, :]
        exact = np.abs(diff) < 1e-14
        diff[exact] = 1.0
        terms = _REF_BARY[None, :] / diff
        vals = self.values[idx]
        res = (terms * vals).sum(axis=1) / terms.sum(axis=1)
        rows = np.any(exact, axis=1)
        if np.any(rows):
            res[rows] = vals[rows][exact[rows]]
        out[inside] = res
        return out


def _panel_nodes(a: float, b: float, width: float) -> tuple[np.ndarray, int]:
    n = max(1, int(math.ceil((b - a) / width)))
    edges = np.linspace(a, b, n + 1)
    half = 0.5 * (edges[1] - edges[0])
    nodes = (0.5 * (edges[:-1] + edges[1:]))[:, None] + half * _REF_X[None, :]
    return nodes, n


def centering_tilt(point: float, y: np.ndarray, sigma: float) -> float:
    """The tilt at which sum_i E u_i = point."""
    def excess(lam: float) -> float:
        return float(np.sum(texp_mean_var(lam, y, sigma)[0])) - point

    lo, hi = -1.0, 1.0
    while excess(lo) > 0:
        lo = 2.0 * lo - 1.0
    while excess(hi) < 0:
        hi = 2.0 * hi + 1.0
    return float(optimize.brentq(excess, lo, hi, xtol=1e-12))


def _texp_windows(lam: float, y: np.ndarray, sigma: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Support windows and panel widths of Texp(lam, y_i).

    The upper edge is the smaller of a Gaussian (12 sigma past the mode)
    and an exponential (40 sd past the mean) cut; panels hold at most
    ~5 sd so exponential-like factors are resolved.
    """
    mu = sigma * _texp_location(lam, y, sigma)
    mean, var = texp_mean_var(lam, y, sigma)
    sd = np.sqrt(var)
    lo = np.maximum(0.0, mu - CONV_WINDOW * sigma)
    hi = np.minimum(np.maximum(mu, 0.0) + CONV_WINDOW * sigma, mean + 40.0 * sd)
    width = np.minimum(sigma, 5.0 * sd)
    return lo, hi, width


def log_sum_density(point: float, lam: float, y: Sequence[float], sigma: float) -> float:
    """ln of the density of sum_i u_i, u_i ~ Texp(lam, y_i) independent, at point.

    Partial sums are carried on the band of values from which the final
    point is still reachable, so each step is a 1-d quadrature over one
    window.  Windows are centred on the conditional law given the sum,
    i.e. on Texp(lam*, y_i) with lam* the centering tilt; the integrand is
    always the lam-tilted density.  Raises AccuracyError on underflow.
    """
    arr = _check_y(y, MAX_CONV_SIZE)
    _check_sigma(sigma)
    m = arr.size
    if m == 1:
        val = float(texp_log_pdf(point, lam, arr[0], sigma))
        if not math.isfinite(val):
            raise AccuracyError(f"density of the sum underflows at {point}")
        return val
    lam_c = centering_tilt(point, arr, sigma)
    lo, hi, widths = _texp_windows(lam_c, arr, sigma)
    cum_lo, cum_hi = np.cumsum(lo), np.cumsum(hi)
    tail_lo = cum_lo[-1] - cum_lo  # sum_{j > k} lo_j
    tail_hi = cum_hi[-1] - cum_hi
    if not (cum_lo[-1] <= point <= cum_hi[-1]):
        raise AccuracyError(f"point {point} outside the support window "
                            f"[{cum_lo[-1]:.6g}, {cum_hi[-1]:.6g}]")
    step_width = np.minimum.accumulate(widths)
    a_dom = np.maximum.reduce([np.zeros(m), cum_lo, point - tail_hi])
    b_dom = np.minimum.reduce([np.full(m, point), cum_hi, point - tail_lo])
    # partial sums given the total concentrate within a few conditional sd
    mean_c, var_c = texp_mean_var(lam_c, arr, sigma)
    cm, cv = np.cumsum(mean_c), np.cumsum(var_c)
    cond_sd = np.sqrt(np.maximum(cv * (cv[-1] - cv) / cv[-1], 0.0))
    a_dom = np.maximum(a_dom, cm - BAND_SD * cond_sd - 2.0 * widths.max())
    b_dom = np.minimum(b_dom, cm + BAND_SD * cond_sd + 2.0 * widths.max())

    prev = None  # _PanelLog for g_{k-1}, k >= 2; None means g_1 analytic
    for k in range(1, m):
        a_k, b_k = float(a_dom[k]), float(b_dom[k])
        if a_k > b_k:
            raise AccuracyError(f"empty convolution band at step {k + 1}")
        last = k == m - 1
        if last:
            targets = np.array([point])
        else:
            nodes, n_t = _panel_nodes(a_k, b_k, float(step_width[k]))
            targets = nodes.ravel()
        a_prev, b_prev = float(a_dom[k - 1]), float(b_dom[k - 1])
        ulo = np.maximum(lo[k], targets - b_prev)
        uhi = np.minimum(hi[k], targets - a_prev)
        n_u = max(1, int(math.ceil((hi[k] - lo[k]) / widths[k])))
        frac = (np.arange(n_u)[:, None] + 0.5 * (_REF_X[None, :] + 1.0)).ravel() / n_u
        wref = np.tile(_REF_W, n_u) / (2.0 * n_u)
        span = np.maximum(uhi - ulo, 0.0)
        log_g = np.full(targets.size, -np.inf)
        block = max(1, 2 ** 20 // frac.size)
        for start in range(0, targets.size, block):
            sl = slice(start, start + block)
            u = ulo[sl, None] + span[sl, None] * frac[None, :]
            w = span[sl, None] * wref[None, :]
            arg = targets[sl, None] - u
            log_prev = texp_log_pdf(arg, lam, arr[0], sigma) if prev is None else prev(arg)
            expo = texp_log_pdf(u, lam, arr[k], sigma) + log_prev
            top = np.max(expo, axis=1)
            ok = np.isfinite(top)
            if not np.any(ok):
                continue
            tot = np.sum(w[ok] * np.exp(expo[ok] - top[ok, None]), axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                log_g[np.flatnonzero(ok) + start] = np.where(tot > 0, np.log(tot) + top[ok], -np.inf)
        if last:
            if not np.isfinite(log_g[0]):
                raise AccuracyError("density of the sum underflows at the target point")
            return float(log_g[0])
        if not np.all(np.isfinite(log_g)):
            raise AccuracyError(f"convolution underflow at step {k + 1}")
        prev = _PanelLog(a_k, b_k, log_g.reshape(n_t, CONV_NODES))
    raise AssertionError("unreachable")


def log_script_l_via_tilt(y: Sequence[float], lam: float, sigma: float) -> float:
    """ln of the tilted representation of L(y) at tilt lam."""
    arr = _check_y(y, MAX_CONV_SIZE)
    _check_sigma(sigma)
    m = arr.size
    return (math.lgamma(m) + m * (1.0 - lam) - (m - 1) * math.log(m)
            + log_sum_density(float(m), lam, arr, sigma)
            + float(np.sum(texp_log_z(lam, arr, sigma))))


def script_l_via_tilt(y: Sequence[float], lam: float, sigma: float) -> float:
    return math.exp(log_script_l_via_tilt(y, lam, sigma))


def empirical_lambda1(y: Sequence[float], sigma: float) -> tuple[float, float]:
    """(lam_hat, Xi_hat) maximizing lam - mean ln Z_Texp(lam, y_i)."""
    from .variational import solve_xi1

    sol = solve_xi1(YMeasure.empirical(y, sigma))
    return sol.lam, sol.value


@dataclass(frozen=True)
class RepresentationCheck:
    m: int
    y: np.ndarray
    lambdas: tuple[float, ...]
    values: np.ndarray        # ln L per lambda
    direct: float | None      # ln L by direct quadrature (m = 2)
    spread: float             # max pairwise relative gap of L across lambdas
    direct_gap: float | None  # relative gap to the direct value

    @property
    def passed(self) -> bool:
        ok = self.spread <= SPREAD_TOL
        if self.direct_gap is not None:
            ok = ok and self.direct_gap <= DIRECT_TOL
        return ok


def _relative_spread(logs: np.ndarray) -> float:
    # max |L_a / L_b - 1| over pairs
    return float(np.expm1(np.max(logs) - np.min(logs)))


def representation_check(y: Sequence[float], sigma: float,
                         lambdas: Sequence[float] = (-0.5, 0.0, 0.7)) -> RepresentationCheck:
    arr = _check_y(y, MAX_CONV_SIZE)
    values = np.array([log_script_l_via_tilt(arr, lam, sigma) for lam in lambdas])
    direct = gap = None
    if arr.size == 2:
        direct = log_script_l_direct(arr, sigma)
        gap = float(np.max(np.abs(np.expm1(values - direct))))
    return RepresentationCheck(arr.size, arr, tuple(float(v) for v in lambdas), values,
                               direct, _relative_spread(values), gap)


def texp_variance_envelope(sigma: float, lam_max: float = 3.0, y_max: float = 5.0,
                           points: int = 201) -> float:
    """Smallest K with 1/K <= V_Texp(lam, y) <= K on |lam| <= lam_max, |y| <= y_max.

    Calibrated on a grid; used as the envelope constant of the lower bound
    on L.
    """
    lam = np.linspace(-lam_max, min(lam_max, 1.0 - 1e-3) if lam_max > 1 else lam_max, points)
    yy = np.linspace(-y_max, y_max, points)
    _, var = texp_mean_var(lam[:, None], yy[None, :], sigma)
    return float(max(np.max(var), 1.0 / np.min(var)))


@dataclass(frozen=True)
class LowerBoundCheck:
    m: int
    log_l: float
    log_bound: float
    envelope: float
    lam_hat: float
    xi_hat: float
    v_hat: float

    @property
    def passed(self) -> bool:
        return self.log_l >= self.log_bound


def lower_bound_check(y: Sequence[float], sigma: float,
                      envelope: float | None = None) -> LowerBoundCheck:
    """ln L with the Gaussian surrogate for F, against ln(1/(2 sqrt K)) - m Xi_hat."""
    arr = _check_y(y)
    m = arr.size
    lam, xi = empirical_lambda1(arr, sigma)
    _, var = texp_mean_var(lam, arr, sigma)
    v_hat = float(np.mean(var))
    k_env = texp_variance_envelope(sigma) if envelope is None else float(envelope)
    log_l = (math.lgamma(m) + m * (1.0 - lam) - (m - 1) * math.log(m)
             - 0.5 * math.log(2.0 * math.pi * v_hat * m)
             + float(np.sum(texp_log_z(lam, arr, sigma))))
    log_bound = -math.log(2.0) - 0.5 * math.log(k_env) - m * xi
    return LowerBoundCheck(m, log_l, log_bound, k_env, lam, xi, v_hat)


# ---------------------------------------------------------------------------
# numerator: Stiefel-fiber evaluation of H
# ---------------------------------------------------------------------------

def as_overlap_matrix(q) -> np.ndarray:
    """2x2 Hermitian Q from a scalar overlap q or a 2x2 array."""
    arr = np.asarray(q, dtype=complex)
    if arr.ndim == 0:
        arr = np.array([[1.0, arr], [np.conj(arr), 1.0]])
    if arr.shape != (2, 2) or not np.allclose(arr, arr.conj().T):
        raise ParameterError("Q must be a 2x2 Hermitian matrix")
    if np.linalg.eigvalsh(arr).min() <= 0:
        raise ParameterError("Q must be positive definite")
    return arr


def _sqrt_hermitian(x: np.ndarray) -> np.ndarray:
    w, u = np.linalg.eigh(x)
    if w.min() <= 0:
        raise ParameterError("matrix must be positive definite")
    return (u * np.sqrt(w)) @ u.conj().T


def stiefel_frames(m: int, count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """count uniform 2 x m frames V (V V^H = I_2) with equal weights."""
    if m < 2:
        raise ParameterError("frames need m >= 2")
    z = (rng.standard_normal((count, m, 2)) + 1j * rng.standard_normal((count, m, 2))) / math.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r, axis1=1, axis2=2)
    q = q * (d / np.abs(d))[:, None, :]
    return np.conj(np.swapaxes(q, 1, 2)), np.full(count, 1.0 / count)


def bloch_frames(n_polar: int = 160, n_azimuth: int = 160) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic rule for E_V over uniform 2 x 2 unitaries (m = 2).

    Column phases do not affect |G_ai|^2 and cancel in the tilted weights,
    so V ranges over the Bloch sphere: V = [[a, b], [-conj b, a]] with
    a = cos(theta/2), b = e^{i psi} sin(theta/2) and cos(theta) uniform.
    """
    c, wc = np.polynomial.legendre.leggauss(n_polar)
    psi = 2.0 * np.pi * np.arange(n_azimuth) / n_azimuth
    cc, pp = np.meshgrid(c, psi, indexing="ij")
    a = np.sqrt(0.5 * (1.0 + cc)).ravel()
    b = (np.sqrt(0.5 * (1.0 - cc)) * np.exp(1j * pp)).ravel()
    frames = np.empty((a.size, 2, 2), dtype=complex)
    frames[:, 0, 0] = a
    frames[:, 0, 1] = b
    frames[:, 1, 0] = -np.conj(b)
    frames[:, 1, 1] = a
    weights = (np.repeat(wc, n_azimuth) / 2.0) / n_azimuth
    return frames, weights


def _fiber_columns(x: np.ndarray, frames: np.ndarray) -> np.ndarray:
    """G = X^{1/2} V for every frame; shape (count, 2, m)."""
    return np.einsum("ab,nbi->nai", _sqrt_hermitian(x), frames)


def _log_pair_kernel(g: np.ndarray, y: np.ndarray, sigma: float) -> np.ndarray:
    """sum_i ln phi(y_i - |g_1i|^2) + ln phi(y_i - |g_2i|^2), per frame."""
    r = np.abs(g) ** 2
    return np.sum(log_normal_pdf(y[None, None, :] - r, sigma), axis=(1, 2))


def _log_mean(logs: np.ndarray, weights: np.ndarray) -> float:
    return float(special.logsumexp(logs, b=weights))


def log_u_direct(y: Sequence[float], q, sigma: float, frames: np.ndarray,
                 weights: np.ndarray) -> float:
    """ln E[prod phi phi | G G^H = mQ]: the conditional law of G is X^{1/2} V."""
    arr = _check_y(y)
    _check_sigma(sigma)
    qm = as_overlap_matrix(q)
    g = _fiber_columns(arr.size * qm, frames)
    return _log_mean(_log_pair_kernel(g, arr, sigma), weights)


def log_fiber_constant(m: int) -> float:
    """ln c_m with c_m = pi^{2m-1} / ((m-1)! (m-2)!)."""
    return (2 * m - 1) * math.log(math.pi) - math.lgamma(m) - math.lgamma(m - 1)


def _log_tilted_product(g: np.ndarray, lam: float, phi: float, y: np.ndarray,
                        sigma: float) -> np.ndarray:
    """sum_i ln f_i(g_i) per frame, f_i the TWis(lam, phi, y_i) density of g_i in C^2."""
    r = np.abs(g) ** 2
    cross = np.real(g[:, 0, :] * np.conj(g[:, 1, :]))
    log_f = (-(1.0 - lam) * r.sum(axis=1) + phi * cross
             + log_normal_pdf(y[None, :] - r[:, 0, :], sigma)
             + log_normal_pdf(y[None, :] - r[:, 1, :], sigma)
             - 2.0 * math.log(math.pi) - twis_log_z(lam, phi, y, sigma)[None, :])
    return log_f.sum(axis=1)


def log_h_fiber(x, lam: float, phi: float, y: Sequence[float], sigma: float,
                frames: np.ndarray, weights: np.ndarray) -> float:
    """ln of the density at X of sum_i S_i, S_i ~ TWis(lam, phi, y_i)."""
    arr = _check_y(y)
    x = np.asarray(x, dtype=complex)
    g = _fiber_columns(x, frames)
    m = arr.size
    det = float(np.real(np.linalg.det(x)))
    return (log_fiber_constant(m) + (m - 2) * math.log(det)
            + _log_mean(_log_tilted_product(g, lam, phi, arr, sigma), weights))


def log_u_via_tilt(y: Sequence[float], q, lam: float, phi: float, sigma: float,
                   frames: np.ndarray, weights: np.ndarray) -> float:
    """ln of the tilted representation of U(y, Q) at (lam, phi)."""
    arr = _check_y(y)
    m = arr.size
    qm = as_overlap_matrix(q)
    det_q = float(np.real(np.linalg.det(qm)))
    tr_q = float(np.real(np.trace(qm)))
    return (math.log(math.pi) + math.lgamma(m) + math.lgamma(m - 1)
            - (2 * m - 4) * math.log(m) - (m - 2) * math.log(det_q)
            + m * (1.0 - lam) * tr_q - m * phi * float(np.real(qm[0, 1]))
            + float(np.sum(twis_log_z(lam, phi, arr, sigma)))
            + log_h_fiber(m * qm, lam, phi, arr, sigma, frames, weights))


@dataclass(frozen=True)
class NumeratorCheck:
    m: int
    q: float
    tilts: tuple[tuple[float, float], ...]
    values: np.ndarray      # ln U per tilt
    direct: float
    spread: float           # relative spread across tilts and the direct value

    @property
    def passed(self) -> bool:
        return self.spread <= FIBER_TOL


def empirical_tilt2(q: float, y: Sequence[float], sigma: float) -> tuple[float, float]:
    from .variational import solve_xi2

    sol = solve_xi2(q, YMeasure.empirical(y, sigma))
    return sol.lam, sol.phi


def numerator_check(y: Sequence[float], q: float, sigma: float, seed: int = 0,
                    frame_count: int = 20000, tilts=None) -> NumeratorCheck:
    """ln U at (0, 0) and at the empirical optimum (lam2, phi), against the direct value."""
    arr = _check_y(y)
    m = arr.size
    if m == 2:
        frames, weights = bloch_frames()
    else:
        frames, weights = stiefel_frames(m, frame_count, np.random.default_rng(seed))
    if tilts is None:
        tilts = ((0.0, 0.0), empirical_tilt2(q, arr, sigma))
    values = np.array([log_u_via_tilt(arr, q, lam, phi, sigma, frames, weights) for lam, phi in tilts])
    direct = log_u_direct(arr, q, sigma, frames, weights)
    spread = _relative_spread(np.append(values, direct))
    return NumeratorCheck(m, float(q), tuple(tuple(map(float, t)) for t in tilts), values, direct, spread)


@dataclass(frozen=True)
class FiberNormalization:
    total: float            # estimate of int H(X) dX
    total_se: float
    mean: np.ndarray        # estimate of int X H(X) dX, as (S11, S22, Re S12)
    mean_se: np.ndarray
    target_mean: np.ndarray
    samples: int

    @property
    def passed(self) -> bool:
        ok = abs(self.total - 1.0) <= MEAN_SE_MULT * self.total_se
        return bool(ok and np.all(np.abs(self.mean - self.target_mean) <= MEAN_SE_MULT * self.mean_se))


def fiber_normalization(y: Sequence[float], lam: float, phi: float, sigma: float,
                        samples: int = 20000, seed: int = 0) -> FiberNormalization:
    """Importance-sample X from a complex Wishart law and integrate the fiber H.

    Checks that the fiber formula (constant c_m included) is a probability
    density with the mean sum_i E S_i.
    """
    arr = _check_y(y)
    m = arr.size
    if m < 2:
        raise ParameterError("need m >= 2")
    moments = [twis_moments(TiltedWishartParams(lam, phi, float(v), sigma)) for v in arr]
    target = np.sum([[mo.mean[0, 0].real, mo.mean[1, 1].real, mo.mean[0, 1].real] for mo in moments], axis=0)
    s_mat = np.array([[target[0], target[2]], [target[2], target[1]]], dtype=complex) / m
    rng = np.random.default_rng(seed)
    root = _sqrt_hermitian(s_mat)
    z = (rng.standard_normal((samples, 2, m)) + 1j * rng.standard_normal((samples, 2, m))) / math.sqrt(2.0)
    gz = np.einsum("ab,nbi->nai", root, z)
    xs = np.einsum("nai,nbi->nab", gz, np.conj(gz))
    inv = np.linalg.inv(s_mat)
    log_det_s = math.log(float(np.real(np.linalg.det(s_mat))))
    frames, _ = stiefel_frames(m, samples, rng)
    w, u = np.linalg.eigh(xs)
    roots = np.einsum("nak,nk,nbk->nab", u, np.sqrt(w), np.conj(u))
    g = np.einsum("nab,nbi->nai", roots, frames)
    log_det_x = np.log(np.prod(w, axis=1))
    # fiber H with one frame per X, over the Wishart(S, m) density
    log_h = log_fiber_constant(m) + (m - 2) * log_det_x + _log_tilted_product(g, lam, phi, arr, sigma)
    log_w = ((m - 2) * log_det_x - np.real(np.einsum("ab,nba->n", inv, xs))
             - math.log(math.pi) - math.lgamma(m) - math.lgamma(m - 1) - m * log_det_s)
    ratios = np.exp(log_h - log_w)
    vec = np.column_stack([xs[:, 0, 0].real, xs[:, 1, 1].real, xs[:, 0, 1].real])
    weighted = vec * ratios[:, None]
    se = lambda v: np.std(v, axis=0, ddof=1) / math.sqrt(samples)  # noqa: E731
    return FiberNormalization(float(ratios.mean()), float(se(ratios)), weighted.mean(axis=0),
                              se(weighted), target, samples)


# ---------------------------------------------------------------------------
# local CLT, one dimension
# ---------------------------------------------------------------------------

def _texp_log_pdf_rows(u: np.ndarray, x: np.ndarray, sigma: float, log_norm: np.ndarray) -> np.ndarray:
    """Texp log density at u (any shape, last axis over coordinates) from locations."""
    t = u / sigma
    val = -0.5 * (t - x) ** 2 - log_norm
    return np.where(u >= 0, val, -np.inf)


def sum_density_cf(point: float, lam: float, y: Sequence[float], sigma: float,
                   nodes: int = 400) -> float:
    """Density of sum_i Texp(lam, y_i) at point by characteristic-function inversion.

    The CF of sigma * T, T ~ N(x, 1) truncated to [0, inf), is
    exp(i s x - s^2/2) Phi(x + i s) / Phi(x) with s = sigma t.
    """
    arr = _check_y(y)
    x = _texp_location(lam, arr, sigma)
    _, var = texp_mean_var(lam, arr, sigma)
    scale = math.sqrt(float(np.sum(var)))
    t, w = np.polynomial.legendre.leggauss(nodes)
    top = 14.0 / scale
    t = 0.5 * top * (t + 1.0)
    w = 0.5 * top * w
    base = log_normal_cdf(x)
    log_cf = np.zeros(t.size, dtype=complex)
    for start in range(0, arr.size, 512):
        xs = x[start:start + 512]
        st = sigma * t[:, None]
        log_cf += np.sum(1j * st * xs - 0.5 * st ** 2 + special.log_ndtr(xs + 1j * st)
                         - base[start:start + 512], axis=1)
    integrand = np.real(np.exp(log_cf - 1j * t * point))
    return float(np.dot(w, integrand) / math.pi)


@dataclass(frozen=True)
class LocalCltReport:
    experiment: str
    m: int
    trials: int
    sigma: float
    lam_hat: float
    v_hat: float
    estimate: float
    estimate_se: float
    gaussian: float
    gap: float
    tolerance: float
    mean_sum: float
    mean_sum_se: float
    extra: dict = field(default_factory=dict)

    @property
    def mean_ok(self) -> bool:
        return abs(self.mean_sum - self.m) <= MEAN_SE_MULT * self.mean_sum_se

    @property
    def passed(self) -> bool:
        return bool(self.gap <= self.tolerance and self.mean_ok)

    def rows(self) -> list[dict]:
        out = [
            dict(experiment=self.experiment, m=self.m, trials=self.trials,
                 statistic="density_gap", value=self.gap, tolerance=self.tolerance,
                 passed=self.gap <= self.tolerance),
            dict(experiment=self.experiment, m=self.m, trials=self.trials,
                 statistic="mean_sum_z", value=(self.mean_sum - self.m) / self.mean_sum_se,
                 tolerance=MEAN_SE_MULT, passed=self.mean_ok),
        ]
        for key, (value, tol, ok) in self.extra.items():
            out.append(dict(experiment=self.experiment, m=self.m, trials=self.trials,
                            statistic=key, value=value, tolerance=tol, passed=ok))
        return out


def clt_instance(sigma: float, m: int, seed: int) -> np.ndarray:
    """Measurements of one simulated instance with m = n."""
    from .simulator import SimConfig, simulate

    return simulate(SimConfig(n=m, delta=1.0, sigma=sigma, ensemble="haar", seed=seed)).y


def local_clt_error_1d(sigma: float, m: int, trials: int, seed: int = 0,
                       subset: int = 32, chunk: int = 500) -> LocalCltReport:
    """Monte Carlo density of sum_i u_i at m, u_i ~ Texp(lam1_hat, y_i).

    The density is estimated by conditioning on all but one coordinate:
    for each j in a subset J, f_j(m - S + u_j) is an unbiased estimate of
    the density of S at m, and averaging over J and trials has no
    bandwidth.  A reflected Gaussian KDE (Silverman bandwidth) is reported
    alongside.
    """
    from .simulator import rng_for

    if m < 2 or trials < 1:
        raise ParameterError("need m >= 2 and trials >= 1")
    _check_sigma(sigma)
    y = clt_instance(sigma, m, seed)
    lam, _ = empirical_lambda1(y, sigma)
    x = _texp_location(lam, y, sigma)
    _, var = texp_mean_var(lam, y, sigma)
    v_hat = float(np.mean(var))
    gaussian = 1.0 / math.sqrt(2.0 * math.pi * v_hat * m)
    pick = np.linspace(0, m - 1, min(subset, m)).astype(int)
    log_norm = log_normal_cdf(x[pick]) + 0.5 * math.log(2 * math.pi) + math.log(sigma)
    sums = np.empty(trials)
    cond = np.empty(trials)
    done = 0
    block = 0
    while done < trials:
        rows = min(chunk, trials - done)
        u = sample_texp_rows(x, sigma, rng_for(seed, 1, block), rows)
        s = u.sum(axis=1)
        rest = (float(m) - s)[:, None] + u[:, pick]
        cond[done:done + rows] = np.mean(np.exp(_texp_log_pdf_rows(rest, x[pick], sigma, log_norm)), axis=1)
        sums[done:done + rows] = s
        done += rows
        block += 1
    estimate = float(cond.mean())
    se = float(cond.std(ddof=1) / math.sqrt(trials)) if trials > 1 else float("inf")
    sd = float(sums.std(ddof=1)) if trials > 1 else 0.0
    extra = {}
    if sd > 0:
        h = 1.06 * sd * trials ** -0.2
        kde = float(np.mean(normal_kernel((m - sums) / h) + normal_kernel((m + sums) / h)) / h)
        kde_gap = abs(kde / gaussian - 1.0)
        extra["kde_gap"] = (kde_gap, LCLT_1D_TOL, kde_gap <= LCLT_1D_TOL)
    gap = abs(estimate / gaussian - 1.0)
    return LocalCltReport("clt1d", m, trials, sigma, lam, v_hat, estimate, se, gaussian, gap,
                          LCLT_1D_TOL, float(sums.mean()), sd / math.sqrt(trials) if trials > 1 else float("inf"),
                          extra)


def normal_kernel(z: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def local_clt_gap_exact(sigma: float, m: int, seed: int = 0) -> float:
    """Relative gap between the exact density of the tilted sum at m and its Gaussian value."""
    y = clt_instance(sigma, m, seed)
    lam, _ = empirical_lambda1(y, sigma)
    _, var = texp_mean_var(lam, y, sigma)
    gaussian = 1.0 / math.sqrt(2.0 * math.pi * float(np.sum(var)))
    return abs(sum_density_cf(float(m), lam, y, sigma) / gaussian - 1.0)


# ---------------------------------------------------------------------------
# local CLT, four dimensions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LocalClt4dReport:
    m: int
    trials: int
    sigma: float
    q: float
    lam_hat: float
    phi_hat: float
    mean_z: np.ndarray          # component means of vec(sum S_i - mQ)/sqrt(m), in se units
    trace_mean: float           # average of s + s' over i and trials
    trace_se: float
    cov_gap: float
    density: float
    density_gaussian: float
    density_gap: float

    @property
    def trace_ok(self) -> bool:
        return abs(self.trace_mean - 2.0) <= MEAN_SE_MULT * self.trace_se

    @property
    def passed(self) -> bool:
        return bool(self.trace_ok and np.all(np.abs(self.mean_z) <= MEAN_SE_MULT)
                    and self.cov_gap <= COV_GAP_TOL and self.density_gap <= DENSITY_4D_TOL)

    def rows(self) -> list[dict]:
        base = dict(experiment="clt4d", m=self.m, trials=self.trials)
        return [
            dict(base, statistic="trace_mean_z", value=(self.trace_mean - 2.0) / self.trace_se,
                 tolerance=MEAN_SE_MULT, passed=self.trace_ok),
            dict(base, statistic="max_mean_z", value=float(np.max(np.abs(self.mean_z))),
                 tolerance=MEAN_SE_MULT, passed=bool(np.all(np.abs(self.mean_z) <= MEAN_SE_MULT))),
            dict(base, statistic="cov_gap", value=self.cov_gap, tolerance=COV_GAP_TOL,
                 passed=self.cov_gap <= COV_GAP_TOL),
            dict(base, statistic="density_gap", value=self.density_gap, tolerance=DENSITY_4D_TOL,
                 passed=self.density_gap <= DENSITY_4D_TOL),
        ]


def local_clt_error_4d(sigma: float, q: float, m: int, trials: int, seed: int = 0,
                       chunk: int = 200) -> LocalClt4dReport:
    """Sums of TWis(lam2_hat, phi_hat, y_i) draws against their Gaussian limit."""
    from .simulator import rng_for

    if m < 2 or trials < 10:
        raise ParameterError("need m >= 2 and trials >= 10")
    y = clt_instance(sigma, m, seed)
    lam, phi = empirical_tilt2(q, y, sigma)
    target = np.array([m, m, m * q, 0.0])
    z = np.empty((trials, 4))
    trace_sum = np.empty(trials)
    done = 0
    block = 0
    while done < trials:
        rows = min(chunk, trials - done)
        draws = sample_twis_batch(lam, phi, np.tile(y, rows), sigma, rng_for(seed, 2, block))
        vec = wishart_vec(draws).reshape(rows, m, 4).sum(axis=1)
        z[done:done + rows] = (vec - target) / math.sqrt(m)
        trace_sum[done:done + rows] = (vec[:, 0] + vec[:, 1]) / m
        done += rows
        block += 1
    v_hat = np.mean([twis_moments(TiltedWishartParams(lam, phi, float(v), sigma)).cov for v in y], axis=0)
    sample_cov = np.cov(z, rowvar=False)
    cov_gap = float(np.linalg.norm(sample_cov - v_hat, 2) / np.linalg.norm(v_hat, 2))
    mean_z = z.mean(axis=0) / (z.std(axis=0, ddof=1) / math.sqrt(trials))
    # Gaussian KDE in whitened coordinates, Scott bandwidth
    white = np.linalg.solve(np.linalg.cholesky(v_hat), z.T).T
    h = trials ** (-1.0 / 8.0)
    kde_white = float(np.mean(np.exp(-0.5 * np.sum(white ** 2, axis=1) / h ** 2))) / (2 * math.pi * h * h) ** 2
    density = kde_white / math.sqrt(float(np.linalg.det(v_hat)))
    gauss = 1.0 / ((2 * math.pi) ** 2 * math.sqrt(float(np.linalg.det(v_hat))))
    return LocalClt4dReport(m, trials, sigma, q, lam, phi, mean_z, float(trace_sum.mean()),
                            float(trace_sum.std(ddof=1) / math.sqrt(trials)), cov_gap,
                            density, gauss, abs(density / gauss - 1.0))


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

REPORT_FIELDS = ("experiment", "m", "trials", "statistic", "value", "tolerance", "passed")


def write_report(rows: Sequence[dict], path: str | Path) -> None:
    """CSV with one row per checked statistic; floats at 17 significant digits."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_FIELDS)
        for row in rows:
            writer.writerow([_fmt(row[k]) for k in REPORT_FIELDS])


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)
