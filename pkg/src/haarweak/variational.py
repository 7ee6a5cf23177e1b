"""Concave variational problems P1 and P2.

P1:  Xi1 = max_lam  lam - E ln Z_Texp(lam, Y)
P2:  Xi2(q) = max_{lam, phi}  2 lam + q phi - E ln Z_TWis(lam, phi, Y)

Both potentials are concave (their negative is a log-partition function),
so a damped Newton iteration inside a coercivity box converges once the box
contains the maximizer.  The box radius scales like (1 + q + 1/(1-q)) (E Y^2 + 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import optimize

from .core_math import gauss_hermite_normal, legendre_nodes, log_normal_cdf
from .errors import CoercivityError, CurvatureError, ParameterError
from .tilted import texp_log_z, texp_mean_var, twis_log_z, twis_potential_terms
from .y_model import YMeasure

GRAD_TOL = 1e-9
MAX_ITER = 200
BOX_CONSTANT = 4.0
COND_LIMIT = 1e12


@dataclass(frozen=True)
class VariationalSolution:
    """Optimum of P1 or P2.

    ``hessian`` is the Hessian of the (concave) potential at ``argmax``;
    ``bracket`` is the radius R of the box |lam| + |phi| <= R that was searched.
    """

    value: float
    argmax: np.ndarray
    hessian: np.ndarray
    residual: float
    iterations: int
    bracket: float
    method: str = "newton"

    @property
    def lam(self) -> float:
        return float(self.argmax[0])

    @property
    def phi(self) -> float:
        return float(self.argmax[1]) if self.argmax.size > 1 else 0.0


def box_radius(q: float, measure: YMeasure) -> float:
    return BOX_CONSTANT * (1.0 + q + 1.0 / (1.0 - q)) * (measure.second_moment() + 1.0)


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------

def p1_terms(lam: float, measure: YMeasure) -> tuple[float, np.ndarray, np.ndarray]:
    """Value, gradient and Hessian of lam - E ln Z_Texp(lam, Y)."""
    y, w = measure.atoms()
    logz = texp_log_z(lam, y, measure.sigma)
    mean, var = texp_mean_var(lam, y, measure.sigma)
    value = lam - float(np.dot(w, logz))
    grad = np.array([1.0 - float(np.dot(w, mean))])
    hess = np.array([[-float(np.dot(w, var))]])
    return value, grad, hess


def p2_terms(x: np.ndarray, q: float, measure: YMeasure) -> tuple[float, np.ndarray, np.ndarray]:
    """Value, gradient and Hessian of 2 lam + q phi - E ln Z_TWis(lam, phi, Y)."""
    lam, phi = float(x[0]), float(x[1])
    y, w = measure.atoms()
    logz, grad_z, hess_z = twis_potential_terms(lam, phi, y, measure.sigma)
    value = 2.0 * lam + q * phi - float(np.dot(w, logz))
    grad = np.array([2.0, q]) - w @ grad_z
    hess = -np.einsum("i,ijk->jk", w, hess_z)
    return value, grad, hess


def p1_value(lam: float, measure: YMeasure) -> float:
    y, w = measure.atoms()
    return lam - float(np.dot(w, texp_log_z(lam, y, measure.sigma)))


def p2_value(x: np.ndarray, q: float, measure: YMeasure) -> float:
    y, w = measure.atoms()
    return 2.0 * x[0] + q * x[1] - float(np.dot(w, twis_log_z(float(x[0]), float(x[1]), y, measure.sigma)))


# ---------------------------------------------------------------------------
# Newton driver
# ---------------------------------------------------------------------------

Terms = Callable[[np.ndarray], tuple[float, np.ndarray, np.ndarray]]


def _l1(x: np.ndarray) -> float:
    return float(np.sum(np.abs(x)))


def _newton(terms: Terms, x0: np.ndarray, radius: float) -> tuple[np.ndarray, float, np.ndarray, np.ndarray, int, bool]:
    """Damped Newton ascent inside the L1 ball of the given radius.

    Returns (x, value, grad, hess, iterations, ok); ``ok`` is False when the
    Hessian became too ill-conditioned or the line search stalled.
    """
    x = np.array(x0, dtype=float)
    val, g, h = terms(x)
    for it in range(1, MAX_ITER + 1):
        if np.linalg.norm(g) <= GRAD_TOL:
            return x, val, g, h, it - 1, True
        if np.linalg.cond(h) > COND_LIMIT or not np.all(np.linalg.eigvalsh(h) < 0):
            return x, val, g, h, it - 1, False
        step = -np.linalg.solve(h, g)
        alpha = 1.0
        # stay strictly inside the box
        while _l1(x + alpha * step) >= radius and alpha > 1e-12:
            alpha *= 0.5
        accepted = False
        while alpha > 1e-12:
            x_new = x + alpha * step
            val_new, g_new, h_new = terms(x_new)
            # near the optimum values stop changing at rounding level; accept
            # steps that shrink the gradient in that regime
            if val_new >= val - 1e-14 * (1.0 + abs(val)) or np.linalg.norm(g_new) < np.linalg.norm(g):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            return x, val, g, h, it, False
        x, val, g, h = x_new, val_new, g_new, h_new
    return x, val, g, h, MAX_ITER, np.linalg.norm(g) <= GRAD_TOL


def _bisect_gradient(grad1: Callable[[float], float], lo: float, hi: float) -> float:
    """Root of a decreasing scalar gradient on [lo, hi] by bisection."""
    glo, ghi = grad1(lo), grad1(hi)
    if not (glo > 0 > ghi):
        raise CoercivityError("no interior sign change of the gradient inside the box")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        gm = grad1(mid)
        if gm > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)


@lru_cache(maxsize=64)
def _corner_log_z(measure: YMeasure, radius: float) -> tuple[tuple[float, float, float], ...]:
    """(lam, phi, E ln Z_TWis) at the four vertices of the L1 box."""
    y, w = measure.atoms()
    out = []
    for lam, phi in ((radius, 0.0), (-radius, 0.0), (0.0, radius), (0.0, -radius)):
        out.append((lam, phi, float(np.dot(w, twis_log_z(lam, phi, y, measure.sigma)))))
    return tuple(out)


def _certify_box(value: float, boundary_values: list[float], what: str) -> None:
    if not all(v < value for v in boundary_values):
        raise CoercivityError(f"{what}: potential on the box boundary is not below the optimum")


# ---------------------------------------------------------------------------
# P1
# ---------------------------------------------------------------------------

def solve_xi1(measure: YMeasure, start: float = 0.0) -> VariationalSolution:
    """Xi1 = max_lam (lam - E ln Z_Texp(lam, Y)) and its maximizer lam1."""
    radius = box_radius(0.0, measure)

    def terms(x):
        return p1_terms(float(x[0]), measure)

    x, val, g, h, it, ok = _newton(terms, np.array([start]), radius)
    method = "newton"
    if not ok:
        method = "bisection"
        lam = _bisect_gradient(lambda t: p1_terms(t, measure)[1][0], -radius, radius)
        x = np.array([lam])
        val, g, h = terms(x)
        x, val, g, h, extra, _ = _newton(terms, x, radius)
        it += extra
    if np.linalg.norm(g) > GRAD_TOL:
        raise CoercivityError(f"P1 did not converge (gradient {np.linalg.norm(g):.3e})")
    _certify_box(val, [p1_value(-radius, measure), p1_value(radius, measure)], "P1")
    return VariationalSolution(val, x, h, float(np.linalg.norm(g)), it, radius, method)


def _population_mean_log_cdf(sigma: float, t: float) -> float:
    """E ln Phi(Y/sigma + t) for the population law, resolved on the sigma scale.

    With E = sigma v the expectation is int_0^inf sigma e^{-sigma v} g(v + t) dv,
    g(x) = E ln Phi(x + eps).  g decays like a Gaussian tail for x > 0, so unit
    panels up to v + t = 40 capture everything that matters.
    """
    upper = max(40.0 - t, 1.0)
    n_panels = int(math.ceil(upper))
    edges = np.linspace(0.0, upper, n_panels + 1)
    v, wv = legendre_nodes(edges[:-1], edges[1:], 16)
    v, wv = v.ravel(), wv.ravel()
    h = gauss_hermite_normal(40)
    g = log_normal_cdf(v[:, None] + t + h.nodes[None, :]) @ h.weights
    return float(np.dot(wv * sigma * np.exp(-sigma * v), g))


def xi1_via_min_t(measure: YMeasure) -> float:
    """Second route to Xi1: 1 - min_t (E ln Phi(Y/sigma + t) + t^2/2 - t (1 - E Y)/sigma).

    Follows from substituting lam = 1 + t/sigma in the closed-form
    normalizer.  The last term vanishes for the population law, whose
    expectation is integrated on the sigma scale rather than through the
    solver's atoms; empirical measures use the exact sample mean.
    """
    sigma = measure.sigma
    bound = sigma * (box_radius(0.0, measure) + 1.0)
    if measure.is_population:
        def objective(t: float) -> float:
            return _population_mean_log_cdf(sigma, t) + 0.5 * t * t
    else:
        drift = (1.0 - measure.expect(lambda y: y)) / sigma

        def objective(t: float) -> float:
            return measure.expect(lambda y: log_normal_cdf(y / sigma + t)) + 0.5 * t * t - t * drift

    res = optimize.minimize_scalar(objective, bounds=(-bound, bound), method="bounded",
                                   options={"xatol": 1e-12})
    return 1.0 - float(res.fun)


# ---------------------------------------------------------------------------
# P2
# ---------------------------------------------------------------------------

def _coordinate_ascent(q: float, measure: YMeasure, x0: np.ndarray, radius: float) -> np.ndarray:
    """Fallback: alternate exact 1-d maximizations in lam and phi."""
    x = np.array(x0, dtype=float)
    for _ in range(MAX_ITER):
        for k in (0, 1):
            def partial(t, k=k):
                z = x.copy()
                z[k] = t
                return p2_terms(z, q, measure)[1][k]
            other = abs(x[1 - k])
            lim = radius - other
            x[k] = _bisect_gradient(partial, -lim * (1 - 1e-9), lim * (1 - 1e-9))
        if np.linalg.norm(p2_terms(x, q, measure)[1]) < 1e-6:
            break
    return x


def solve_xi2(q: float, measure: YMeasure, start: np.ndarray | None = None,
              radius: float | None = None) -> VariationalSolution:
    """Xi2(q) = max_{lam, phi} (2 lam + q phi - E ln Z_TWis(lam, phi, Y)).

    ``radius`` overrides the L1 box; it must be at least ``box_radius(q)``.
    Curves pass the radius of their largest q so the box corners are shared.
    """
    if not (0.0 <= q < 1.0) or not math.isfinite(q):
        raise ParameterError(f"overlap must lie in [0, 1), got {q!r}")
    if radius is None:
        radius = box_radius(q, measure)
    elif radius < box_radius(q, measure):
        raise ParameterError("box radius below the coercivity bound for this overlap")
    if start is None:
        lam1 = solve_xi1(measure).lam
        start = np.array([lam1, 0.0])

    def terms(x):
        return p2_terms(x, q, measure)

    x, val, g, h, it, ok = _newton(terms, np.asarray(start, dtype=float), radius)
    method = "newton"
    if not ok:
        method = "coordinate-ascent"
        x = _coordinate_ascent(q, measure, x, radius)
        x, val, g, h, extra, _ = _newton(terms, x, radius)
        it += extra
    if np.linalg.norm(g) > GRAD_TOL:
        raise CoercivityError(f"P2 did not converge at q={q} (gradient {np.linalg.norm(g):.3e})")
    corners = [2.0 * lam + q * phi - logz for lam, phi, logz in _corner_log_z(measure, float(radius))]
    _certify_box(val, corners, f"P2 at q={q}")
    return VariationalSolution(val, x, h, float(np.linalg.norm(g)), it, radius, method)


def xi2_second_derivative(q: float, measure: YMeasure,
                          solution: VariationalSolution | None = None) -> float:
    """d^2 Xi2/dq^2 = e2^T H^{-1} e2, H the Hessian of E ln Z_TWis at the maximizer."""
    if solution is None:
        solution = solve_xi2(q, measure)
    h = -solution.hessian
    if np.linalg.cond(h) > COND_LIMIT:
        raise CurvatureError(f"Hessian condition number {np.linalg.cond(h):.3e} too large at q={q}")
    return float(np.linalg.solve(h, np.array([0.0, 1.0]))[1])


def xi2_curvature_at_zero(measure: YMeasure, xi1: VariationalSolution | None = None) -> float:
    """Curvature of Xi2 at q = 0 from the P1 solution alone.

    At q = 0 the maximizer is (lam1, 0), the two diagonal entries decouple
    and the Hessian is diagonal with phi-entry E (E[T])^2 / 2, T ~ Texp(lam1, Y).
    """
    if xi1 is None:
        xi1 = solve_xi1(measure)
    y, w = measure.atoms()
    mean, _ = texp_mean_var(xi1.lam, y, measure.sigma)
    return 2.0 / float(np.dot(w, mean ** 2))
