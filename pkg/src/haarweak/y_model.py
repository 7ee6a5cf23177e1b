"""The law of the measurement variable Y = E + sigma * eps, E ~ Exp(1), eps ~ N(0,1).

A :class:`YMeasure` is either the population law (integrated by a
Laguerre x Hermite tensor rule) or an empirical sample.  Both expose
``atoms()``: a short list of (y, weight) pairs that the variational solvers
integrate against.  For the population law the atoms come from a composite
rule weighted by the closed-form density of Y; for large samples they are
a moment-matched compression of the sample (exact for piecewise
polynomials of degree < 16 on panels of width sigma/2).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .core_math import (
    QuadratureRule,
    gauss_hermite_normal,
    gauss_laguerre,
    legendre_nodes,
    log_normal_cdf,
    tensor_rule,
)
from .errors import IntegrandError, ParameterError

# samples larger than this are compressed before solver use
COMPRESS_ABOVE = 4000
_PANEL_NODES = 16


def _check_sigma(sigma: float) -> None:
    if not (np.isfinite(sigma) and sigma > 0):
        raise ParameterError(f"noise level must be positive and finite, got {sigma!r}")


def log_y_density(y, sigma: float):
    """ln p_Y(y) = sigma^2/2 - y + ln Phi(y/sigma - sigma)."""
    _check_sigma(sigma)
    y = np.asarray(y, dtype=float)
    return 0.5 * sigma ** 2 - y + log_normal_cdf(y / sigma - sigma)


def y_density(y, sigma: float):
    """Density of Y, i.e. int_0^inf e^{-u} phi_sigma(y - u) du in closed form."""
    return np.exp(log_y_density(y, sigma))


def y_moment(k: int, sigma: float) -> float:
    """E Y^k from E E^j = j! and the Gaussian moments of sigma * eps."""
    if k < 0:
        raise ParameterError("moment order must be non-negative")
    total = 0.0
    for j in range(k + 1):
        r = k - j
        if r % 2:
            continue
        gauss = float(special.factorial2(r - 1)) if r > 0 else 1.0
        total += math.comb(k, j) * math.factorial(j) * sigma ** r * gauss
    return total


def _population_atoms(sigma: float, n_core: int = 48, n_mid: int = 48,
                      n_tail: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Composite rule for int f(y) p_Y(y) dy.

    Legendre on [-10 sigma, 10 sigma] resolves the sigma-scale transition
    near 0, Legendre on [10 sigma, c] the bulk, and Laguerre on [c, inf)
    the exponential tail, where p_Y(c + t) = e^{-t} * (slowly varying).
    """
    lo, core_hi = -10.0 * sigma, 10.0 * sigma
    c = max(2.0, core_hi)
    pieces_y, pieces_w = [], []
    x, w = legendre_nodes(np.array(lo), np.array(core_hi), n_core)
    pieces_y.append(x)
    pieces_w.append(w * y_density(x, sigma))
    if c > core_hi:
        x, w = legendre_nodes(np.array(core_hi), np.array(c), n_mid)
        pieces_y.append(x)
        pieces_w.append(w * y_density(x, sigma))
    lag = gauss_laguerre(n_tail)
    yt = c + lag.nodes
    wt = lag.weights * np.exp(0.5 * sigma ** 2 - c + log_normal_cdf(yt / sigma - sigma))
    pieces_y.append(yt)
    pieces_w.append(wt)
    return np.concatenate(pieces_y), np.concatenate(pieces_w)


def _barycentric_weights(nodes: np.ndarray) -> np.ndarray:
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    return 1.0 / np.prod(diff, axis=1)


def _compress_sample(sample: np.ndarray, width: float) -> tuple[np.ndarray, np.ndarray]:
    """Replace the empirical average by a rule on Chebyshev panels.

    Each sample point is spread over the Lagrange basis of its panel, so the
    rule reproduces the sample average of every function that is a
    polynomial of degree < 16 on each panel.  Weights may be negative.
    """
    lo, hi = float(sample[0]), float(sample[-1])
    n_panels = max(1, int(math.ceil((hi - lo) / width)))
    edges = lo + (hi - lo) * np.arange(n_panels + 1) / n_panels
    k = np.arange(_PANEL_NODES)
    ref = np.cos(np.pi * (2 * k + 1) / (2 * _PANEL_NODES))[::-1]
    bary = _barycentric_weights(ref)
    idx = np.minimum(np.searchsorted(edges, sample, side="right") - 1, n_panels - 1)
    atoms_y, atoms_w = [], []
    m = sample.size
    for p in np.unique(idx):
        pts = sample[idx == p]
        a, b = edges[p], edges[p + 1]
        t = (2.0 * pts - (a + b)) / (b - a)
        diff = t[:, None] - ref[None, :]
        exact = np.isclose(diff, 0.0, atol=1e-15)
        diff[exact] = 1.0
        terms = bary[None, :] / diff
        basis = terms / terms.sum(axis=1, keepdims=True)
        rows = np.any(exact, axis=1)
        if np.any(rows):
            basis[rows] = exact[rows].astype(float)
        atoms_y.append(0.5 * (a + b) + 0.5 * (b - a) * ref)
        atoms_w.append(basis.sum(axis=0) / m)
    return np.concatenate(atoms_y), np.concatenate(atoms_w)


@dataclass(frozen=True, eq=False)
class YMeasure:
    """Population or empirical law of Y at noise level sigma.

    Build with :meth:`population` or :meth:`empirical`.  Equality and hashing
    are by identity so measures can key solver caches.
    """

    sigma: float
    variant: str
    sample: np.ndarray | None = None
    rule: QuadratureRule | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        _check_sigma(self.sigma)
        if self.variant == "population":
            if self.rule is None or self.rule.kind != "tensor-2d":
                raise ParameterError("population measure needs a tensor-2d rule")
        elif self.variant == "empirical":
            s = self.sample
            if s is None or s.ndim != 1 or s.size == 0:
                raise ParameterError("empirical measure needs a non-empty 1-d sample")
            if not np.all(np.isfinite(s)):
                raise ParameterError("empirical sample contains non-finite values")
        else:
            raise ParameterError(f"unknown measure variant {self.variant!r}")

    # construction -----------------------------------------------------------

    @classmethod
    def population(cls, sigma: float, n_laguerre: int = 96, n_hermite: int = 40) -> "YMeasure":
        _check_sigma(sigma)
        rule = tensor_rule(gauss_laguerre(n_laguerre), gauss_hermite_normal(n_hermite))
        return cls(sigma=float(sigma), variant="population", rule=rule)

    @classmethod
    def empirical(cls, sample: Sequence[float], sigma: float) -> "YMeasure":
        arr = np.sort(np.asarray(sample, dtype=float).ravel())
        arr.setflags(write=False)
        return cls(sigma=float(sigma), variant="empirical", sample=arr)

    @classmethod
    def from_csv(cls, path: str | Path, sigma: float) -> "YMeasure":
        """Load a one-column CSV with header ``y``."""
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["y"]:
                raise ParameterError(f"{path}: expected a single column with header 'y'")
            values = [float(row[0]) for row in reader if row]
        return cls.empirical(values, sigma)

    def to_csv(self, path: str | Path) -> None:
        if self.sample is None:
            raise ParameterError("only empirical measures can be written as samples")
        with open(path, "w", newline="") as fh:
            fh.write("y\n")
            for v in self.sample:
                fh.write(f"{v:.17g}\n")

    # queries ----------------------------------------------------------------

    @property
    def is_population(self) -> bool:
        return self.variant == "population"

    @property
    def size(self) -> int:
        return int(self.sample.size) if self.sample is not None else 0

    def expect(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        """E f(Y): tensor quadrature (population) or exact sample mean (empirical)."""
        if self.is_population:
            e, z = self.rule.nodes[:, 0], self.rule.nodes[:, 1]
            pts = e + self.sigma * z
            vals = np.asarray(f(pts), dtype=float)
            weights = self.rule.weights
        else:
            pts = self.sample
            vals = np.asarray(f(pts), dtype=float)
            weights = None
        bad = ~np.isfinite(vals)
        if np.any(bad):
            raise IntegrandError("integrand is not finite", float(pts[np.argmax(bad)]))
        if weights is None:
            return float(np.mean(vals))
        return float(np.dot(weights, vals))

    @cached_property
    def _atoms(self) -> tuple[np.ndarray, np.ndarray]:
        if self.is_population:
            return _population_atoms(self.sigma)
        s = self.sample
        if s.size <= COMPRESS_ABOVE:
            return s, np.full(s.size, 1.0 / s.size)
        return _compress_sample(s, 0.5 * self.sigma)

    def atoms(self) -> tuple[np.ndarray, np.ndarray]:
        """(y, w) pairs with sum_j w_j f(y_j) ~ E f(Y) for smooth f."""
        return self._atoms

    def second_moment(self) -> float:
        if self.is_population:
            return 2.0 + self.sigma ** 2
        return float(np.mean(self.sample ** 2))
