"""Quadrature and scalar density functionals (entropy, Fisher information).

Densities here are laws of ``Y = X + sqrt(t) Z``: a Gaussian mixture in
closed form, or a set of prior atoms smoothed by a Gaussian kernel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.special import entr, logsumexp

from .systems import BpskScalar, GaussianMixtureScalar, GaussianScalar

__all__ = [
    "GaussHermite", "Trapezoid", "QuadratureError", "quadrature_integrate",
    "ScalarDensity", "smoothed_density", "posterior_mean",
    "scalar_entropy", "scalar_fisher", "fisher_via_posterior",
    "entropy_rate_via_posterior",
]


class QuadratureError(ArithmeticError):
    pass


@dataclass(frozen=True)
class GaussHermite:
    """Integrates against the standard normal density."""
    nodes: int


@dataclass(frozen=True)
class Trapezoid:
    lo: float
    hi: float
    points: int


def quadrature_integrate(f: Callable, rule) -> float:
    if isinstance(rule, GaussHermite):
        if rule.nodes < 1:
            raise ValueError("need at least one node")
        u, wts = hermgauss(rule.nodes)
        x = math.sqrt(2.0) * u
        vals = np.asarray(f(x), dtype=float) * np.ones_like(x)
        if not np.all(np.isfinite(vals)):
            raise QuadratureError("integrand is not finite at a node")
        return float(np.dot(wts, vals) / math.sqrt(math.pi))
    if isinstance(rule, Trapezoid):
        if rule.points < 2:
            raise ValueError("trapezoid needs at least two points")
        x = np.linspace(rule.lo, rule.hi, rule.points)
        vals = np.asarray(f(x), dtype=float) * np.ones_like(x)
        if not np.all(np.isfinite(vals)):
            raise QuadratureError("integrand is not finite at a node")
        return float(np.trapezoid(vals, x))
    raise TypeError(f"unknown rule {rule!r}")


# ---------------------------------------------------------------------------
# densities

@dataclass(frozen=True)
class ScalarDensity:
    """Either ``kind='mixture'`` (weights, means, variances) or
    ``kind='quadrature'`` (atoms at ``means`` with masses ``weights``,
    smoothed by variance ``t``)."""
    kind: str
    weights: tuple
    means: tuple
    variances: tuple = ()
    t: float = 0.0

    def __post_init__(self):
        if self.kind not in ("mixture", "quadrature"):
            raise ValueError(f"unknown density kind {self.kind!r}")
        if self.kind == "quadrature":
            if not self.t > 0:
                raise ValueError("smoothing variance t must be > 0")
            object.__setattr__(self, "variances", tuple([self.t] * len(self.means)))
        if any(v <= 0 for v in self.variances):
            raise ValueError("variances must be > 0")

    @classmethod
    def mixture(cls, weights, means, variances) -> "ScalarDensity":
        return cls("mixture", tuple(map(float, weights)), tuple(map(float, means)),
                   tuple(map(float, variances)))

    @classmethod
    def quadrature(cls, nodes, masses, t: float) -> "ScalarDensity":
        return cls("quadrature", tuple(map(float, masses)), tuple(map(float, nodes)), t=float(t))

    def _log_parts(self, y):
        y = np.asarray(y, dtype=float)[..., None]
        mu = np.asarray(self.means)
        v = np.asarray(self.variances)
        lw = np.log(np.asarray(self.weights))
        return lw - 0.5 * np.log(2 * np.pi * v) - 0.5 * (y - mu) ** 2 / v, (y - mu) / v

    def logpdf(self, y) -> np.ndarray:
        parts, _ = self._log_parts(y)
        return logsumexp(parts, axis=-1)

    def pdf(self, y) -> np.ndarray:
        return np.exp(self.logpdf(y))

    def score(self, y) -> np.ndarray:
        """``f'(y) / f(y)``, computed from responsibilities."""
        parts, dev = self._log_parts(y)
        r = np.exp(parts - logsumexp(parts, axis=-1, keepdims=True))
        return -np.sum(r * dev, axis=-1)

    def dpdf(self, y) -> np.ndarray:
        return self.pdf(y) * self.score(y)

    def bounds(self) -> tuple[float, float]:
        sd = math.sqrt(max(self.variances))
        return min(self.means) - 10 * sd, max(self.means) + 10 * sd


def smoothed_density(prior, t: float) -> ScalarDensity:
    """Law of ``X + sqrt(t) Z`` for a scalar prior on ``X``."""
    if isinstance(prior, BpskScalar):
        return ScalarDensity.quadrature((-1.0, 1.0), (0.5, 0.5), t)
    if isinstance(prior, (GaussianScalar, GaussianMixtureScalar)):
        mix = prior.as_mixture()
        return ScalarDensity.mixture(mix.weights, mix.means, np.add(mix.variances, t))
    raise TypeError(f"unsupported prior {prior!r}")


def posterior_mean(prior, t: float, y) -> np.ndarray:
    """``E[X | X + sqrt(t) Z = y]`` computed from the prior components."""
    y = np.asarray(y, dtype=float)[..., None]
    if isinstance(prior, BpskScalar):
        return np.tanh(y[..., 0] / t)
    mix = prior.as_mixture()
    mu = np.asarray(mix.means)
    v = np.asarray(mix.variances)
    tot = v + t
    logr = np.log(mix.weights) - 0.5 * np.log(tot) - 0.5 * (y - mu) ** 2 / tot
    r = np.exp(logr - logsumexp(logr, axis=-1, keepdims=True))
    return np.sum(r * (mu + v / tot * (y - mu)), axis=-1)


# ---------------------------------------------------------------------------
# adaptive trapezoid on a fixed window

def _adaptive(integrand: Callable, lo: float, hi: float, tol: float,
              start: int = 64, max_doublings: int = 16) -> tuple[float, np.ndarray, float]:
    n = start
    x = np.linspace(lo, hi, n + 1)
    prev = np.trapezoid(integrand(x), x)
    for _ in range(max_doublings):
        n *= 2
        x = np.linspace(lo, hi, n + 1)
        cur = np.trapezoid(integrand(x), x)
        if abs(cur - prev) < tol:
            return float(cur), x, (hi - lo) / n
        prev = cur
    raise QuadratureError("adaptive trapezoid did not converge")


def _check_normalized(d: ScalarDensity, tol: float) -> tuple[float, float]:
    lo, hi = d.bounds()
    mass, _, _ = _adaptive(d.pdf, lo, hi, tol)
    if abs(mass - 1.0) > 1e-6:
        raise QuadratureError(f"density integrates to {mass:.8f} on its window")
    return lo, hi


def scalar_entropy(d: ScalarDensity, tol: float = 1e-8) -> float:
    """Differential entropy ``-int f log f`` in nats."""
    lo, hi = _check_normalized(d, tol)
    val, _, _ = _adaptive(lambda y: entr(d.pdf(y)), lo, hi, tol)
    return val


def scalar_fisher(d: ScalarDensity, tol: float = 1e-8) -> float:
    """Fisher information ``int f'^2 / f``."""
    lo, hi = _check_normalized(d, tol)
    val, _, _ = _adaptive(lambda y: d.pdf(y) * d.score(y) ** 2, lo, hi, tol)
    return val


def _second_moment(prior) -> float:
    return float(prior.second_moment)


def fisher_via_posterior(prior, t: float, tol: float = 1e-8) -> float:
    """``(E[E[X|Y]^2] + E[Y^2] - 2 E[XY]) / t^2`` for ``Y = X + sqrt(t) Z``."""
    d = smoothed_density(prior, t)
    lo, hi = _check_normalized(d, tol)
    e2, _, _ = _adaptive(lambda y: d.pdf(y) * posterior_mean(prior, t, y) ** 2, lo, hi, tol)
    ex2 = _second_moment(prior)
    return (e2 + (ex2 + t) - 2.0 * ex2) / t ** 2


def entropy_rate_via_posterior(prior, t: float, tol: float = 1e-8) -> float:
    """``dH/dt`` as ``(E[E[X|Y]^2] - E[X^2]) / (2 t^2) + 1 / (2 t)``."""
    d = smoothed_density(prior, t)
    lo, hi = _check_normalized(d, tol)
    e2, _, _ = _adaptive(lambda y: d.pdf(y) * posterior_mean(prior, t, y) ** 2, lo, hi, tol)
    return (e2 - _second_moment(prior)) / (2.0 * t ** 2) + 1.0 / (2.0 * t)
