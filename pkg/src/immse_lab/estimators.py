"""Monte Carlo estimators for the information and estimation functionals.

Posterior expectations given the whole output path are self-normalized
importance sampling (SNIS) averages over prior draws, weighted by the
channel likelihood.  BPSK messages are enumerated exactly instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from . import exprdsl as dsl
from .simulate import INNER, Ensemble, path_rng
from .systems import ValidatedSpec

__all__ = [
    "LOG_2PI", "SnisEstimate", "MIEstimate", "TermEstimate", "PosteriorSummary",
    "log_likelihood", "snis_conditional", "estimate_mi_nested",
    "posterior_summary", "mmse_term", "correction_term", "cross_term",
    "g_functional", "MAX_WORK", "mi_k_doubling",
]

LOG_2PI = math.log(2.0 * math.pi)
MAX_WORK = 10 ** 13
_BLOCK_ELEMENTS = 1 << 19


@dataclass(frozen=True)
class SnisEstimate:
    value: float
    ess: float
    K: int


@dataclass(frozen=True)
class MIEstimate:
    """Mutual information in nats with outer-sample standard error."""
    value: float
    std_error: float
    N: int
    K: int
    per_path: np.ndarray = field(repr=False, default=None)


@dataclass(frozen=True)
class TermEstimate:
    """A right-hand-side term, unscaled (no powers of rho applied).

    ``per_path`` holds the per-path sum over steps so that callers can form
    correlated differences before averaging.
    """
    per_index: np.ndarray
    per_index_se: np.ndarray
    total: float
    total_se: float
    scale: float
    per_path: np.ndarray = field(repr=False)

    @property
    def scaled(self) -> float:
        return self.scale * self.total

    @property
    def scaled_se(self) -> float:
        return abs(self.scale) * self.total_se


def _mean_se(x: np.ndarray, axis=0):
    x = np.asarray(x, dtype=float)
    n = x.shape[axis]
    mean = x.mean(axis=axis)
    if n < 2:
        return mean, np.full_like(mean, np.inf) if np.ndim(mean) else math.inf
    return mean, x.std(axis=axis, ddof=1) / math.sqrt(n)


# ---------------------------------------------------------------------------
# likelihood

def _loglik(vspec: ValidatedSpec, rho: float, w: np.ndarray, y: np.ndarray,
            keep: bool = False):
    """Log-likelihood of observed ``y`` (..., n) under candidates ``w`` (..., d).

    ``g`` is always evaluated on the observed history.  With ``keep`` the
    per-step ``g`` values and residuals are returned as lists too.
    """
    origin = vspec.spec.origin
    total = 0.0
    gs, rs = [], []
    for i in range(vspec.n):
        t = None if origin is None else i * origin.delta
        gi = dsl.evaluate(vspec.g[i], vspec.w_at(w, i), y, t)
        r = y[..., i] - rho * gi
        total = total + (-0.5 * LOG_2PI - 0.5 * r * r)
        if keep:
            gs.append(np.broadcast_to(gi, np.shape(r)))
            rs.append(r)
    if keep:
        return total, gs, rs
    return total


def log_likelihood(vspec: ValidatedSpec, rho: float, w, y) -> float:
    """``sum_i log phi(y_i - rho * g_i(w_i, y_1..y_{i-1}))`` for one path."""
    w = np.asarray(w, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != vspec.n:
        raise ValueError(f"y has {y.size} entries, system has n={vspec.n}")
    return float(_loglik(vspec, rho, w, y))


# ---------------------------------------------------------------------------
# inner draws

def _inner_draws(vspec: ValidatedSpec, seed: int, indices, K: int):
    """Prior draws ``(P, K, d)`` and uniform-weight flag, or BPSK atoms ``(1, A, d)``."""
    atoms = vspec.prior.atoms(vspec.n)
    if atoms is not None:
        return atoms[None, :, :]
    draws = [vspec.prior.sample(path_rng(seed, k, INNER), (K,), vspec.n) for k in indices]
    return np.asarray(draws).reshape(len(draws), K, vspec.dim)


def _normalize(logw: np.ndarray):
    if not np.all(np.isfinite(np.max(logw, axis=-1))):
        raise FloatingPointError("all importance weights vanish")
    top = np.max(logw, axis=-1, keepdims=True)
    e = np.exp(logw - top)
    s = e.sum(axis=-1, keepdims=True)
    lam = e / s
    log_mean = top[..., 0] + np.log(s[..., 0] / logw.shape[-1])
    return lam, log_mean


# ---------------------------------------------------------------------------
# SNIS

def g_functional(vspec: ValidatedSpec, i: int) -> Callable:
    """``psi(w, y) = g_i(w_i, y)`` for a 1-based step ``i``."""
    origin = vspec.spec.origin
    t = None if origin is None else (i - 1) * origin.delta

    def psi(w, y):
        return dsl.evaluate(vspec.g[i - 1], vspec.w_at(w, i - 1), y, t)
    return psi


def snis_conditional(vspec: ValidatedSpec, rho: float, y, psi: Callable, K: int,
                     seed: int, index: int = 0) -> SnisEstimate:
    """Posterior mean of ``psi(W, Y)`` given the full output path ``y``.

    ``psi`` receives candidate messages of shape (K, d) and ``y`` of shape
    (1, n) and must broadcast to (K,).  BPSK priors are enumerated exactly,
    ignoring ``K``.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    y = np.asarray(y, dtype=float).reshape(1, -1)
    cand = _inner_draws(vspec, seed, [index], K)[0]
    logw = np.broadcast_to(_loglik(vspec, rho, cand, y), cand.shape[:1])
    lam, _ = _normalize(logw)
    vals = np.broadcast_to(np.asarray(psi(cand, y), dtype=float), lam.shape)
    if vspec.prior.atoms(vspec.n) is not None:
        ess = float(lam.size)
    else:
        ess = float(1.0 / np.sum(lam * lam))
    # ratio of sums over the same weights: psi == 1 gives exactly 1.0
    e = np.exp(logw - np.max(logw))
    return SnisEstimate(float(np.sum(e * vals) / np.sum(e)), ess, int(lam.size))


# ---------------------------------------------------------------------------
# block posterior computations

@dataclass(frozen=True)
class PosteriorSummary:
    """Per-path posterior quantities from one pass over shared inner draws.

    ``g_hat``/``g2_hat`` are (N, n); ``log_marginal`` and ``ess`` are (N,);
    ``cross`` is ``sum_{i,j} S_j * E[(Y_i - rho g_i) dg_i/dy_j | Y]`` per path
    (None unless requested).
    """
    g_hat: np.ndarray
    g2_hat: np.ndarray
    log_marginal: np.ndarray
    log_true: np.ndarray
    ess: np.ndarray
    cross: np.ndarray | None
    K: int


def _factorized(vspec: ValidatedSpec):
    """``(c, h)`` when every ``g_i = c_i * h(w)`` for one message-only ``h``."""
    if vspec.dim != 1 or vspec.has_feedback:
        return None
    base, coefs = None, []
    for g in vspec.g:
        c, h = 1.0, g
        if isinstance(g, dsl.Mul) and isinstance(g.left, dsl.Const):
            c, h = g.left.value, g.right
        if dsl.variables(h) - {"w"}:
            return None
        if base is None:
            base = h
        elif h != base:
            return None
        coefs.append(c)
    return np.asarray(coefs), base


def _block_factorized(vspec, rho, fac, cand, yb, w_true):
    c, h = fac
    n = vspec.n
    sy = yb @ c
    yy = np.einsum("ij,ij->i", yb, yb)
    cc = float(c @ c)
    const = -0.5 * n * LOG_2PI

    def ll(hv, sy_, yy_):
        return const - 0.5 * yy_ + rho * hv * sy_ - 0.5 * rho * rho * cc * hv * hv

    hc = np.broadcast_to(dsl.evaluate(h, cand[..., 0]), cand.shape[:2])
    ht = np.broadcast_to(dsl.evaluate(h, w_true[:, 0]), yb.shape[:1])
    logw = ll(hc, sy[:, None], yy[:, None])
    log_true = ll(ht, sy, yy)
    lam, log_marg = _normalize(np.broadcast_to(logw, (yb.shape[0], cand.shape[1])))
    h1 = np.sum(lam * hc, axis=1)
    h2 = np.sum(lam * hc * hc, axis=1)
    return lam, log_marg, log_true, h1[:, None] * c, h2[:, None] * (c * c)


def posterior_summary(vspec: ValidatedSpec, rho: float, y: np.ndarray, w_true: np.ndarray,
                      K: int, seed: int, S: np.ndarray | None = None,
                      offset: int = 0) -> PosteriorSummary:
    """Posterior moments for every path in ``y`` (N, n).

    Path ``k`` draws its inner samples from stream ``(seed, offset + k)``,
    so the same path sees the same draws at every ``rho``.  With ``S`` the
    cross-term statistic is accumulated as well, centred by its realized
    counterpart ``Z_i * dg_i/dy_j`` (which has mean zero).
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    N, n = y.shape
    if N * max(K, 1) * n > MAX_WORK:
        raise OverflowError(f"N*K*n = {N * K * n} exceeds the work guard")
    atoms = vspec.prior.atoms(n)
    k_eff = K if atoms is None else atoms.shape[0]
    fac = _factorized(vspec)
    P = max(1, _BLOCK_ELEMENTS // max(1, k_eff * (1 if fac else n)))
    g_hat = np.empty((N, n))
    g2_hat = np.empty((N, n))
    log_marg = np.empty(N)
    log_true = np.empty(N)
    ess = np.empty(N)
    cross = np.zeros(N) if S is not None else None
    origin = vspec.spec.origin
    for lo in range(0, N, P):
        hi = min(N, lo + P)
        yb = y[lo:hi]
        cand = _inner_draws(vspec, seed, range(offset + lo, offset + hi), K)
        if fac is not None:
            lam, log_marg[lo:hi], log_true[lo:hi], g_hat[lo:hi], g2_hat[lo:hi] = \
                _block_factorized(vspec, rho, fac, cand, yb, w_true[lo:hi])
            ess[lo:hi] = k_eff if atoms is not None else 1.0 / np.sum(lam * lam, axis=1)
            continue
        y3 = yb[:, None, :]
        logw, gs, rs = _loglik(vspec, rho, cand, y3, keep=True)
        logw = np.broadcast_to(logw, (hi - lo, cand.shape[1]))
        lam, log_marg[lo:hi] = _normalize(logw)
        wt = w_true[lo:hi][:, None, :]
        lt, _, rs_true = _loglik(vspec, rho, wt, y3, keep=True)
        log_true[lo:hi] = lt[:, 0]
        ess[lo:hi] = k_eff if atoms is not None else 1.0 / np.sum(lam * lam, axis=1)
        for i in range(n):
            gi = gs[i]
            g_hat[lo:hi, i] = np.sum(lam * gi, axis=1)
            g2_hat[lo:hi, i] = np.sum(lam * gi * gi, axis=1)
            if S is not None and vspec.partials[i]:
                t = None if origin is None else i * origin.delta
                wi = vspec.w_at(cand, i)
                wti = vspec.w_at(wt, i)
                lr = lam * rs[i]
                zi = rs_true[i][:, 0]
                acc = np.zeros(hi - lo)
                for j, d in vspec.partials[i].items():
                    dj = dsl.evaluate(d, wi, y3, t)
                    dj_true = np.broadcast_to(dsl.evaluate(d, wti, y3, t), (hi - lo, 1))[:, 0]
                    acc += S[lo:hi, j - 1] * (np.sum(lr * dj, axis=1) - zi * dj_true)
                cross[lo:hi] += acc
    return PosteriorSummary(g_hat, g2_hat, log_marg, log_true, ess, cross, k_eff)


# ---------------------------------------------------------------------------
# mutual information

def estimate_mi_nested(vspec: ValidatedSpec, rho: float, N: int, K: int, seed: int,
                       ensemble: Ensemble | None = None) -> MIEstimate:
    """Nested Monte Carlo estimate of ``I(W; Y)`` in nats.

    Each outer path contributes ``log f(Y|W) - log mean_k f(Y|w_k)`` with
    ``w_k`` fresh prior draws from the path's inner stream.  The result is
    biased upward by O(1/K) for sampled priors; BPSK priors are exact in
    the inner step.
    """
    from .simulate import sample_ensemble

    if N < 1 or K < 1:
        raise ValueError("N and K must be >= 1")
    if N * K > MAX_WORK:
        raise OverflowError("N*K exceeds the work guard")
    ens = ensemble if ensemble is not None else sample_ensemble(vspec, rho, N, seed)
    post = posterior_summary(vspec, rho, ens.y, ens.w, K, seed)
    per_path = post.log_true - post.log_marginal
    value, se = _mean_se(per_path)
    return MIEstimate(float(value), float(se), ens.N, post.K, per_path)


def mi_k_doubling(vspec: ValidatedSpec, rho: float, N: int, K: int, seed: int,
                  levels: int = 3) -> tuple[list[MIEstimate], bool]:
    """Estimates at ``K, 2K, 4K, ...`` on one outer ensemble.

    The inner log-mean-exp makes the estimate biased upward by O(1/K); the
    flag reports whether the sequence decreases, which is the condition
    for trusting the largest-K value.
    """
    from .simulate import sample_ensemble

    ens = sample_ensemble(vspec, rho, N, seed)
    out = [estimate_mi_nested(vspec, rho, N, K * 2 ** k, seed, ensemble=ens) for k in range(levels)]
    values = [e.value for e in out]
    return out, all(b <= a for a, b in zip(values, values[1:]))


# ---------------------------------------------------------------------------
# right-hand-side terms

def _term(per_step: np.ndarray, scale: float) -> TermEstimate:
    per_index, per_index_se = _mean_se(per_step, axis=0)
    per_path = per_step.sum(axis=1)
    total, total_se = _mean_se(per_path)
    return TermEstimate(np.asarray(per_index), np.asarray(per_index_se), float(total),
                        float(total_se), float(scale), per_path)


def mmse_term(vspec: ValidatedSpec, rho: float, ensemble: Ensemble, K: int, seed: int,
              form: str = "residual", posterior: PosteriorSummary | None = None) -> TermEstimate:
    """``sum_i E[(g_i - E[g_i | Y_1..Y_n])^2]`` (scale ``rho``).

    ``form='residual'`` averages squared residuals of the SNIS smoother;
    ``form='posterior'`` averages the posterior variance instead, which has
    the same expectation and far lower variance.
    """
    _check_rho(ensemble, rho)
    post = posterior or posterior_summary(vspec, rho, ensemble.y, ensemble.w, K, seed)
    if form == "residual":
        per_step = (ensemble.g - post.g_hat) ** 2
    elif form == "posterior":
        # weighted-variance correction removes the leading O(1/ESS) bias
        var = np.maximum(post.g2_hat - post.g_hat ** 2, 0.0)
        if vspec.prior.atoms(vspec.n) is None:
            inv_ess = 1.0 / post.ess
            var = np.where((post.ess > 1.0)[:, None], var / (1.0 - inv_ess)[:, None], var)
        per_step = var
    else:
        raise ValueError(f"unknown mmse form {form!r}")
    return _term(per_step, rho)


def correction_term(vspec: ValidatedSpec, rho: float, ensemble: Ensemble, K: int, seed: int,
                    posterior: PosteriorSummary | None = None) -> TermEstimate:
    """``sum_i E[(g_i - E[g_i | Y]) * D_i]`` with pathwise ``D_i = dg_i/drho`` (scale ``rho**2``)."""
    _check_rho(ensemble, rho)
    if not vspec.has_feedback:
        return _term(np.zeros_like(ensemble.D), rho ** 2)
    post = posterior or posterior_summary(vspec, rho, ensemble.y, ensemble.w, K, seed)
    return _term((ensemble.g - post.g_hat) * ensemble.D, rho ** 2)


def cross_term(vspec: ValidatedSpec, rho: float, ensemble: Ensemble, K: int, seed: int,
               posterior: PosteriorSummary | None = None) -> TermEstimate:
    """``-sum_{i,j} E[S_j * E[(Y_i - rho g_i) dg_i/dy_j | Y]]`` (scale ``rho``).

    This is the piece of ``dI/drho`` that arises because the sensitivity
    ``S_j`` of the realized path is not a function of ``Y`` alone.  It is
    zero without feedback and cancels the correction term whenever
    ``g_i`` splits into a message part plus an output part.
    """
    _check_rho(ensemble, rho)
    if not vspec.has_feedback:
        return _term(np.zeros((ensemble.N, 1)), rho)
    post = posterior
    if post is None or post.cross is None:
        post = posterior_summary(vspec, rho, ensemble.y, ensemble.w, K, seed, S=ensemble.S)
    return _term(-post.cross[:, None], rho)


def _check_rho(ensemble: Ensemble, rho: float) -> None:
    if ensemble.rho != float(rho):
        raise ValueError(f"ensemble was generated at rho={ensemble.rho}, not {rho}")
