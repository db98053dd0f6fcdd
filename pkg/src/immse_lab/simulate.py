"""Path sampling with frozen noise and forward pathwise sensitivities.

Every random quantity attached to path ``k`` comes from a Philox stream keyed
by ``(seed, purpose)`` with the path index in the high counter words, so a
path is a pure function of ``(seed, k)`` and is identical at every ``rho``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import exprdsl as dsl
from .systems import ValidatedSpec

__all__ = [
    "OUTER", "INNER", "path_rng", "NoiseDraw", "PathSample", "Ensemble",
    "draw_noise", "propagate", "sample_path", "sample_ensemble",
]

OUTER = 0
INNER = 1
_MASK64 = (1 << 64) - 1


def path_rng(seed: int, index: int, purpose: int = OUTER) -> np.random.Generator:
    """Counter-based generator for one path and one purpose."""
    key = (int(seed) & _MASK64) | (int(purpose) << 64)
    return np.random.Generator(np.random.Philox(key=key, counter=int(index) << 128))


@dataclass(frozen=True)
class NoiseDraw:
    w: np.ndarray
    z: np.ndarray


@dataclass(frozen=True)
class PathSample:
    w: np.ndarray
    z: np.ndarray
    y: np.ndarray
    g: np.ndarray
    S: np.ndarray
    D: np.ndarray
    rho: float


def draw_noise(vspec: ValidatedSpec, seed: int, indices: Iterable[int]) -> NoiseDraw:
    """Stacked noise for the given path indices: ``w`` (N, d), ``z`` (N, n)."""
    ws, zs = [], []
    for k in indices:
        rng = path_rng(seed, k, OUTER)
        ws.append(vspec.prior.sample(rng, (), vspec.n))
        zs.append(rng.standard_normal(vspec.n))
    d = vspec.dim
    if not ws:
        return NoiseDraw(np.zeros((0, d)), np.zeros((0, vspec.n)))
    return NoiseDraw(np.asarray(ws).reshape(-1, d), np.asarray(zs).reshape(-1, vspec.n))


def propagate(vspec: ValidatedSpec, rho: float, w: np.ndarray, z: np.ndarray):
    """Forward recursion over a batch of paths.

    Returns ``(y, g, S, D)``, each of shape ``z.shape``.  ``D_i`` sums
    ``dg_i/dy_j * S_j`` over ``j < i`` and ``S_i = g_i + rho * D_i``, i.e.
    the chain rule with ``(w, z)`` frozen.
    """
    z = np.asarray(z, dtype=float)
    w = np.asarray(w, dtype=float)
    y = np.zeros_like(z)
    g = np.zeros_like(z)
    S = np.zeros_like(z)
    D = np.zeros_like(z)
    t_of = _time_of(vspec)
    for i in range(vspec.n):
        wi = vspec.w_at(w, i)
        t = t_of(i)
        g[..., i] = dsl.evaluate(vspec.g[i], wi, y, t)
        y[..., i] = rho * g[..., i] + z[..., i]
        partials = vspec.partials[i]
        if partials:
            acc = np.zeros(z.shape[:-1])
            if _uniform(partials):
                # all j share one expression (discretized continuous systems)
                d = next(iter(partials.values()))
                acc = acc + dsl.evaluate(d, wi, y, t) * S[..., :i].sum(axis=-1)
            else:
                for j, d in partials.items():
                    acc = acc + dsl.evaluate(d, wi, y, t) * S[..., j - 1]
            D[..., i] = acc
        S[..., i] = g[..., i] + rho * D[..., i]
    return y, g, S, D


def _uniform(partials: dict) -> bool:
    if len(partials) < 2:
        return False
    vals = iter(partials.values())
    first = next(vals)
    return all(v is first for v in vals) and sorted(partials) == list(range(1, len(partials) + 1))


def _time_of(vspec: ValidatedSpec):
    origin = vspec.spec.origin
    if origin is None:
        return lambda i: None
    return lambda i: i * origin.delta


def sample_path(vspec: ValidatedSpec, rho: float, noise: NoiseDraw) -> PathSample:
    """One path for a single noise draw (``w`` of shape (d,), ``z`` of shape (n,))."""
    w = np.asarray(noise.w, dtype=float).reshape(1, -1)
    z = np.asarray(noise.z, dtype=float).reshape(1, -1)
    if z.shape[1] != vspec.n:
        raise ValueError(f"noise has {z.shape[1]} steps, system has {vspec.n}")
    if w.shape[1] != vspec.dim:
        raise ValueError(f"message draw has dimension {w.shape[1]}, expected {vspec.dim}")
    y, g, S, D = propagate(vspec, rho, w, z)
    return PathSample(w[0], z[0], y[0], g[0], S[0], D[0], float(rho))


@dataclass(frozen=True)
class Ensemble:
    """``N`` paths at one ``rho``; arrays are stacked along axis 0."""
    vspec: ValidatedSpec
    rho: float
    seed: int
    w: np.ndarray
    z: np.ndarray
    y: np.ndarray
    g: np.ndarray
    S: np.ndarray
    D: np.ndarray

    @property
    def N(self) -> int:
        return self.z.shape[0]

    def path(self, k: int) -> PathSample:
        return PathSample(self.w[k], self.z[k], self.y[k], self.g[k], self.S[k], self.D[k], self.rho)

    def to_csv(self, path) -> None:
        """Long-format dump: path_index, i, w, z, g, y, S, D."""
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["path_index", "i", "w", "z", "g", "y", "S", "D"])
            for k in range(self.N):
                for i in range(self.vspec.n):
                    wi = self.vspec.w_at(self.w[k], i)
                    out.writerow([k, i + 1] + [repr(float(v)) for v in (
                        wi, self.z[k, i], self.g[k, i], self.y[k, i], self.S[k, i], self.D[k, i])])


def sample_ensemble(vspec: ValidatedSpec, rho: float, N: int, seed: int) -> Ensemble:
    """``N`` paths; path ``k`` depends only on ``(seed, k, rho, spec)``."""
    if N < 1:
        raise ValueError("N must be >= 1")
    noise = draw_noise(vspec, seed, range(N))
    y, g, S, D = propagate(vspec, rho, noise.w, noise.z)
    return Ensemble(vspec, float(rho), int(seed), noise.w, noise.z, y, g, S, D)
