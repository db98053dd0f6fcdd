"""Exact moments for linear-Gaussian feedback systems.

With ``g_i = a_i M + sum_j B_ij Y_j`` and ``M ~ N(mu, s2)`` every quantity
of interest is a linear map of the independent basis ``(M, Z_1..Z_n)``:

    Y = (I - rho B)^{-1} (rho a M + Z),   g = a M + B Y,
    S = (I - rho B)^{-1} g,               D = B S.

All expectations below are read off these loadings.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .systems import LinearCoefficients

__all__ = [
    "LinearGaussianModel", "JointGaussian", "RhsTerms", "CovarianceError",
    "lg_propagate", "lg_mutual_information", "lg_rhs_terms",
]


class CovarianceError(ArithmeticError):
    pass


@dataclass(frozen=True)
class LinearGaussianModel:
    coefficients: LinearCoefficients
    message_variance: float = 1.0
    rho: float = 1.0
    message_mean: float = 0.0

    def __post_init__(self):
        if not self.message_variance > 0:
            raise ValueError("message variance must be > 0")

    @property
    def n(self) -> int:
        return self.coefficients.n

    def at(self, rho: float) -> "LinearGaussianModel":
        return LinearGaussianModel(self.coefficients, self.message_variance, rho, self.message_mean)


@dataclass(frozen=True)
class JointGaussian:
    """Law of the stacked vector ``(M, Y_1..Y_n, g_1..g_n, S_1..S_n)``.

    ``loadings`` maps the basis ``(M, Z_1..Z_n)`` (variances ``basis_var``)
    onto that vector; ``D_loadings`` and ``Z_loadings`` cover ``D`` and ``Z``.
    """
    n: int
    mean: np.ndarray
    cov: np.ndarray
    loadings: np.ndarray
    D_loadings: np.ndarray
    Z_loadings: np.ndarray
    basis_var: np.ndarray

    def rows(self, name: str) -> slice:
        n = self.n
        return {"M": slice(0, 1), "Y": slice(1, 1 + n), "g": slice(1 + n, 1 + 2 * n),
                "S": slice(1 + 2 * n, 1 + 3 * n)}[name]

    def L(self, name: str) -> np.ndarray:
        if name == "D":
            return self.D_loadings
        if name == "Z":
            return self.Z_loadings
        return self.loadings[self.rows(name)]

    def cross_cov(self, La: np.ndarray, Lb: np.ndarray) -> np.ndarray:
        return (La * self.basis_var) @ Lb.T

    def projection(self, name: str) -> np.ndarray:
        """Loadings of ``E[name | Y]`` (a linear function of ``Y``)."""
        LY = self.L("Y")
        gain = np.linalg.solve(self.cross_cov(LY, LY), self.cross_cov(LY, self.L(name))).T
        return gain @ LY

    def check(self) -> None:
        if not np.allclose(self.cov, self.cov.T, rtol=0, atol=1e-12 * max(1.0, np.trace(self.cov))):
            raise CovarianceError("covariance not symmetric")
        lo = np.linalg.eigvalsh(self.cov).min()
        if lo < -1e-10 * np.trace(self.cov):
            raise CovarianceError(f"covariance not PSD (min eigenvalue {lo:g})")


def lg_propagate(model: LinearGaussianModel) -> JointGaussian:
    n = model.n
    a, B, rho = model.coefficients.a, model.coefficients.B, model.rho
    A = np.eye(n) - rho * B                # unit lower triangular
    LM = np.zeros((1, n + 1))
    LM[0, 0] = 1.0
    LZ = np.hstack([np.zeros((n, 1)), np.eye(n)])
    LY = solve_triangular(A, rho * a[:, None] * LM + LZ, lower=True, unit_diagonal=True)
    Lg = a[:, None] * LM + B @ LY
    LS = solve_triangular(A, Lg, lower=True, unit_diagonal=True)
    LD = B @ LS
    L = np.vstack([LM, LY, Lg, LS])
    basis_var = np.concatenate([[model.message_variance], np.ones(n)])
    basis_mean = np.concatenate([[model.message_mean], np.zeros(n)])
    cov = (L * basis_var) @ L.T
    cov = 0.5 * (cov + cov.T)
    jg = JointGaussian(n, L @ basis_mean, cov, L, LD, LZ, basis_var)
    jg.check()
    return jg


def lg_mutual_information(model: LinearGaussianModel) -> float:
    """``I(M; Y_1..Y_n)`` in nats; also the directed information here."""
    jg = lg_propagate(model)
    SYY = jg.cov[jg.rows("Y"), jg.rows("Y")]
    SYM = jg.cov[jg.rows("Y"), jg.rows("M")]
    cond = SYY - SYM @ SYM.T / model.message_variance
    s1, ld1 = np.linalg.slogdet(SYY)
    s2, ld2 = np.linalg.slogdet(cond)
    if s1 <= 0 or s2 <= 0:
        raise CovarianceError("output covariance is not positive definite")
    return 0.5 * (ld1 - ld2)


@dataclass(frozen=True)
class RhsTerms:
    """Unscaled exact terms; the identity pairs them as
    ``rho*mmse_sum + rho**2*correction_sum (+ rho*cross_sum)``."""
    mmse: np.ndarray
    correction: np.ndarray
    cross_sum: float

    @property
    def mmse_sum(self) -> float:
        return float(self.mmse.sum())

    @property
    def correction_sum(self) -> float:
        return float(self.correction.sum())

    def __iter__(self):
        yield self.mmse_sum
        yield self.correction_sum


def lg_rhs_terms(model: LinearGaussianModel) -> RhsTerms:
    jg = lg_propagate(model)
    R = jg.L("g") - jg.projection("g")
    mmse = np.einsum("ik,k,ik->i", R, jg.basis_var, R)
    correction = np.einsum("ik,k,ik->i", R, jg.basis_var, jg.L("D"))
    # E[S_j E[Z_i | Y]] weighted by B_ij
    c = jg.cross_cov(jg.L("S"), jg.projection("Z"))      # (j, i)
    cross = -float(np.sum(model.coefficients.B * c.T))
    return RhsTerms(mmse, correction, cross)
