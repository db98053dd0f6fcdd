"""System specifications: priors, discrete and continuous channels.

A discrete system is ``Y_i = rho * g_i(W_i, Y_1..Y_{i-1}) + Z_i`` with
``Z_i`` i.i.d. standard normal.  A continuous system
``dY = rho * g(t, W, Y(t-)) dt + dB`` is reduced to a discrete one by an
Euler-Maruyama step on scaled increments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import exprdsl as dsl
from .exprdsl import Expr

__all__ = [
    "GaussianScalar", "BpskScalar", "GaussianMixtureScalar", "IidPerStep",
    "MessagePrior", "DiscreteSystemSpec", "ContinuousSystemSpec",
    "ContinuousOrigin", "LinearCoefficients", "ValidatedSpec",
    "SpecValidationError", "validate_spec", "discretize_continuous",
    "linear_feedback_spec", "linear_coefficients",
]


class SpecValidationError(ValueError):
    """Carries every violated invariant in ``errors``."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# ---------------------------------------------------------------------------
# priors

@dataclass(frozen=True)
class GaussianScalar:
    mean: float = 0.0
    variance: float = 1.0

    def check(self) -> list[str]:
        return [] if self.variance > 0 else ["Gaussian variance must be > 0"]

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return self.mean + math.sqrt(self.variance) * rng.standard_normal(size)

    @property
    def second_moment(self) -> float:
        return self.variance + self.mean ** 2

    def as_mixture(self) -> "GaussianMixtureScalar":
        return GaussianMixtureScalar((1.0,), (self.mean,), (self.variance,))


@dataclass(frozen=True)
class BpskScalar:
    """Equiprobable +-1."""

    def check(self) -> list[str]:
        return []

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return np.where(rng.random(size) < 0.5, -1.0, 1.0)

    @property
    def mean(self) -> float:
        return 0.0

    @property
    def variance(self) -> float:
        return 1.0

    @property
    def second_moment(self) -> float:
        return 1.0

    atoms = (-1.0, 1.0)


@dataclass(frozen=True)
class GaussianMixtureScalar:
    weights: tuple
    means: tuple
    variances: tuple

    def __post_init__(self):
        for name in ("weights", "means", "variances"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))

    def check(self) -> list[str]:
        errs = []
        if not (len(self.weights) == len(self.means) == len(self.variances)) or not self.weights:
            errs.append("mixture weights/means/variances must have equal nonzero length")
        if any(v <= 0 for v in self.variances):
            errs.append("mixture variances must be > 0")
        if any(p <= 0 for p in self.weights):
            errs.append("mixture weights must be positive")
        if abs(math.fsum(self.weights) - 1.0) > 1e-12:
            errs.append("mixture weights must sum to 1")
        return errs

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=size, p=np.asarray(self.weights))
        mu = np.asarray(self.means)[comp]
        sd = np.sqrt(np.asarray(self.variances))[comp]
        return mu + sd * rng.standard_normal(size)

    @property
    def mean(self) -> float:
        return float(np.dot(self.weights, self.means))

    @property
    def second_moment(self) -> float:
        return float(np.dot(self.weights, np.add(self.variances, np.square(self.means))))

    @property
    def variance(self) -> float:
        return self.second_moment - self.mean ** 2

    def as_mixture(self) -> "GaussianMixtureScalar":
        return self


Component = GaussianScalar | BpskScalar | GaussianMixtureScalar


@dataclass(frozen=True)
class IidPerStep:
    component: Component
    n: int


@dataclass(frozen=True)
class MessagePrior:
    """Prior on the channel message.

    ``shared=True`` draws one scalar ``W = M`` used by every step (feedback
    reading); ``shared=False`` draws an independent ``W_i`` per step.
    """
    kind: Component | IidPerStep
    shared: bool = True

    def __post_init__(self):
        if isinstance(self.kind, IidPerStep) and self.shared:
            object.__setattr__(self, "shared", False)

    @property
    def component(self) -> Component:
        return self.kind.component if isinstance(self.kind, IidPerStep) else self.kind

    def check(self, n: int) -> list[str]:
        errs = list(self.component.check())
        if isinstance(self.kind, IidPerStep) and self.kind.n != n:
            errs.append(f"prior IidPerStep has n={self.kind.n} but system has n={n}")
        return errs

    def dim(self, n: int) -> int:
        return 1 if self.shared else n

    def sample(self, rng: np.random.Generator, size, n: int) -> np.ndarray:
        """Draws of shape ``(*size, dim)``."""
        size = (size,) if np.isscalar(size) else tuple(size)
        return self.component.sample(rng, size + (self.dim(n),))

    def atoms(self, n: int) -> np.ndarray | None:
        """Support points (uniform weights) for BPSK priors, else None."""
        if not isinstance(self.component, BpskScalar):
            return None
        d = self.dim(n)
        if d > 16:
            return None
        grid = np.array(np.meshgrid(*([[-1.0, 1.0]] * d), indexing="ij"))
        return grid.reshape(d, -1).T.copy()


# ---------------------------------------------------------------------------
# systems

@dataclass(frozen=True)
class ContinuousOrigin:
    """Records how a discrete spec was obtained from a continuous one.

    Path-space output is ``Y(t_k) = sqrt(delta) * (y_1 + ... + y_k)``.
    """
    source: "ContinuousSystemSpec"
    m: int
    delta: float

    @property
    def sqrt_delta(self) -> float:
        return math.sqrt(self.delta)

    def path(self, y: np.ndarray) -> np.ndarray:
        return self.sqrt_delta * np.cumsum(y, axis=-1)


@dataclass(frozen=True)
class DiscreteSystemSpec:
    n: int
    prior: MessagePrior
    g: tuple
    label: str = ""
    origin: ContinuousOrigin | None = None

    def __post_init__(self):
        g = tuple(dsl.parse_expr(e) if isinstance(e, str) else e for e in self.g)
        object.__setattr__(self, "g", g)


@dataclass(frozen=True)
class ContinuousSystemSpec:
    T: float
    prior: MessagePrior
    g_ct: Expr
    label: str = ""

    def __post_init__(self):
        if isinstance(self.g_ct, str):
            object.__setattr__(self, "g_ct", dsl.parse_expr(self.g_ct))


@dataclass(frozen=True)
class LinearCoefficients:
    """``g_i = a_i * w + sum_j B_ij y_j`` with ``B`` strictly lower triangular."""
    a: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).reshape(-1)
        B = np.asarray(self.B, dtype=float).reshape(a.size, a.size)
        if np.any(np.triu(B) != 0):
            raise SpecValidationError(["B must be strictly lower triangular"])
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.a.size


@dataclass(frozen=True)
class ValidatedSpec:
    """A checked spec with per-step y-references and symbolic y-partials.

    ``partials[i]`` maps a 1-based ``j`` to the expression for
    ``d g_{i+1} / d y[j]`` (``i`` is 0-based here).
    """
    spec: DiscreteSystemSpec
    y_refs: tuple
    partials: tuple = field(repr=False)

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def prior(self) -> MessagePrior:
        return self.spec.prior

    @property
    def g(self) -> tuple:
        return self.spec.g

    @property
    def has_feedback(self) -> bool:
        return any(self.y_refs)

    @property
    def dim(self) -> int:
        return self.spec.prior.dim(self.spec.n)

    def w_at(self, w: np.ndarray, i: int) -> np.ndarray:
        """Message value seen by step ``i`` (0-based); ``w`` has trailing dim."""
        return w[..., 0] if self.dim == 1 else w[..., i]


def validate_spec(spec: DiscreteSystemSpec) -> ValidatedSpec:
    """Check invariants and precompute ``d g_i / d y_j``.

    Raises
    ------
    SpecValidationError
        Listing every causality or arity violation found.
    """
    errs: list[str] = []
    if spec.n < 1:
        errs.append("n must be >= 1")
    if len(spec.g) != spec.n:
        errs.append(f"expected {spec.n} channel expressions, got {len(spec.g)}")
    errs += spec.prior.check(spec.n)
    y_refs = []
    for i, g in enumerate(spec.g, start=1):
        if spec.origin is not None:
            refs = tuple(range(1, i))
            y_refs.append(refs if _ct_has_y(spec.origin) else ())
            continue
        refs = tuple(dsl.y_indices(g))
        bad = [j for j in refs if j >= i]
        if bad:
            errs.append(f"causality violation: g{i} references y[{bad[0]}]")
        y_refs.append(refs)
    if errs:
        raise SpecValidationError(errs)

    if spec.origin is not None:
        partials = _ct_partials(spec.origin)
    else:
        partials = tuple(
            {j: dsl.diff_expr(g, ("y", j)) for j in refs}
            for g, refs in zip(spec.g, y_refs)
        )
    # drop identically-zero partials so no-feedback recursions stay exactly zero
    partials = tuple({j: d for j, d in p.items() if not dsl.is_zero(d)} for p in partials)
    return ValidatedSpec(spec, tuple(y_refs), partials)


def _ct_has_y(origin: ContinuousOrigin) -> bool:
    return bool(dsl.y_indices(origin.source.g_ct))


def _ct_partials(origin: ContinuousOrigin) -> tuple:
    # chain rule through the running sum: d g_i / d y_j = delta * dg/dY at (t_{i-1}, w, Y(t_{i-1}))
    cts = origin.source
    if not _ct_has_y(origin):
        return tuple({} for _ in range(origin.m))
    dgdy = dsl.diff_expr(cts.g_ct, ("y", 1))
    out = []
    states = _running_states(origin)
    for i in range(origin.m):
        d = dsl.mul(dsl.Const(origin.delta), dsl.substitute(
            dgdy, {"t": dsl.Const(i * origin.delta), ("y", 1): states[i]}))
        out.append({j: d for j in range(1, i + 1)})
    return tuple(out)


def _running_states(origin: ContinuousOrigin) -> list:
    # Y(t_{i}) as sqrt(delta) * (y[1] + ... + y[i]); shared prefixes keep this O(m)
    sd = dsl.Const(origin.sqrt_delta)
    states = [dsl.Const(0.0)]
    acc = None
    for j in range(1, origin.m):
        acc = dsl.Y(j) if acc is None else dsl.Add(acc, dsl.Y(j))
        states.append(dsl.Mul(sd, acc))
    return states


def discretize_continuous(cts: ContinuousSystemSpec, m: int) -> DiscreteSystemSpec:
    """Euler-Maruyama reduction to ``m`` scaled-increment steps.

    Step ``i`` uses ``g_i = sqrt(delta) * g(t_{i-1}, w, Y(t_{i-1}))`` with
    ``delta = T / m`` and ``Y(t_{i-1})`` rebuilt from earlier increments, so
    ``y_i = (Y(t_i) - Y(t_{i-1})) / sqrt(delta)``.
    """
    if m < 1:
        raise SpecValidationError(["step count m must be >= 1"])
    if not cts.T > 0:
        raise SpecValidationError(["horizon T must be > 0"])
    bad = [j for j in dsl.y_indices(cts.g_ct) if j != 1]
    if bad:
        raise SpecValidationError([f"continuous g may only reference y[1], got y[{bad[0]}]"])
    if not cts.prior.shared:
        raise SpecValidationError(["continuous systems require a shared scalar message"])
    origin = ContinuousOrigin(cts, m, cts.T / m)
    sd = dsl.Const(origin.sqrt_delta)
    states = _running_states(origin)
    g = tuple(
        dsl.Mul(sd, dsl.substitute(cts.g_ct, {"t": dsl.Const(i * origin.delta), ("y", 1): states[i]}))
        for i in range(m)
    )
    return DiscreteSystemSpec(m, cts.prior, g, cts.label, origin)


# ---------------------------------------------------------------------------
# linear-Gaussian subfamily

def linear_feedback_spec(coef: LinearCoefficients, variance: float = 1.0,
                         label: str = "") -> DiscreteSystemSpec:
    """Build ``g_i = a_i*w + sum_j B_ij*y[j]`` as expressions."""
    g = []
    for i in range(coef.n):
        e: Expr = dsl.Mul(dsl.Const(float(coef.a[i])), dsl.W())
        for j in range(i):
            if coef.B[i, j] != 0:
                e = dsl.Add(e, dsl.Mul(dsl.Const(float(coef.B[i, j])), dsl.Y(j + 1)))
        g.append(e)
    prior = MessagePrior(GaussianScalar(0.0, variance), shared=True)
    return DiscreteSystemSpec(coef.n, prior, tuple(g), label)


def linear_coefficients(vspec: ValidatedSpec) -> LinearCoefficients | None:
    """Extract ``(a, B)`` if every ``g_i`` is affine in ``w`` and the outputs.

    Returns None when some partial derivative is not constant.  Intercepts
    are ignored; they shift means only.
    """
    n = vspec.n
    a = np.zeros(n)
    B = np.zeros((n, n))
    for i, g in enumerate(vspec.g):
        dw = dsl.diff_expr(g, "w") if vspec.spec.origin is None else None
        if dw is None:
            cts = vspec.spec.origin.source
            dw = dsl.mul(dsl.Const(vspec.spec.origin.sqrt_delta), dsl.diff_expr(cts.g_ct, "w"))
            dw = dsl.substitute(dw, {"t": dsl.Const(i * vspec.spec.origin.delta)})
        if not dsl.is_constant(dw):
            return None
        a[i] = dsl.evaluate(dw)
        for j, d in vspec.partials[i].items():
            if not dsl.is_constant(d):
                return None
            B[i, j - 1] = dsl.evaluate(d)
    if vspec.spec.origin is not None:
        # second derivatives in y must vanish too
        cts = vspec.spec.origin.source
        d2 = dsl.diff_expr(dsl.diff_expr(cts.g_ct, ("y", 1)), ("y", 1))
        if not (dsl.is_constant(d2) and float(dsl.evaluate(d2)) == 0.0):
            return None
    return LinearCoefficients(a, B)
