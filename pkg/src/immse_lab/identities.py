"""Finite-difference derivatives and one verifier per identity.

Each verifier compares a derivative of an information functional (the
left-hand side) against estimation-error terms (the right-hand side) and
returns an :class:`IdentityReport` with a pass/fail verdict.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import estimators as est
from . import oracle
from .scalar import (
    entropy_rate_via_posterior, fisher_via_posterior, scalar_entropy,
    scalar_fisher, smoothed_density,
)
from .simulate import sample_ensemble
from .systems import (
    BpskScalar, ContinuousSystemSpec, DiscreteSystemSpec, GaussianMixtureScalar,
    GaussianScalar, ValidatedSpec, discretize_continuous, linear_coefficients,
    validate_spec,
)

__all__ = [
    "KINDS", "DeBruijnSetup", "Tolerance", "ScenarioConfig", "ScenarioError",
    "DerivativeEstimate", "FormValues", "CSV_COLUMNS", "IdentityReport", "fd_derivative",
    "verify_identity", "convergence_sweep",
]

KINDS = ("IMMSE_MEMORYLESS", "FEEDBACK_EXT", "MEMORY_EXT", "DEBRUIJN", "CT_FEEDBACK", "CT_MEMORY")
_TERM_LABELS = {
    "IMMSE_MEMORYLESS": "X",
    "FEEDBACK_EXT": "X_i",
    "MEMORY_EXT": "g_i",
    "CT_FEEDBACK": "X(s)",
    "CT_MEMORY": "g(s)",
    "DEBRUIJN": "X",
}


class ScenarioError(ValueError):
    """Configuration problems: wrong system for the identity, bad budgets."""


@dataclass(frozen=True)
class DeBruijnSetup:
    """Scalar input ``X`` for ``d/dt H(X + sqrt(t) Z) = J/2``."""
    prior: GaussianScalar | GaussianMixtureScalar | BpskScalar
    label: str = ""


@dataclass(frozen=True)
class Tolerance:
    abs_tol: float = 1e-6
    z: float = 4.0
    max_se: float = math.inf


@dataclass(frozen=True)
class ScenarioConfig:
    """One identity check.

    ``param`` is ``rho`` (or ``snr`` when ``parameterization='snr'``, or
    ``t`` for DEBRUIJN).  ``h=None`` picks 1e-3 for Monte Carlo, 1e-4 for
    the oracle and ``1e-4 * t`` for DEBRUIJN.  ``rhs_form='paper'`` judges
    the two-term right-hand side; ``'complete'`` adds the cross term.
    """
    system: DiscreteSystemSpec | ContinuousSystemSpec | DeBruijnSetup
    param: float = 1.0
    parameterization: str = "rho"
    N: int = 20000
    K: int = 2000
    m: int = 64
    h: float | None = None
    order: int | None = None
    seed: int = 1
    backend: str = "mc"
    tolerance: Tolerance = field(default_factory=Tolerance)
    mmse_form: str = "posterior"
    rhs_form: str = "paper"
    independent_seeds: bool = False
    label: str = ""

    @property
    def rho(self) -> float:
        return math.sqrt(self.param) if self.parameterization == "snr" else self.param

    def check(self) -> None:
        errs = []
        if self.parameterization not in ("rho", "snr", "t"):
            errs.append(f"unknown parameterization {self.parameterization!r}")
        if self.N < 1 or self.K < 1 or self.m < 1:
            errs.append("budgets N, K, m must be positive")
        if self.param < 0 or (self.parameterization == "t" and self.param <= 0):
            errs.append("parameter must be nonnegative (t must be positive)")
        if self.h is not None and not (self.h > 0 and (self.rho == 0 or self.h < self.rho)):
            errs.append("h must lie in (0, rho)")
        if self.backend not in ("mc", "oracle"):
            errs.append(f"unknown backend {self.backend!r}")
        if self.mmse_form not in ("residual", "posterior"):
            errs.append(f"unknown mmse form {self.mmse_form!r}")
        if self.rhs_form not in ("paper", "complete"):
            errs.append(f"unknown rhs form {self.rhs_form!r}")
        if self.order not in (None, 2, 4):
            errs.append("stencil order must be 2 or 4")
        if errs:
            raise ScenarioError("; ".join(errs))


# ---------------------------------------------------------------------------
# finite differences

@dataclass(frozen=True)
class DerivativeEstimate:
    value: float
    h: float
    order: int
    richardson: float | None = None
    std_error: float = 0.0
    per_path: np.ndarray | None = field(default=None, repr=False, compare=False)


_STENCILS = {
    2: ((1.0, -1.0), (1.0, -1.0), 2.0),
    4: ((2.0, 1.0, -1.0, -2.0), (-1.0, 8.0, -8.0, 1.0), 12.0),
}


def _unpack(v):
    if isinstance(v, tuple):
        return float(v[0]), float(v[1]), None
    if hasattr(v, "value"):
        return float(v.value), float(getattr(v, "std_error", 0.0)), getattr(v, "per_path", None)
    return float(v), 0.0, None


def _stencil(f: Callable, x: float, h: float, order: int):
    offsets, coefs, denom = _STENCILS[order]
    vals = [_unpack(f(x + o * h)) for o in offsets]
    c = np.asarray(coefs) / (denom * h)
    value = float(sum(ci * v[0] for ci, v in zip(c, vals)))
    if all(v[2] is not None for v in vals):
        pp = sum(ci * v[2] for ci, v in zip(c, vals))
        value = float(np.mean(pp))
        se = float(np.std(pp, ddof=1) / math.sqrt(pp.size)) if pp.size > 1 else math.inf
        return value, se, pp
    se = float(math.sqrt(sum((ci * v[1]) ** 2 for ci, v in zip(c, vals))))
    return value, se, None


def fd_derivative(f: Callable, rho: float, h: float, order: int = 2,
                  richardson: bool = False, nonnegative: bool = False) -> DerivativeEstimate:
    """Central-difference derivative of ``f`` at ``rho``.

    ``f`` may return a float, ``(value, se)``, or an object with ``value``,
    ``std_error`` and ``per_path``; with per-path values at every stencil
    point the stencil is applied path by path before averaging, so the
    common-random-number correlation shows up in the standard error.
    """
    if order not in _STENCILS:
        raise ValueError("order must be 2 or 4")
    if not h > 0:
        raise ValueError("h must be positive")
    reach = max(_STENCILS[order][0]) * h * (2 if richardson else 1)
    if nonnegative and rho - reach < 0:
        raise ValueError(f"stencil reaches below zero (rho={rho}, h={h})")
    value, se, pp = _stencil(f, rho, h, order)
    rich = None
    if richardson:
        coarse, _, _ = _stencil(f, rho, 2 * h, order)
        rich = (2 ** order * value - coarse) / (2 ** order - 1)
    return DerivativeEstimate(value, h, order, rich, se, pp)


# ---------------------------------------------------------------------------
# reports

@dataclass(frozen=True)
class FormValues:
    lhs: float
    rhs_mmse: float
    rhs_mmse_se: float
    rhs_correction: float
    rhs_correction_se: float
    rhs_cross: float
    rhs_cross_se: float
    rhs_total: float
    gap: float
    combined_se: float
    lhs_se: float

    def scaled(self, k: float) -> "FormValues":
        return FormValues(*(k * v for v in asdict(self).values()))


@dataclass(frozen=True)
class IdentityReport:
    kind: str
    label: str
    parameterization: str
    param: float
    rho_form: FormValues
    snr_form: FormValues | None
    lhs: DerivativeEstimate
    rhs_form: str
    tolerance: Tolerance
    threshold: float
    verdict: str
    diagnosis: str
    budgets: dict
    term_label: str
    extras: dict = field(default_factory=dict)

    @property
    def values(self) -> FormValues:
        """Numbers in the scenario's own parameterization."""
        if self.parameterization == "snr" and self.snr_form is not None:
            return self.snr_form
        return self.rho_form

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        v = self.values
        out = {
            "kind": self.kind,
            "label": self.label,
            "parameterization": self.parameterization,
            "param": self.param,
            "term_label": self.term_label,
            "rhs_form": self.rhs_form,
            "lhs": {"value": v.lhs, "std_error": v.lhs_se, "h": self.lhs.h,
                    "order": self.lhs.order, "richardson": self.lhs.richardson},
            "rhs_mmse_term": {"value": v.rhs_mmse, "std_error": v.rhs_mmse_se},
            "rhs_correction_term": {"value": v.rhs_correction, "std_error": v.rhs_correction_se},
            "rhs_cross_term": {"value": v.rhs_cross, "std_error": v.rhs_cross_se},
            "rhs_total": v.rhs_total,
            "gap": v.gap,
            "combined_se": v.combined_se,
            "tolerance": asdict(self.tolerance),
            "threshold": self.threshold,
            "verdict": self.verdict,
            "diagnosis": self.diagnosis,
            "budgets": dict(self.budgets),
            "rho_form": asdict(self.rho_form),
            "snr_form": asdict(self.snr_form) if self.snr_form is not None else None,
            "extras": self.extras,
        }
        return _clean(out)

    @property
    def rho(self) -> float:
        """Channel gain (or ``t`` for DEBRUIJN)."""
        return math.sqrt(self.param) if self.parameterization == "snr" else self.param

    def csv_row(self) -> dict:
        v = self.values
        return {"kind": self.kind, "rho": self.rho, "lhs": v.lhs, "rhs_mmse": v.rhs_mmse,
                "rhs_corr": v.rhs_correction, "gap": v.gap, "se": v.combined_se,
                "verdict": self.verdict, "label": self.label,
                "parameterization": self.parameterization, "param": self.param,
                "rhs_cross": v.rhs_cross, "rhs": v.rhs_total}


CSV_COLUMNS = ("kind", "rho", "lhs", "rhs_mmse", "rhs_corr", "gap", "se", "verdict",
               "label", "parameterization", "param", "rhs_cross", "rhs")


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _judge(gap: float, se: float, tol: Tolerance) -> tuple[str, str, float]:
    threshold = max(tol.abs_tol, tol.z * se) if math.isfinite(se) else math.inf
    if not math.isfinite(se):
        return "fail", "SE above tolerance (not estimable from fewer than two paths)", threshold
    if not se <= tol.max_se:
        return "fail", f"SE above tolerance (se={se:.3g} > max_se={tol.max_se:.3g})", threshold
    if abs(gap) <= threshold:
        return "pass", "", threshold
    return "fail", f"gap {gap:.3g} exceeds threshold {threshold:.3g}", threshold


# ---------------------------------------------------------------------------
# discrete machinery

@dataclass(frozen=True)
class _Pieces:
    """rho-form values for one discrete system."""
    lhs: DerivativeEstimate
    mmse: tuple
    corr: tuple
    cross: tuple
    gap_paper_pp: np.ndarray | None
    gap_complete_pp: np.ndarray | None
    extras: dict


def _h_default(cfg: ScenarioConfig) -> float:
    if cfg.h is not None:
        return cfg.h
    base = {"mc": 1e-3, "oracle": 1e-4}[cfg.backend]
    if cfg.rho > 0:
        base = min(base, cfg.rho / 4)
    return base


def _oracle_model(vspec: ValidatedSpec) -> oracle.LinearGaussianModel:
    coef = linear_coefficients(vspec)
    comp = vspec.prior.component
    if coef is None:
        raise ScenarioError("oracle backend needs g_i affine in w and the outputs")
    if not isinstance(comp, GaussianScalar) or vspec.dim != 1:
        raise ScenarioError("oracle backend needs a shared scalar Gaussian message")
    return oracle.LinearGaussianModel(coef, comp.variance, 1.0, comp.mean)


def _discrete_oracle(vspec: ValidatedSpec, cfg: ScenarioConfig, rho: float) -> _Pieces:
    model = _oracle_model(vspec)
    h = _h_default(cfg)
    order = cfg.order or 4
    lhs = fd_derivative(lambda r: oracle.lg_mutual_information(model.at(r)), rho, h, order)
    terms = oracle.lg_rhs_terms(model.at(rho))
    mmse = (rho * terms.mmse_sum, 0.0)
    corr = (rho ** 2 * terms.correction_sum, 0.0)
    cross = (rho * terms.cross_sum, 0.0)
    extras = {"oracle_mi": oracle.lg_mutual_information(model.at(rho))}
    return _Pieces(lhs, mmse, corr, cross, None, None, extras)


def _discrete_mc(vspec: ValidatedSpec, cfg: ScenarioConfig, rho: float) -> _Pieces:
    h = _h_default(cfg)
    order = cfg.order or 2
    seed = cfg.seed

    def mi(r):
        return est.estimate_mi_nested(vspec, r, cfg.N, cfg.K, seed)

    lhs = fd_derivative(mi, rho, h, order)
    rseed = seed + 1 if cfg.independent_seeds else seed
    ens = sample_ensemble(vspec, rho, cfg.N, rseed)
    post = est.posterior_summary(vspec, rho, ens.y, ens.w, cfg.K, rseed,
                                 S=ens.S if vspec.has_feedback else None)
    m = est.mmse_term(vspec, rho, ens, cfg.K, rseed, form=cfg.mmse_form, posterior=post)
    c = est.correction_term(vspec, rho, ens, cfg.K, rseed, posterior=post)
    x = est.cross_term(vspec, rho, ens, cfg.K, rseed, posterior=post)
    paper_pp = rho * m.per_path + rho ** 2 * c.per_path
    complete_pp = paper_pp + rho * x.per_path
    gp = gc = None
    if not cfg.independent_seeds and lhs.per_path is not None:
        gp = lhs.per_path - paper_pp
        gc = lhs.per_path - complete_pp
    extras = {"mean_ess": float(np.mean(post.ess)), "min_ess": float(np.min(post.ess))}
    return _Pieces(lhs, (m.scaled, m.scaled_se), (c.scaled, c.scaled_se), (x.scaled, x.scaled_se),
                   gp, gc, extras)


def _form_values(p: _Pieces, rhs_form: str, zero_correction: bool) -> FormValues:
    mmse, corr, cross = p.mmse, p.corr, p.cross
    if zero_correction:
        corr = (0.0, 0.0)
    total = mmse[0] + corr[0] + (cross[0] if rhs_form == "complete" else 0.0)
    gap = p.lhs.value - total
    pp = p.gap_complete_pp if rhs_form == "complete" else p.gap_paper_pp
    if pp is not None and not zero_correction:
        se = float(np.std(pp, ddof=1) / math.sqrt(pp.size)) if pp.size > 1 else math.inf
    else:
        parts = [p.lhs.std_error, mmse[1], corr[1]] + ([cross[1]] if rhs_form == "complete" else [])
        se = math.sqrt(sum(s * s for s in parts))
    return FormValues(p.lhs.value, mmse[0], mmse[1], corr[0], corr[1], cross[0], cross[1],
                      total, gap, se, p.lhs.std_error)


def _discrete_report(kind: str, vspec: ValidatedSpec, cfg: ScenarioConfig,
                     extras: dict | None = None) -> tuple[IdentityReport, _Pieces]:
    rho = cfg.rho
    if cfg.backend == "oracle":
        pieces = _discrete_oracle(vspec, cfg, rho)
    else:
        pieces = _discrete_mc(vspec, cfg, rho)
    zero_corr = kind == "IMMSE_MEMORYLESS"
    rf = _form_values(pieces, cfg.rhs_form, zero_corr)
    sf = rf.scaled(1.0 / (2.0 * rho)) if rho > 0 else None
    report = _assemble(kind, cfg, rf, sf, pieces.lhs, {**pieces.extras, **(extras or {})})
    return report, pieces


def _assemble(kind, cfg, rf: FormValues, sf: FormValues | None, lhs, extras) -> IdentityReport:
    head = sf if (cfg.parameterization == "snr" and sf is not None) else rf
    verdict, diagnosis, threshold = _judge(head.gap, head.combined_se, cfg.tolerance)
    budgets = {"N": cfg.N, "K": cfg.K, "m": cfg.m, "h": lhs.h, "order": lhs.order,
               "seed": cfg.seed, "backend": cfg.backend, "mmse_form": cfg.mmse_form,
               "independent_seeds": cfg.independent_seeds}
    label = cfg.label or getattr(cfg.system, "label", "")
    return IdentityReport(kind, label, cfg.parameterization, cfg.param, rf, sf, lhs,
                          cfg.rhs_form, cfg.tolerance, threshold, verdict, diagnosis,
                          budgets, _TERM_LABELS[kind], extras)


# ---------------------------------------------------------------------------
# de Bruijn

def _debruijn(cfg: ScenarioConfig) -> IdentityReport:
    prior = cfg.system.prior
    t = cfg.param
    h = cfg.h if cfg.h is not None else 1e-4 * t
    order = cfg.order or 4

    def entropy(s):
        return scalar_entropy(smoothed_density(prior, s), tol=1e-12)

    lhs = fd_derivative(entropy, t, h, order, nonnegative=True)
    J = scalar_fisher(smoothed_density(prior, t), tol=1e-12)
    half = 0.5 * J
    rf = FormValues(lhs.value, half, 0.0, 0.0, 0.0, 0.0, 0.0, half, lhs.value - half, 0.0, 0.0)
    extras = {
        "fisher": J,
        "fisher_via_posterior": fisher_via_posterior(prior, t, tol=1e-12),
        "entropy_rate_via_posterior": entropy_rate_via_posterior(prior, t, tol=1e-12),
        "entropy": entropy(t),
    }
    return _assemble("DEBRUIJN", cfg, rf, None, lhs, extras)


# ---------------------------------------------------------------------------
# entry points

def verify_identity(kind: str, scenario: ScenarioConfig) -> IdentityReport:
    """Run one identity check.

    Raises
    ------
    ScenarioError
        If the scenario's system does not fit the identity kind.
    """
    if kind not in KINDS:
        raise ScenarioError(f"unknown identity kind {kind!r}")
    scenario.check()
    system = scenario.system
    if kind == "DEBRUIJN":
        if not isinstance(system, DeBruijnSetup) or scenario.parameterization != "t":
            raise ScenarioError("DEBRUIJN needs a scalar prior and parameter t")
        return _debruijn(scenario)
    if isinstance(system, DeBruijnSetup) or scenario.parameterization == "t":
        raise ScenarioError(f"{kind} needs a channel system parameterized by rho or snr")
    if kind.startswith("CT_"):
        if not isinstance(system, ContinuousSystemSpec):
            raise ScenarioError(f"{kind} needs a continuous-time system")
        return _continuous(kind, scenario)
    if not isinstance(system, DiscreteSystemSpec):
        raise ScenarioError(f"{kind} needs a discrete-time system")
    vspec = validate_spec(system)
    if kind == "IMMSE_MEMORYLESS" and vspec.has_feedback:
        raise ScenarioError("IMMSE_MEMORYLESS needs a system without output feedback")
    report, _ = _discrete_report(kind, vspec, scenario)
    return report


def _continuous(kind: str, cfg: ScenarioConfig) -> IdentityReport:
    levels = []
    reports = []
    for m in (cfg.m, 2 * cfg.m):
        vspec = validate_spec(discretize_continuous(cfg.system, m))
        rep, _ = _discrete_report(kind, vspec, replace(cfg, m=m))
        reports.append(rep)
        v = rep.values
        levels.append({"m": m, "lhs": v.lhs, "rhs_total": v.rhs_total, "gap": v.gap,
                       "combined_se": v.combined_se, "verdict": rep.verdict})
    coarse, fine = reports
    shrinks = abs(fine.values.gap) <= abs(coarse.values.gap) or coarse.passed
    verdict, diagnosis = fine.verdict, fine.diagnosis
    if verdict == "pass" and not shrinks:
        verdict, diagnosis = "fail", "gap does not shrink from m to 2m"
    extras = {**fine.extras, "refinement": levels, "gap_shrinks": bool(shrinks)}
    return replace(fine, verdict=verdict, diagnosis=diagnosis, extras=extras,
                   budgets={**fine.budgets, "m": cfg.m})


_AXES = {"N": "N", "K": "K", "m": "m", "h": "h"}


def convergence_sweep(kind: str, scenario: ScenarioConfig, axis: str,
                      grid: Sequence[float]) -> list[IdentityReport]:
    """One report per grid value of ``axis`` (N, K, m, h, rho, snr or t)."""
    grid = list(grid)
    if not grid:
        raise ScenarioError("empty grid")
    diffs = np.diff(grid)
    if axis == "h":
        if not np.all(diffs < 0):
            raise ScenarioError("h grid must be strictly decreasing")
    elif not np.all(diffs > 0):
        raise ScenarioError(f"{axis} grid must be strictly increasing")
    out = []
    for value in grid:
        if axis in ("N", "K", "m"):
            cfg = replace(scenario, **{axis: int(value)})
        elif axis == "h":
            cfg = replace(scenario, h=float(value))
        elif axis in ("rho", "snr", "t"):
            if (axis == "t") != (scenario.parameterization == "t"):
                raise ScenarioError(f"axis {axis} does not fit this scenario")
            cfg = replace(scenario, param=float(value), parameterization=axis)
        else:
            raise ScenarioError(f"unknown sweep axis {axis!r}")
        out.append(verify_identity(kind, cfg))
    return out
