"""Built-in scenarios and the JSON scenario-file format.

A scenario file holds one scenario object or ``{"scenarios": [...]}``::

    {"label": "tanh-fb", "identity": "FEEDBACK_EXT",
     "kind": "discrete", "n": 2,
     "prior": {"family": "gaussian", "mean": 0, "variance": 1},
     "g": ["w", "w + 0.5*tanh(y[1])"],
     "rho": 1.0, "N": 20000, "K": 2000, "seed": 1,
     "tolerance": {"z": 4, "max_se": 0.02}}

``kind`` is ``discrete`` (with ``n`` and ``g``), ``continuous`` (with
``T``, ``m`` and ``g_ct``) or ``scalar`` (de Bruijn; prior only).
Exactly one of ``rho``, ``snr`` or ``t`` sets the parameter.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, replace
from pathlib import Path

import jsonschema

from . import exprdsl as dsl
from .identities import KINDS, DeBruijnSetup, ScenarioConfig, ScenarioError, Tolerance
from .systems import (
    BpskScalar, ContinuousSystemSpec, DiscreteSystemSpec, GaussianMixtureScalar,
    GaussianScalar, IidPerStep, MessagePrior, SpecValidationError,
    discretize_continuous, validate_spec,
)

__all__ = [
    "ConfigError", "Scenario", "BUILTINS", "builtin", "resolve", "load_scenarios",
    "parse_scenario", "scenario_to_dict", "config_hash",
]


class ConfigError(ValueError):
    """Anything wrong with a scenario before it runs (CLI exit code 2)."""


@dataclass(frozen=True)
class Scenario:
    name: str
    kind: str
    config: ScenarioConfig
    description: str = ""


_PRIOR_SCHEMA = {
    "type": "object",
    "properties": {
        "family": {"enum": ["gaussian", "bpsk", "mixture"]},
        "mean": {"type": "number"},
        "variance": {"type": "number"},
        "weights": {"type": "array", "items": {"type": "number"}},
        "means": {"type": "array", "items": {"type": "number"}},
        "variances": {"type": "array", "items": {"type": "number"}},
        "per_step": {"type": "boolean"},
    },
    "required": ["family"],
    "additionalProperties": False,
}

SCENARIO_SCHEMA = {
    "type": "object",
    "properties": {
        "label": {"type": "string"},
        "identity": {"enum": list(KINDS)},
        "kind": {"enum": ["discrete", "continuous", "scalar"]},
        "n": {"type": "integer", "minimum": 1},
        "T": {"type": "number"},
        "m": {"type": "integer", "minimum": 1},
        "prior": _PRIOR_SCHEMA,
        "g": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "g_ct": {"type": "string"},
        "rho": {"type": "number", "minimum": 0},
        "snr": {"type": "number", "minimum": 0},
        "t": {"type": "number", "exclusiveMinimum": 0},
        "N": {"type": "integer", "minimum": 1},
        "K": {"type": "integer", "minimum": 1},
        "h": {"type": "number", "exclusiveMinimum": 0},
        "order": {"enum": [2, 4]},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "backend": {"enum": ["mc", "oracle"]},
        "mmse_form": {"enum": ["posterior", "residual"]},
        "rhs_form": {"enum": ["paper", "complete"]},
        "independent_seeds": {"type": "boolean"},
        "tolerance": {
            "type": "object",
            "properties": {"abs_tol": {"type": "number", "minimum": 0},
                           "z": {"type": "number", "exclusiveMinimum": 0},
                           "max_se": {"type": "number", "exclusiveMinimum": 0}},
            "additionalProperties": False,
        },
        "description": {"type": "string"},
    },
    "required": ["identity", "kind", "prior"],
    "additionalProperties": False,
}


# ---------------------------------------------------------------------------
# parsing

def _prior(d: dict, n: int):
    fam = d["family"]
    if fam == "gaussian":
        comp = GaussianScalar(float(d.get("mean", 0.0)), float(d.get("variance", 1.0)))
    elif fam == "bpsk":
        comp = BpskScalar()
    else:
        try:
            comp = GaussianMixtureScalar(tuple(d["weights"]), tuple(d["means"]), tuple(d["variances"]))
        except KeyError as exc:
            raise ConfigError(f"mixture prior needs {exc.args[0]!r}") from None
    if d.get("per_step", False):
        return comp, MessagePrior(IidPerStep(comp, n), shared=False)
    return comp, MessagePrior(comp, shared=True)


def parse_scenario(d: dict, name: str | None = None) -> Scenario:
    """Validate one scenario object and build its config."""
    try:
        jsonschema.validate(d, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ConfigError(f"schema violation at {where}: {exc.message}") from None
    label = d.get("label", name or "")
    params = [k for k in ("rho", "snr", "t") if k in d]
    if len(params) != 1:
        raise ConfigError("give exactly one of rho, snr, t")
    pname = params[0]
    kind = d["kind"]
    ident = d["identity"]
    n = d.get("n", 1)
    try:
        comp, prior = _prior(d["prior"], n)
        errs = list(comp.check())
        if errs:
            raise SpecValidationError(errs)
        if kind == "scalar":
            if prior.shared is False:
                raise ConfigError("scalar scenarios take a single prior")
            system = DeBruijnSetup(comp, label)
        elif kind == "discrete":
            if "n" not in d or "g" not in d:
                raise ConfigError("discrete scenarios need n and g")
            system = DiscreteSystemSpec(n, prior, tuple(d["g"]), label)
            validate_spec(system)
        else:
            if "T" not in d or "g_ct" not in d:
                raise ConfigError("continuous scenarios need T and g_ct")
            system = ContinuousSystemSpec(float(d["T"]), prior, d["g_ct"], label)
            discretize_continuous(system, d.get("m", 64))
        tol = Tolerance(**{k: float(v) for k, v in d.get("tolerance", {}).items()})
        opts = {k: d[k] for k in ("N", "K", "m", "h", "order", "seed", "backend",
                                  "mmse_form", "rhs_form", "independent_seeds") if k in d}
        cfg = ScenarioConfig(system, param=float(d[pname]), parameterization=pname,
                             tolerance=tol, label=label, **opts)
        cfg.check()
    except SpecValidationError as exc:
        raise ConfigError("invalid system: " + "; ".join(exc.errors)) from None
    except dsl.ExprSyntaxError as exc:
        raise ConfigError(f"expression syntax error: {exc}") from None
    except ScenarioError as exc:
        raise ConfigError(str(exc)) from None
    _check_fit(ident, cfg)
    return Scenario(name or label, ident, cfg, d.get("description", ""))


def _check_fit(kind: str, cfg: ScenarioConfig) -> None:
    sys_ = cfg.system
    if kind == "DEBRUIJN":
        ok = isinstance(sys_, DeBruijnSetup) and cfg.parameterization == "t"
    elif kind.startswith("CT_"):
        ok = isinstance(sys_, ContinuousSystemSpec) and cfg.parameterization != "t"
    else:
        ok = isinstance(sys_, DiscreteSystemSpec) and cfg.parameterization != "t"
        if ok and kind == "IMMSE_MEMORYLESS" and validate_spec(sys_).has_feedback:
            raise ConfigError("IMMSE_MEMORYLESS needs a system without output feedback")
    if not ok:
        raise ConfigError(f"system kind does not fit identity {kind}")


def load_scenarios(path) -> list[Scenario]:
    """Parse a scenario file; raises :class:`ConfigError` on any problem."""
    p = Path(path)
    try:
        data = json.loads(p.read_text())
    except FileNotFoundError:
        raise ConfigError(f"no such file: {p}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {p}: {exc}") from None
    items = data.get("scenarios") if isinstance(data, dict) and "scenarios" in data else [data]
    if not isinstance(items, list) or not items:
        raise ConfigError("scenario file lists no scenarios")
    out = []
    for k, item in enumerate(items):
        if not isinstance(item, dict):
            raise ConfigError(f"scenario {k} is not an object")
        out.append(parse_scenario(item, item.get("label") or f"{p.stem}-{k}"))
    return out


# ---------------------------------------------------------------------------
# serialization

def _prior_dict(prior) -> dict:
    comp = prior.component if isinstance(prior, MessagePrior) else prior
    if isinstance(comp, GaussianScalar):
        d = {"family": "gaussian", "mean": comp.mean, "variance": comp.variance}
    elif isinstance(comp, BpskScalar):
        d = {"family": "bpsk"}
    else:
        d = {"family": "mixture", "weights": list(comp.weights), "means": list(comp.means),
             "variances": list(comp.variances)}
    if isinstance(prior, MessagePrior) and not prior.shared:
        d["per_step"] = True
    return d


def scenario_to_dict(sc: Scenario) -> dict:
    """Inverse of :func:`parse_scenario` (canonical key order)."""
    cfg = sc.config
    sys_ = cfg.system
    d = {"label": cfg.label or sc.name, "identity": sc.kind}
    if isinstance(sys_, DeBruijnSetup):
        d.update(kind="scalar", prior=_prior_dict(sys_.prior))
    elif isinstance(sys_, DiscreteSystemSpec):
        d.update(kind="discrete", n=sys_.n, prior=_prior_dict(sys_.prior),
                 g=[dsl.to_text(e) for e in sys_.g])
    else:
        d.update(kind="continuous", T=sys_.T, m=cfg.m, prior=_prior_dict(sys_.prior),
                 g_ct=dsl.to_text(sys_.g_ct))
    d[cfg.parameterization] = cfg.param
    d.update(N=cfg.N, K=cfg.K, seed=cfg.seed, backend=cfg.backend, mmse_form=cfg.mmse_form,
             rhs_form=cfg.rhs_form, independent_seeds=cfg.independent_seeds)
    if "m" not in d:
        d["m"] = cfg.m
    if cfg.h is not None:
        d["h"] = cfg.h
    if cfg.order is not None:
        d["order"] = cfg.order
    tol = {"abs_tol": cfg.tolerance.abs_tol, "z": cfg.tolerance.z}
    if cfg.tolerance.max_se != float("inf"):
        tol["max_se"] = cfg.tolerance.max_se
    d["tolerance"] = tol
    if sc.description:
        d["description"] = sc.description
    return d


def config_hash(scenarios) -> str:
    """SHA-256 of the canonical JSON of the scenario list."""
    blob = json.dumps([scenario_to_dict(s) for s in scenarios], sort_keys=True,
                      separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# built-ins

_G = {"family": "gaussian", "mean": 0.0, "variance": 1.0}

_BUILTIN_DICTS = [
    {"label": "gaussian-memoryless", "identity": "IMMSE_MEMORYLESS", "kind": "discrete",
     "n": 1, "prior": _G, "g": ["w"], "snr": 1.0, "N": 20000, "K": 10000,
     "tolerance": {"max_se": 0.01},
     "description": "scalar Gaussian input, Y = sqrt(snr) X + Z"},
    {"label": "bpsk-memoryless", "identity": "IMMSE_MEMORYLESS", "kind": "discrete",
     "n": 1, "prior": {"family": "bpsk"}, "g": ["w"], "snr": 1.0, "N": 100000, "K": 2,
     "tolerance": {"max_se": 0.01},
     "description": "equiprobable +-1 input, posterior enumerated exactly"},
    {"label": "linear-feedback-n4", "identity": "FEEDBACK_EXT", "kind": "discrete",
     "n": 4, "prior": _G, "g": ["w", "w + 0.5*y[1]", "w + 0.5*y[2]", "w + 0.5*y[3]"],
     "rho": 1.0, "backend": "oracle",
     "description": "linear-Gaussian feedback, exact oracle on both sides"},
    {"label": "tanh-feedback-n4", "identity": "FEEDBACK_EXT", "kind": "discrete",
     "n": 4, "prior": _G,
     "g": ["w", "w + 0.5*tanh(y[1])", "w + 0.5*tanh(y[2])", "w + 0.5*tanh(y[3])"],
     "rho": 1.0, "N": 50000, "K": 2000, "tolerance": {"max_se": 0.02},
     "description": "shared Gaussian message with saturating output feedback"},
    {"label": "memory-channel-n4", "identity": "MEMORY_EXT", "kind": "discrete",
     "n": 4, "prior": dict(_G, per_step=True),
     "g": ["tanh(w)", "tanh(w + 0.3*y[1])", "tanh(w + 0.3*y[2])", "tanh(w + 0.3*y[3])"],
     "rho": 1.0, "N": 50000, "K": 2000, "tolerance": {"max_se": 0.02},
     "description": "independent inputs through a channel with output memory"},
    {"label": "debruijn-gaussian", "identity": "DEBRUIJN", "kind": "scalar", "prior": _G,
     "t": 1.0, "description": "dH/dt = J/2 for Gaussian X"},
    {"label": "debruijn-mixture", "identity": "DEBRUIJN", "kind": "scalar",
     "prior": {"family": "mixture", "weights": [0.5, 0.5], "means": [-1.0, 1.0],
               "variances": [0.25, 0.25]},
     "t": 1.0, "description": "dH/dt = J/2 for a two-component Gaussian mixture"},
    {"label": "ct-constant-message", "identity": "CT_FEEDBACK", "kind": "continuous",
     "T": 1.0, "m": 256, "prior": _G, "g_ct": "w", "rho": 1.0, "N": 20000, "K": 2000,
     "tolerance": {"max_se": 0.02},
     "description": "dY = rho W dt + dB, constant Gaussian message"},
    {"label": "ct-linear-feedback", "identity": "CT_FEEDBACK", "kind": "continuous",
     "T": 1.0, "m": 64, "prior": _G, "g_ct": "w - 0.5*y[1]", "rho": 1.0, "backend": "oracle",
     "description": "dY = rho (W - Y/2) dt + dB, oracle on the Euler discretization"},
]

BUILTINS: dict[str, Scenario] = {d["label"]: parse_scenario(d, d["label"]) for d in _BUILTIN_DICTS}

_SUFFIX = re.compile(r"^(?P<base>.+?)-(?P<p>snr|rho|t)(?P<v>[0-9]+(?:\.[0-9]+)?(?:e-?[0-9]+)?)$")


def builtin(name: str) -> Scenario:
    """Look up a built-in; ``<name>-snr2``, ``-rho0.5`` or ``-t4`` set the parameter."""
    if name in BUILTINS:
        return BUILTINS[name]
    m = _SUFFIX.match(name)
    if m and m["base"] in BUILTINS:
        base = BUILTINS[m["base"]]
        d = scenario_to_dict(base)
        for k in ("rho", "snr", "t"):
            d.pop(k, None)
        d[m["p"]] = float(m["v"])
        d["label"] = name
        return parse_scenario(d, name)
    raise ConfigError(f"unknown built-in scenario {name!r}")


def resolve(ref: str) -> list[Scenario]:
    """A scenario file path or a built-in name."""
    p = Path(ref)
    if p.suffix == ".json" or p.exists():
        return load_scenarios(p)
    return [builtin(ref)]


def with_overrides(sc: Scenario, **kw) -> Scenario:
    """Replace config fields (ignoring ``None`` values) and re-check."""
    changes = {k: v for k, v in kw.items() if v is not None}
    tol = changes.pop("z", None)
    cfg = replace(sc.config, **changes)
    if tol is not None:
        cfg = replace(cfg, tolerance=replace(cfg.tolerance, z=float(tol)))
    try:
        cfg.check()
    except ScenarioError as exc:
        raise ConfigError(str(exc)) from None
    return replace(sc, config=cfg)
