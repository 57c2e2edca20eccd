"""JSON run configuration with strict key checking.

Layout::

    {
      "dgp":        {"n": 300, "regime": "moderate", "delta": 0.65, ...},
      "plan":       {"n_grid": [...], "delta_grid": [...], "regimes": [...],
                     "reps": 50, "base_seed": 1, "workers": 1},
      "estimators": ["naive", "pca", {"kind": "cca", "k": 8, "ell": 10}],
      "output":     {"dir": "out"}
    }

Every section is optional; missing values fall back to the simulation
defaults (k, ell) = (8, 10), alpha = 1.5, rho = 0.9, sigma_eps = 1.25,
c1 = 2.0, delta = 0.65.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .datamodel import DgpConfig, DimensionError, Regime
from .estimators import EstimatorKind, EstimatorSpec, WeightSpec
from .harness import SimulationPlan, default_estimators, plan_to_dict

log = logging.getLogger(__name__)

_TOP_KEYS = {"dgp", "plan", "estimators", "output"}
_DGP_KEYS = {f.name for f in dataclasses.fields(DgpConfig)}
_PLAN_KEYS = {"n_grid", "delta_grid", "regimes", "reps", "base_seed", "workers", "record_runtime"}
_SPEC_KEYS = {"kind", "k", "ell", "pinv_tol", "weights"}
_WEIGHT_KEYS = {"left", "right", "left_values", "right_values"}
_OUTPUT_KEYS = {"dir", "dataset"}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class RunConfig:
    dgp: DgpConfig = field(default_factory=DgpConfig)
    plan: SimulationPlan = field(default_factory=SimulationPlan)
    output: dict = field(default_factory=dict)


def _reject_unknown(section: str, given: dict, allowed: set) -> None:
    if not isinstance(given, dict):
        raise ConfigError(f"{section}: expected an object")
    extra = sorted(set(given) - allowed)
    if extra:
        raise ConfigError(f"{section}: unknown key {extra[0]!r}")


def _typed(section: str, key: str, value, kind):
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{section}.{key}: expected an integer, got {value!r}")
    elif kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{section}.{key}: expected a number, got {value!r}")
        value = float(value)
    return value


def parse_estimator(entry, default_k: int, default_ell: int) -> EstimatorSpec:
    if isinstance(entry, str):
        entry = {"kind": entry}
    _reject_unknown("estimators[]", entry, _SPEC_KEYS)
    try:
        kind = EstimatorKind(entry.get("kind"))
    except ValueError:
        raise ConfigError(f"estimators[].kind: unknown estimator {entry.get('kind')!r}") from None
    weights = None
    if "weights" in entry:
        _reject_unknown("estimators[].weights", entry["weights"], _WEIGHT_KEYS)
        w = dict(entry["weights"])
        for side in ("left_values", "right_values"):
            if w.get(side) is not None:
                w[side] = tuple(float(v) for v in w[side])
        try:
            weights = WeightSpec(**w)
        except ValueError as e:
            raise ConfigError(f"estimators[].weights: {e}") from None
    k = _typed("estimators[]", "k", entry.get("k", default_k), int)
    ell = _typed("estimators[]", "ell", entry.get("ell", default_ell), int)
    if k < 1:
        raise ConfigError(f"estimators[].k: must be >= 1, got {k}")
    if ell < 1:
        raise ConfigError(f"estimators[].ell: must be >= 1, got {ell}")
    try:
        return EstimatorSpec(kind, k, ell, _typed("estimators[]", "pinv_tol", entry.get("pinv_tol", 1e-12), float),
                             weights)
    except ValueError as e:
        raise ConfigError(f"estimators[]: {e}") from None


def parse_config(doc: dict) -> RunConfig:
    _reject_unknown("config", doc, _TOP_KEYS)

    raw_dgp = doc.get("dgp", {})
    _reject_unknown("dgp", raw_dgp, _DGP_KEYS)
    if "delta" not in raw_dgp:
        log.warning("dgp.delta not given; using default %s", DgpConfig.delta)
    dgp_kwargs = {}
    types = {f.name: f.type for f in dataclasses.fields(DgpConfig)}
    for key, value in raw_dgp.items():
        if key == "regime":
            try:
                dgp_kwargs[key] = Regime(value)
            except ValueError:
                raise ConfigError(f"dgp.regime: expected 'moderate' or 'high', got {value!r}") from None
        else:
            dgp_kwargs[key] = _typed("dgp", key, value, int if types[key] == "int" else float)
    dgp = DgpConfig(**dgp_kwargs)
    if dgp.n < 1:
        raise ConfigError(f"dgp.n: must be positive, got {dgp.n}")
    try:
        dgp.validate()
    except (DimensionError, ValueError) as e:
        raise ConfigError(f"dgp: {e}") from None

    raw_plan = doc.get("plan", {})
    _reject_unknown("plan", raw_plan, _PLAN_KEYS)
    plan_kwargs = {}
    for key, value in raw_plan.items():
        if key in ("n_grid", "delta_grid", "regimes"):
            if not isinstance(value, list) or not value:
                raise ConfigError(f"plan.{key}: expected a nonempty list")
        if key == "n_grid":
            value = [_typed("plan", key, v, int) for v in value]
            if min(value) < 1:
                raise ConfigError(f"plan.n_grid: sample sizes must be positive, got {min(value)}")
        elif key == "delta_grid":
            value = [_typed("plan", key, v, float) for v in value]
        elif key == "regimes":
            try:
                value = [Regime(v) for v in value]
            except ValueError:
                raise ConfigError(f"plan.regimes: unknown regime in {value!r}") from None
        elif key in ("reps", "base_seed", "workers"):
            value = _typed("plan", key, value, int)
        plan_kwargs[key] = value
    plan_kwargs.setdefault("base_seed", dgp.base_seed)

    raw_est = doc.get("estimators")
    if raw_est is None:
        estimators = default_estimators(dgp.k, dgp.ell)
    else:
        if not isinstance(raw_est, list) or not raw_est:
            raise ConfigError("estimators: expected a nonempty list")
        estimators = [parse_estimator(e, dgp.k, dgp.ell) for e in raw_est]
    try:
        plan = SimulationPlan(dgp=dgp, estimators=estimators, **plan_kwargs)
    except ValueError as e:
        raise ConfigError(f"plan: {e}") from None

    output = doc.get("output", {})
    _reject_unknown("output", output, _OUTPUT_KEYS)
    return RunConfig(dgp=dgp, plan=plan, output=dict(output))


def read_config_doc(path: str | Path | None) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return doc


def load_config(path: str | Path | None) -> RunConfig:
    return parse_config(read_config_doc(path))


def config_to_dict(cfg: RunConfig) -> dict:
    plan = plan_to_dict(cfg.plan)
    return {
        "dgp": cfg.dgp.to_dict(),
        "plan": {k: plan[k] for k in sorted(_PLAN_KEYS)},
        "estimators": plan["estimators"],
        "output": dict(cfg.output),
    }
