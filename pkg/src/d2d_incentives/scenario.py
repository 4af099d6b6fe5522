"""Scenario files: a versioned JSON document describing one experiment.

A scenario names the UE population, reward, risk environment and operator,
plus optional sections for dynamics, simulation, sweeps and comparisons.
``load_scenario`` validates against :data:`SCHEMA`, fills defaults and
returns the normalised dict; :func:`build` turns it into domain objects.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import jsonschema

from .abm import MODES as SIM_MODES
from .abm import SimConfig
from .model import (
    FAMILIES,
    EvaluationFunction,
    ModelError,
    OperatorParams,
    RewardScheme,
    RiskEnv,
    UEType,
)
from .reward import TechCostFunction

SCHEMA_VERSION = 1

EXPERIMENTS = (
    "solve-br",
    "steady-state",
    "ne",
    "reward-opt",
    "joint-opt",
    "simulate",
    "sweep",
    "compare",
)
SWEEP_TARGETS = ("solve-br", "steady-state", "ne", "operator", "reward-opt", "joint-opt", "simulate")
ABM_MODES = SIM_MODES + ("ne",)

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_unit = {"type": "number", "minimum": 0, "maximum": 1}
_num_list = {"type": "array", "items": _num}

_SIM_FIELDS = {
    "n_agents": {"type": "integer", "minimum": 1},
    "area": _pos,
    "slots_per_unit_time": {"type": "integer", "minimum": 1},
    "v_max": _nonneg,
    "m_max": {"type": "integer", "minimum": 0},
    "p": _unit,
    "w_max": {"type": "integer", "minimum": 1},
    "d": _nonneg,
    "theta0": _unit,
    "type_assignment": {"enum": ["quota", "random"]},
    "requesters_down": {"type": "boolean"},
    "eta": {"type": ["number", "null"], "exclusiveMinimum": 0},
    "eta_warmup_slots": {"type": "integer", "minimum": 0},
    "eta_slots": {"type": "integer", "minimum": 1},
    "trace_every": {"type": "integer", "minimum": 1},
}

SCHEMA: Dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "types", "scheme", "env"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "experiment": {"enum": list(EXPERIMENTS)},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "tol": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "types": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["c", "q"],
                "additionalProperties": False,
                "properties": {
                    "family": {"enum": list(FAMILIES)},
                    "k": _pos,
                    "gamma": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                    "c": _pos,
                    "q": _nonneg,
                    "w": _unit,
                },
            },
        },
        "scheme": {
            "type": "object",
            "required": ["r0"],
            "additionalProperties": False,
            "properties": {"r0": _pos, "r_max": {"type": ["number", "null"], "exclusiveMinimum": 0}},
        },
        "env": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"beta": _unit, "tau": _nonneg, "delta": _pos, "rho": _nonneg},
            "oneOf": [{"required": ["beta"]}, {"required": ["tau"]}],
        },
        "operator": {
            "type": "object",
            "required": ["b0"],
            "additionalProperties": False,
            "properties": {"b0": _pos},
        },
        "tech_cost": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"j0": _nonneg, "p": _pos},
        },
        "best_response": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"thetas": {"type": "array", "minItems": 1, "items": _unit}},
        },
        "dynamics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "policy": {"enum": ["fixed", "adaptive"]},
                "actions": _num_list,
                "weights": _num_list,
                "theta0": _unit,
                "horizon": _pos,
                "dt": _pos,
                "record_every": {"type": "integer", "minimum": 1},
                "epsilon": {"type": ["number", "null"], "exclusiveMinimum": 0},
            },
        },
        "sim": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "config": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": _SIM_FIELDS,
                },
                "mode": {"enum": list(ABM_MODES)},
                "fixed_rates": _num_list,
                "weights": _num_list,
                "horizon_slots": {"type": "integer", "minimum": 1},
                "n_seeds": {"type": "integer", "minimum": 1},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "target": {"enum": list(SWEEP_TARGETS)},
                "axes": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["param", "values"],
                        "additionalProperties": False,
                        "properties": {
                            "param": {"type": "string"},
                            "values": {"type": "array", "minItems": 1, "items": _num},
                        },
                    },
                },
            },
        },
        "compare": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tolerances": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "theta": _nonneg,
                        "mean_participation": _nonneg,
                        "effective_participation": _nonneg,
                    },
                },
                "tail_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            },
        },
    },
}

DEFAULTS: Dict[str, Any] = {
    "name": "",
    "experiment": "ne",
    "seed": 0,
    "tol": None,
    "env": {"delta": 1.0, "rho": 1.0},
    "operator": {"b0": 6.0},
    "tech_cost": {"j0": 1.0, "p": 1.0},
    "best_response": {"thetas": [0.0, 0.25, 0.5, 0.75, 1.0]},
    "dynamics": {
        "policy": "adaptive",
        "theta0": 0.5,
        "horizon": 100.0,
        "dt": 1e-3,
        "record_every": 100,
        "epsilon": None,
    },
    "sim": {"config": {}, "mode": "adaptive", "horizon_slots": 50_000, "n_seeds": 1},
    "sweep": {"target": "ne", "axes": []},
    "compare": {
        "tolerances": {"theta": 0.05, "mean_participation": 0.25, "effective_participation": 0.25},
        "tail_fraction": 0.1,
    },
}
TYPE_DEFAULTS = {"family": "power", "k": 1.0, "gamma": 0.5, "w": None}


class ScenarioError(ModelError):
    """Schema or semantic violation; ``errors`` lists ``(field path, message)`` pairs."""

    def __init__(self, errors: List[Tuple[str, str]]):
        self.errors = errors
        super().__init__("invalid scenario:\n" + "\n".join(f"  {p}: {m}" for p, m in errors))


def _merge(defaults: dict, given: dict) -> dict:
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _semantic_errors(doc: dict) -> List[Tuple[str, str]]:
    errs = []
    types = doc["types"]
    ws = [t["w"] for t in types]
    if abs(sum(ws) - 1.0) > 1e-9:
        errs.append(("$.types", f"weights sum to {sum(ws):.12g}, expected 1"))
    for section, key in (("dynamics", "actions"), ("sim", "fixed_rates")):
        sec = doc[section]
        w = sec.get("weights")
        if w is not None and abs(sum(w) - 1.0) > 1e-9:
            errs.append((f"$.{section}.weights", f"weights sum to {sum(w):.12g}, expected 1"))
        n = len(w) if w is not None else len(types)
        vals = sec.get(key)
        if vals is not None and len(vals) != n:
            errs.append((f"$.{section}.{key}", f"expected {n} entries (one per weight), got {len(vals)}"))
    for i, axis in enumerate(doc["sweep"]["axes"]):
        vals = axis["values"]
        path = f"$.sweep.axes[{i}]"
        if not all(math.isfinite(v) for v in vals):
            errs.append((f"{path}.values", "grid values must be finite"))
        elif any(b <= a for a, b in zip(vals, vals[1:])):
            errs.append((f"{path}.values", "grid values must be strictly increasing"))
        if not _param_exists(doc, axis["param"]):
            errs.append((f"{path}.param", f"unknown parameter {axis['param']!r}"))
    return errs


def _param_exists(doc: dict, param: str) -> bool:
    parts = param.split(".")
    if parts[0] == "env" and len(parts) == 2:
        return parts[1] in ("beta", "tau", "delta", "rho")
    if parts[:2] == ["sim", "config"] and len(parts) == 3:
        return parts[2] in _SIM_FIELDS
    node: Any = doc
    for part in parts:
        if isinstance(node, list) and part.isdigit() and int(part) < len(node):
            node = node[int(part)]
        elif isinstance(node, dict) and part in node:
            node = node[part]
        else:
            return False
    return isinstance(node, (int, float)) and not isinstance(node, bool)


def normalize(raw: dict) -> dict:
    """Validate ``raw`` and return a copy with every default filled in."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        raise ScenarioError([(e.json_path, e.message) for e in errors])
    doc = _merge(DEFAULTS, raw)
    K = len(doc["types"])
    types = []
    for t in doc["types"]:
        t = _merge(TYPE_DEFAULTS, t)
        if t["w"] is None:
            t["w"] = 1.0 / K
        types.append(t)
    doc["types"] = types
    doc["scheme"].setdefault("r_max", None)
    errs = _semantic_errors(doc)
    if errs:
        raise ScenarioError(errs)
    return doc


def load_scenario(path) -> dict:
    """Read a scenario or a run manifest (whose ``scenario`` entry is replayed)."""
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as e:
            raise ScenarioError([("$", f"not valid JSON: {e}")]) from e
    if isinstance(raw, dict) and "manifest_version" in raw:
        raw = raw["scenario"]
    return normalize(raw)


def canonical_json(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)


def scenario_hash(doc: dict) -> str:
    return hashlib.sha256(canonical_json(doc).encode()).hexdigest()[:16]


def set_param(doc: dict, param: str, value: float) -> dict:
    """Copy of ``doc`` with the dotted parameter set; ``env.tau`` and ``env.beta`` replace each other."""
    out = copy.deepcopy(doc)
    parts = param.split(".")
    node: Any = out
    for part in parts[:-1]:
        node = node[int(part)] if isinstance(node, list) else node.setdefault(part, {})
    leaf = parts[-1]
    if parts[0] == "env" and leaf in ("beta", "tau"):
        node.pop("tau" if leaf == "beta" else "beta", None)
    if isinstance(node, list):
        node[int(leaf)] = value
    else:
        node[leaf] = value
    return out


@dataclass(frozen=True)
class Scenario:
    """Domain objects built from a normalised scenario document."""

    doc: dict
    types: Tuple[UEType, ...]
    scheme: RewardScheme
    env: RiskEnv
    operator: OperatorParams
    tech: TechCostFunction
    sim_config: SimConfig

    @property
    def weights(self) -> List[float]:
        return [t.w for t in self.types]

    @property
    def seed(self) -> int:
        return int(self.doc["seed"])

    @property
    def tol(self) -> Optional[float]:
        return self.doc.get("tol")

    @property
    def hash(self) -> str:
        return scenario_hash(self.doc)


def build(doc: dict) -> Scenario:
    types = tuple(
        UEType(EvaluationFunction(t["family"], t["k"], t["gamma"]), t["c"], t["q"], t["w"])
        for t in doc["types"]
    )
    r_max = doc["scheme"].get("r_max")
    scheme = RewardScheme(doc["scheme"]["r0"], math.inf if r_max is None else r_max)
    e = doc["env"]
    if "tau" in e:
        env = RiskEnv.from_tau(e["tau"], e["delta"], e["rho"])
    else:
        env = RiskEnv(e["beta"], e["delta"], e["rho"])
    known = {f.name for f in fields(SimConfig)}
    sim_kwargs = {k: v for k, v in doc["sim"]["config"].items() if k in known}
    sim_config = SimConfig(**{**sim_kwargs, "seed": int(doc["seed"])})
    return Scenario(
        doc=doc,
        types=types,
        scheme=scheme,
        env=env,
        operator=OperatorParams(doc["operator"]["b0"]),
        tech=TechCostFunction(doc["tech_cost"]["j0"], doc["tech_cost"]["p"]),
        sim_config=sim_config,
    )


def write_json(path, doc: dict):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n")
