"""Experiment configuration: JSON schema, strict parsing and range checks."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Any

import jsonschema

from .groups import FiniteGroup, GroupError, ProductStructure, SplitExtension, parse_group
from .tolerances import DEFAULT, Tolerances

__all__ = ["CONFIG_SCHEMA", "ConfigError", "ExperimentConfig", "parse_config"]

KINDS = ("stabilize_single", "stabilize_product", "stabilize_semidirect", "mixture", "chain",
         "blocksum", "modulus_scan")

_tol_props = {f.name: ({"type": "integer", "minimum": 1} if f.name == "max_group_order"
                       else {"type": "number", "exclusiveMinimum": 0})
              for f in fields(Tolerances)}

CONFIG_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "ulamstab experiment config",
    "type": "object",
    "additionalProperties": False,
    "required": ["experiment", "group"],
    "properties": {
        "experiment": {"enum": list(KINDS)},
        "group": {"type": "string", "minLength": 1,
                  "description": "preset: cyclic:n, dihedral:n, semidirect:n,m,k, product:A,B"},
        "dim": {"type": "integer", "minimum": 1, "maximum": 16, "default": 2},
        "epsilons": {"type": "array", "minItems": 1,
                     "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 2},
                     "default": [0.01]},
        "c": {"type": "number", "minimum": 1, "default": 2.0},
        "s_exponent": {"type": "number", "exclusiveMinimum": 0.5, "maximum": 1, "default": 1.0},
        "L": {"type": "number", "exclusiveMinimum": 0, "default": 2.0},
        "Lprime": {"type": "number", "exclusiveMinimum": 0, "default": 2.0},
        "seeds": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 0},
                  "default": [0]},
        "trials": {"type": "integer", "minimum": 1, "maximum": 10000, "default": 10},
        "max_iter": {"type": "integer", "minimum": 1, "maximum": 1000, "default": 30},
        "tol": {"type": "number", "exclusiveMinimum": 0, "maximum": 1e-3, "default": 1e-10},
        "oracle": {"enum": ["kazhdan", "holder"], "default": "kazhdan"},
        "eps_net": {"type": "number", "exclusiveMinimum": 0, "default": 0.02},
        "chain_generators": {"type": "array", "minItems": 2,
                             "items": {"type": "array", "items": {"type": "integer", "minimum": 0}}},
        "include_exact": {"type": "boolean", "default": True},
        "support": {"type": "integer", "minimum": 1, "maximum": 64, "default": 3},
        "workers": {"type": "integer", "minimum": 1, "maximum": 64, "default": 1},
        "output": {"type": "string", "minLength": 1, "default": "results"},
        "tolerances": {"type": "object", "additionalProperties": False, "properties": _tol_props},
        "inject_corruption": {
            "type": "object",
            "additionalProperties": False,
            "required": ["iteration"],
            "description": "test hook: rotate one renormalized value at the given iteration",
            "properties": {"iteration": {"type": "integer", "minimum": 0},
                           "magnitude": {"type": "number", "exclusiveMinimum": 0, "default": 0.1}},
        },
    },
}


class ConfigError(ValueError):
    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("invalid config:\n" + "\n".join(f"  - {v}" for v in violations))


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    group: str
    dim: int = 2
    epsilons: tuple[float, ...] = (0.01,)
    c: float = 2.0
    s_exponent: float = 1.0
    L: float = 2.0
    Lprime: float = 2.0
    seeds: tuple[int, ...] = (0,)
    trials: int = 10
    max_iter: int = 30
    tol: float = 1e-10
    oracle: str = "kazhdan"
    eps_net: float = 0.02
    chain_generators: tuple[tuple[int, ...], ...] | None = None
    include_exact: bool = True
    support: int = 3
    workers: int = 1
    output: str = "results"
    tolerances: Tolerances = field(default=DEFAULT)
    inject_corruption: dict | None = None

    def group_object(self):
        return parse_group(self.group)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["epsilons"] = list(self.epsilons)
        out["seeds"] = list(self.seeds)
        if self.chain_generators is not None:
            out["chain_generators"] = [list(g) for g in self.chain_generators]
        return out


def _path(err: jsonschema.ValidationError) -> str:
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def _semantic_checks(raw: dict) -> list[str]:
    out = []
    kind = raw.get("experiment")
    try:
        g = parse_group(raw["group"])
    except (GroupError, ValueError) as exc:
        return [f"group: {exc}"]
    if kind == "stabilize_product" and not isinstance(g, ProductStructure):
        out.append("group: stabilize_product needs a product:A,B preset")
    if kind == "stabilize_semidirect" and not isinstance(g, (SplitExtension, ProductStructure)):
        out.append("group: stabilize_semidirect needs a dihedral, semidirect or product preset")
    if kind in ("chain", "mixture", "blocksum", "modulus_scan", "stabilize_single") \
            and not isinstance(g, FiniteGroup):
        g = g.base
    if kind == "chain":
        if "chain_generators" not in raw:
            out.append("chain_generators: required for chain experiments")
        else:
            n = g.order
            for i, level in enumerate(raw["chain_generators"]):
                for x in level:
                    if x >= n:
                        out.append(f"chain_generators/{i}: element {x} outside a group of order {n}")
    if kind == "modulus_scan":
        for i, e in enumerate(raw.get("epsilons", [])):
            if e > 0.05:
                out.append(f"epsilons/{i}: {e} outside the scan range (0, 0.05]")
    if kind == "blocksum":
        if raw.get("c", 2.0) >= raw.get("L", 2.0):
            out.append("c: blocksum needs c < L")
    return out


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a JSON config; every violation is reported at once."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"syntax error: {exc}"]) from None
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    violations = [f"{_path(e)}: {e.message}" for e in errors]
    if not violations:
        violations = _semantic_checks(raw)
    if violations:
        raise ConfigError(violations)
    kw = dict(raw)
    for key in ("epsilons", "seeds"):
        if key in kw:
            kw[key] = tuple(kw[key])
    if "chain_generators" in kw:
        kw["chain_generators"] = tuple(tuple(level) for level in kw["chain_generators"])
    if "tolerances" in kw:
        kw["tolerances"] = DEFAULT.with_(**kw["tolerances"])
    if "inject_corruption" in kw:
        kw["inject_corruption"] = {"magnitude": 0.1, **kw["inject_corruption"]}
    return ExperimentConfig(**kw)
