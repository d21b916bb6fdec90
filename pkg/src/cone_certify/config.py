"""Run configuration: JSON schema, defaults, validation and canonical hashing."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass

import jsonschema

from .errors import ConfigError

TOL_RANGE = (1e-14, 1e-2)
TOL_KEYS = ("abs", "rel", "power")

_table_branch = {
    "type": "object",
    "required": ["x", "sigma", "potential"],
    "additionalProperties": False,
    "properties": {k: {"type": "array", "items": {"type": "number"}, "minItems": 2}
                   for k in ("x", "sigma", "potential")},
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "cone-certify run configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "map": {
            "oneOf": [
                {"enum": ["doubling", "gauss"]},
                {
                    "type": "object",
                    "required": ["branches", "gamma", "G"],
                    "additionalProperties": False,
                    "properties": {
                        "name": {"type": "string"},
                        "branches": {"type": "array", "items": _table_branch, "minItems": 1},
                        "gamma": {"type": "number", "exclusiveMinimum": 1},
                        "G": {"type": "number", "minimum": 0},
                        "metric_alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5},
                    },
                },
            ]
        },
        "observable": {
            "oneOf": [
                {"enum": ["cos1", "sin1", "cocycle", "gauss_x", "zero"]},
                {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "preset": {"enum": ["cos1", "sin1", "cocycle", "gauss_x", "zero", "const"]},
                        "c": {"type": "number"},
                        "x": {"type": "array", "items": {"type": "number"}, "minItems": 2},
                        "values": {"type": "array", "items": {"type": "number"}, "minItems": 2},
                        "sup_norm": {"type": "number", "minimum": 0},
                        "lip_seminorm": {"type": "number", "minimum": 0},
                    },
                },
            ]
        },
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5},
        "j_max": {"type": "integer", "minimum": 1},
        "grid": {"type": "integer", "minimum": 8},
        "samples": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "n_list": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "z_count": {"type": "integer", "minimum": 1},
        "z_radii": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.9}},
        "z_angles": {"type": "integer", "minimum": 1},
        "t_max": {"type": "number", "exclusiveMinimum": 0},
        "t_step": {"type": "number", "exclusiveMinimum": 0},
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: {"type": "number"} for k in TOL_KEYS},
        },
        "only": {"type": "array", "items": {"type": "string"}},
        "dim": {"type": "integer", "minimum": 2},
        "matrices": {"type": "integer", "minimum": 1},
        "comparisons": {"type": "integer", "minimum": 0},
        "nonmarkov": {
            "type": "object",
            "required": ["gamma", "A", "Nstar", "DR", "varf", "cardA0"],
            "additionalProperties": False,
            "properties": {
                "gamma": {"type": "number"},
                "A": {"type": "number"},
                "Nstar": {"type": "integer", "minimum": 1},
                "DR": {"type": "number"},
                "varf": {"type": "number"},
                "cardA0": {"type": "number"},
                "supf": {"type": "number"},
                "sigma": {"type": "number"},
            },
        },
        "out": {"type": "string"},
    },
}

DEFAULTS = {
    "alpha": 0.2,
    "j_max": 64,
    "grid": 4096,
    "samples": 100_000,
    "seed": 0,
    "n_list": [64, 256, 1024],
    "z_count": 100,
    "z_radii": [0.1, 0.3, 0.5, 0.7, 0.9],
    "z_angles": 8,
    "t_max": 200.0,
    "t_step": 0.02,
    "tolerances": {},
    "dim": 5,
    "matrices": 1000,
    "comparisons": 100,
}


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration; ``data`` holds the resolved JSON document."""

    data: dict

    def __getitem__(self, key):
        return self.data[key]

    def get(self, key, default=None):
        return self.data.get(key, default)

    @property
    def reportable(self) -> dict:
        """Everything except the output location, so reruns elsewhere stay byte-identical."""
        return {k: v for k, v in self.data.items() if k != "out"}

    def canonical(self) -> str:
        return json.dumps(self.reportable, sort_keys=True, separators=(",", ":"), allow_nan=False)

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def validate(doc: dict) -> RunConfig:
    """Apply defaults, check the schema and the range constraints."""
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    data = copy.deepcopy(DEFAULTS)
    data.update({k: copy.deepcopy(v) for k, v in doc.items() if v is not None})
    try:
        jsonschema.validate(data, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid configuration at {where}: {exc.message}") from None
    for k, v in data["tolerances"].items():
        if not TOL_RANGE[0] <= v <= TOL_RANGE[1]:
            raise ConfigError(f"tolerance {k}={v} outside [{TOL_RANGE[0]:g}, {TOL_RANGE[1]:g}]")
    obs = data.get("observable")
    if isinstance(obs, dict) and ("x" in obs) != ("values" in obs):
        raise ConfigError("a tabulated observable needs both x and values")
    if isinstance(obs, dict) and "x" not in obs and "preset" not in obs:
        raise ConfigError("observable needs a preset or a table")
    return RunConfig(data)


def load(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
