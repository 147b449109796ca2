"""Run configuration: JSON schema, defaults, environment overrides."""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path

import jsonschema

from .errors import ConfigError

ENV_PREFIX = "BGGPROLONG_TOL_"

TOLERANCE_DEFAULTS = {
    "holonomy": 1e-6,
    "flat_identity": 1e-8,
    "residual": 1e-6,
    "subspace": 1e-6,
    "splitting": 1e-9,
    "equivalence": 1e-7,
    "einstein": 1e-4,
    "positivity": 0.3,
    "oracle_rtol": 1e-8,
}

_number = {"type": "number"}
_positive = {"type": "number", "exclusiveMinimum": 0}
_vector = {"type": "array", "items": _number, "minItems": 2}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "bggprolong run configuration",
    "type": "object",
    "additionalProperties": False,
    "required": ["algebra", "module"],
    "properties": {
        "algebra": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n"],
            "properties": {"n": {"type": "integer", "minimum": 2, "maximum": 8}},
        },
        "module": {
            "type": "object",
            "additionalProperties": False,
            "required": ["family"],
            "properties": {
                "family": {"enum": ["scalar", "adjoint"]},
                "r": {"type": "integer", "minimum": 1, "maximum": 4},
            },
        },
        "metric": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "family": {"enum": ["flat", "sphere", "hyperbolic", "conformal_poly"]},
                "params": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "radius": _positive,
                        "coefficients": {"type": "array", "items": _number, "minItems": 1},
                    },
                },
                "domain": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"radius": _positive},
                },
            },
        },
        "lower_order": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "A": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["i", "j", "coefficients"],
                        "properties": {
                            "i": {"type": "integer", "minimum": 0},
                            "j": {"type": "integer", "minimum": 0},
                            "coefficients": {"type": "array", "items": _number, "minItems": 1},
                        },
                    },
                }
            },
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "seed": {"type": "integer", "minimum": 0},
                "basepoint": _vector,
                "step": _positive,
                "grid": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "center": _vector,
                        "half_width": _positive,
                        "points": {"type": "integer", "minimum": 9, "maximum": 41},
                    },
                },
                "loops": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "sides": {"type": "array", "items": _positive, "minItems": 2, "maxItems": 2},
                    },
                },
                "oracle": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "degree": {"type": ["integer", "null"], "minimum": 0},
                        "sample_factor": {"type": "integer", "minimum": 3},
                        "radius": _positive,
                    },
                },
                "tolerances": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {k: _positive for k in TOLERANCE_DEFAULTS},
                },
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string"},
                "formats": {
                    "type": "array",
                    "items": {"enum": ["json", "csv"]},
                    "uniqueItems": True,
                },
            },
        },
    },
}


def _defaults(n: int) -> dict:
    return {
        "metric": {"family": "flat", "params": {}, "domain": {}},
        "lower_order": {"A": []},
        "run": {
            "seed": 0,
            "basepoint": [0.0] * n,
            "step": 1e-3,
            "grid": {"center": [0.0] * n, "half_width": 0.1, "points": 21},
            "loops": {"sides": [0.4, 0.8]},
            "oracle": {"degree": None, "sample_factor": 3, "radius": 1.0},
            "tolerances": dict(TOLERANCE_DEFAULTS),
        },
        "output": {"directory": "out", "formats": ["json", "csv"]},
    }


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def env_overrides(environ=None) -> dict:
    """Tolerance overrides from ``BGGPROLONG_TOL_<NAME>`` variables."""
    environ = os.environ if environ is None else environ
    out = {}
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        name = key[len(ENV_PREFIX):].lower()
        if name not in TOLERANCE_DEFAULTS:
            raise ConfigError(f"{key} does not name a known tolerance ({', '.join(TOLERANCE_DEFAULTS)})")
        try:
            value = float(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}={raw!r} is not a number") from exc
        if not value > 0:
            raise ConfigError(f"{key} must be positive")
        out[name] = value
    return out


def resolve_config(raw: dict, environ=None) -> dict:
    """Validate, fill defaults, apply environment overrides and cross-field rules."""
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config schema violation at {path}: {exc.message}") from None
    n = raw["algebra"]["n"]
    cfg = _merge(_defaults(n), raw)
    cfg["module"].setdefault("r", 1 if cfg["module"]["family"] == "adjoint" else 2)
    cfg["run"]["tolerances"].update(env_overrides(environ))
    fam, r = cfg["module"]["family"], cfg["module"]["r"]
    metric = cfg["metric"]["family"]
    if fam == "adjoint" and n < 3:
        raise ConfigError("the adjoint module needs n >= 3")
    if fam == "adjoint" and r != 1:
        raise ConfigError("the adjoint module is only supported with r = 1")
    if metric != "flat" and not (fam == "scalar" and r == 2):
        raise ConfigError("curved metrics are supported only for the scalar module with r = 2")
    if cfg["lower_order"]["A"] and not (fam == "scalar" and r == 2):
        raise ConfigError("a lower-order tensor A needs the scalar module with r = 2")
    if metric == "conformal_poly" and "coefficients" not in cfg["metric"]["params"]:
        raise ConfigError("conformal_poly metrics need params.coefficients")
    for key in ("basepoint",):
        if len(cfg["run"][key]) != n:
            raise ConfigError(f"run.{key} must have {n} entries")
    if len(cfg["run"]["grid"]["center"]) != n:
        raise ConfigError(f"run.grid.center must have {n} entries")
    for entry in cfg["lower_order"]["A"]:
        if entry["i"] >= n or entry["j"] >= n:
            raise ConfigError("lower_order.A indices must be < n")
    return cfg


def load_config(path, environ=None) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return resolve_config(raw, environ)
