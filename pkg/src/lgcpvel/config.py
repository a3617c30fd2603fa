"""Versioned run configuration for the command-line pipeline.

A run configuration is a JSON document.  Missing sections take the defaults
below; unknown keys anywhere are rejected.  The hash written into every
output file covers the resolved document minus ``output_dir``, so moving a
run to a different directory does not change its artifacts.
"""

from __future__ import annotations

import copy
import math
import json
import os
from pathlib import Path

import jsonschema

from . import io

CONFIG_VERSION = 1
OUTPUT_ENV = "LGCPVEL_OUTPUT_DIR"


class ConfigError(ValueError):
    """Invalid or unreadable run configuration."""


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int3 = {"type": "integer", "minimum": 3}
_path = {"type": ["string", "null"]}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_covariance = _obj(
    {"sigma2": _pos, "kappa": _pos, "nu": _pos, "a": {"type": "number", "minimum": 0, "exclusiveMaximum": 1}},
    ("sigma2", "kappa"),
)

SCHEMA = _obj({
    "version": {"const": CONFIG_VERSION},
    "seed": {"type": "integer", "minimum": 0},
    "output_dir": _path,
    "grid": _obj({
        "x0": _num, "y0": _num, "t0": _num,
        "nx": _int3, "ny": _int3, "nt": _int3,
        "dx": _pos, "dy": _pos, "dt": _pos,
    }),
    "inputs": _obj({"cases": _path, "raster": _path, "counts": _path, "population_points": _path}),
    "simulate": _obj({
        "source": {"enum": ["oracle", "lgcp", "constant"]},
        "oracle": _obj({
            "lambda0": _pos, "beta0": _num, "beta1": _num, "beta2": _num, "beta3": _num,
            "expected_count": {"type": ["number", "null"], "exclusiveMinimum": 0},
            "max_proposals": _pos,
        }),
        "lgcp": _obj({"covariance": _covariance, "beta": _num, "eta": {"type": "number", "minimum": 0},
                      "mu": {"type": "number", "minimum": 0}}),
        "constant_rate": {"type": "number", "minimum": 0},
    }),
    "temporal": _obj({
        "day_of_week": {"type": "boolean"},
        "fourier_order": {"type": "integer", "minimum": 0},
        "omega": _pos,
        "poly_degree": {"type": "integer", "minimum": 0},
        "include_intercept": {"type": "boolean"},
        "day0": {"oneOf": [{"type": "null"}, {"type": "integer", "minimum": 0, "maximum": 6},
                          {"enum": ["sun", "mon", "tue", "wed", "thu", "fri", "sat"]}]},
    }),
    "offset": _obj({"kind": {"enum": ["raster", "kernel", "uniform"]}, "bandwidth": {"type": ["number", "null"], "exclusiveMinimum": 0}}),
    "fit": _obj({
        "candidates": {"oneOf": [{"const": "default"}, {"type": "array", "minItems": 1, "items": _covariance}]},
        "nu": _pos,
        "max_iter": {"type": "integer", "minimum": 1},
        "tol": _pos,
        "fixed_beta": {"type": ["number", "null"]},
    }),
    "velocity": _obj({
        "input": _path,
        "time_scheme": {"enum": ["symmetric", "first_order_last"]},
        "boundary": {"enum": ["mask", "one_sided"]},
        "gradient_floor": {"type": "number", "minimum": 0},
        "times": {"type": ["array", "null"], "items": {"type": "integer"}},
    }),
    "validate": _obj({
        "dt_override": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "checks": {"type": ["array", "null"], "items": {"type": "string"}},
    }),
})

DEFAULTS = {
    "version": CONFIG_VERSION,
    "seed": 20240611,
    "output_dir": None,
    "grid": {"x0": 0.0, "y0": 0.0, "t0": 0.0, "nx": 30, "ny": 30, "nt": 20,
             "dx": 1 / 30, "dy": 1 / 30, "dt": 1 / 20},
    "inputs": {"cases": None, "raster": None, "counts": None, "population_points": None},
    "simulate": {
        "source": "oracle",
        "oracle": {"lambda0": 100.0, "beta0": -1.5, "beta1": 8.0, "beta2": 2.0, "beta3": 2.0,
                   "expected_count": 7840.0, "max_proposals": 5e8},
        "lgcp": {"covariance": {"sigma2": 1.0, "kappa": 10.0, "nu": 1.5, "a": 0.5},
                 "beta": 0.0, "eta": 1.0, "mu": 100.0},
        "constant_rate": 0.0,
    },
    "temporal": {"day_of_week": False, "fourier_order": 0, "omega": 2 * math.pi / 365,
                 "poly_degree": 0, "include_intercept": True, "day0": None},
    "offset": {"kind": "uniform", "bandwidth": None},
    "fit": {"candidates": "default", "nu": 1.5, "max_iter": 100, "tol": 1e-8, "fixed_beta": None},
    "velocity": {"input": None, "time_scheme": "symmetric", "boundary": "mask",
                 "gradient_floor": 1e-6, "times": None},
    "validate": {"dt_override": None, "checks": None},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _error_path(err) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def validate_document(doc: dict):
    """Raise :class:`ConfigError` naming the first offending field."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ConfigError(f"config field {_error_path(e)}: {e.message}")


def set_path(doc: dict, dotted: str, value):
    keys = dotted.split(".")
    cur = doc
    for k in keys[:-1]:
        if not isinstance(cur.get(k), dict):
            raise ConfigError(f"unknown config section {dotted!r}")
        cur = cur[k]
    if keys[-1] not in cur:
        raise ConfigError(f"unknown config field {dotted!r}")
    cur[keys[-1]] = value


def load(path=None, overrides=()) -> dict:
    """Resolve defaults, the optional JSON file and ``(dotted_key, value)`` overrides.

    Relative input paths in a config file are taken relative to that file.
    """
    doc = {}
    base_dir = None
    if path is not None:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path}: line {exc.lineno}: {exc.msg}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path}: top level must be an object")
        base_dir = Path(path).resolve().parent
    validate_document(doc)
    cfg = _merge(DEFAULTS, doc)
    if base_dir is not None:
        for sect, key in (("inputs", "cases"), ("inputs", "raster"), ("inputs", "counts"),
                          ("inputs", "population_points"), ("velocity", "input")):
            p = cfg[sect][key]
            if p is not None and not Path(p).is_absolute():
                cfg[sect][key] = str(base_dir / p)
    for key, value in overrides:
        set_path(cfg, key, value)
    validate_document(cfg)
    return cfg


def output_dir(cfg: dict) -> Path:
    return Path(cfg["output_dir"] or os.environ.get(OUTPUT_ENV) or "lgcpvel-out")


def digest(cfg: dict) -> str:
    return io.config_hash({k: v for k, v in cfg.items() if k != "output_dir"})
