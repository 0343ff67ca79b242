"""Scenario configuration: JSON, ``schema: 1``, validated before use."""
from __future__ import annotations

import json
import re

import jsonschema
import numpy as np

from .errors import InvalidSpec
from .exo import exo_from_dict
from .plant import LinearPlant

_num = {"type": "number"}
_vec = {"type": "array", "items": _num}
_mat = {"type": "array", "items": _vec}
_exo = {
    "type": "object",
    "properties": {"kind": {"enum": ["step", "ramp", "sine", "custom"]}, "omega": _num,
                   "R": _mat, "Q": {"anyOf": [_mat, _vec]}, "expected_magnitude": _num},
    "required": ["kind"], "additionalProperties": False,
}
_linear_plant = {
    "type": "object",
    "properties": {
        "type": {"const": "linear"}, "F": _mat, "G": {"anyOf": [_vec, _mat]}, "E": {"anyOf": [_mat, _vec]},
        "H": _mat, "J": {"anyOf": [_vec, _mat]}, "K": {"anyOf": [_mat, _vec]}, "box": _mat,
        "fault_name": {"type": "string"}, "disturbance_names": {"type": "array", "items": {"type": "string"}},
    },
    "required": ["type", "F", "G", "H", "J"], "additionalProperties": False,
}
_builtin_plant = {
    "type": "object",
    "properties": {
        "type": {"const": "builtin"}, "model": {"const": "reactor"},
        "observer": {"enum": ["observer1", "observer2"]},
        "params": {"type": "object", "additionalProperties": _num},
        "paper_literal": {"type": "boolean"}, "time_unit": {"enum": ["seconds", "minutes"]},
        "w_scale": _num,
    },
    "required": ["type", "model", "observer"], "additionalProperties": False,
}
_fault = {
    "type": "object",
    "properties": {"channel": {"type": "string"}, "exo": _exo, "onset": {"type": "number", "minimum": 0},
                   "x_o0": _vec},
    "required": ["channel", "exo", "onset", "x_o0"], "additionalProperties": False,
}
_dist = {
    "type": "object",
    "properties": {"channel": {"type": "string"}, "value": _num, "times": _vec, "values": _vec},
    "required": ["channel"], "additionalProperties": False,
}
SCHEMA = {
    "type": "object",
    "properties": {
        "schema": {"const": 1},
        "name": {"type": "string"},
        "plant": {"oneOf": [_linear_plant, _builtin_plant]},
        "exo": _exo,
        "s": {"type": "integer", "minimum": 1},
        "alpha": {
            "type": "object",
            "properties": {"mode": {"enum": ["fixed", "eigenvalues", "free"]},
                           "values": {"type": "array"}, "budget": {"type": "integer", "minimum": 1}},
            "required": ["mode"], "additionalProperties": False,
        },
        "check": {
            "type": "object",
            "properties": {"samples": {"type": "integer", "minimum": 1}, "tol": {"type": ["number", "null"]},
                           "max_order": {"type": "integer", "minimum": 1},
                           "lie_mode": {"enum": ["auto", "numeric", "analytic"]}},
            "additionalProperties": False,
        },
        "simulation": {
            "type": "object",
            "properties": {"t_end": {"type": "number", "minimum": 0}, "dt": {"type": "number", "exclusiveMinimum": 0},
                           "x0": _vec, "e0": {"type": "array", "items": {"anyOf": [_vec, _num]}},
                           "substeps": {"type": "integer", "minimum": 1},
                           "faults": {"type": "array", "items": _fault},
                           "disturbances": {"type": "array", "items": _dist}},
            "required": ["t_end", "dt"], "additionalProperties": False,
        },
        "output": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
    },
    "required": ["schema", "plant"], "additionalProperties": False,
}


class ConfigError(InvalidSpec):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


def _locate(text: str, path) -> int | None:
    """Best-effort line of the deepest key in ``path``."""
    pos, line = 0, None
    for key in path:
        if not isinstance(key, str):
            continue
        m = re.compile(r'"%s"\s*:' % re.escape(key)).search(text, pos)
        if m is None:
            break
        pos = m.start()
        line = text.count("\n", 0, pos) + 1
    return line


def parse_config(text: str) -> dict:
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", exc.lineno) from None
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        path = list(err.absolute_path)
        if err.validator == "additionalProperties":
            m = re.search(r"'([^']+)' was unexpected", err.message)
            if m:
                path.append(m.group(1))
        raise ConfigError(f"{where}: {err.message}", _locate(text, path))
    _semantic(cfg, text)
    return cfg


def load_config(path) -> dict:
    with open(path) as fh:
        return parse_config(fh.read())


def _semantic(cfg, text):
    plant = cfg["plant"]
    if plant["type"] == "linear" and "exo" not in cfg:
        raise ConfigError("linear plants need an 'exo' entry", _locate(text, ["plant"]))
    if plant["type"] == "builtin" and cfg.get("s", 1) != 1:
        raise ConfigError("the reactor observers are scalar (s = 1)", _locate(text, ["s"]))
    alpha = cfg.get("alpha")
    if alpha and alpha["mode"] != "free" and "values" not in alpha:
        raise ConfigError(f"alpha mode {alpha['mode']!r} needs 'values'", _locate(text, ["alpha"]))
    for d in cfg.get("simulation", {}).get("disturbances", []):
        has_c, has_p = "value" in d, ("times" in d or "values" in d)
        if has_c == has_p:
            raise ConfigError("a disturbance is either {'value'} or {'times', 'values'}",
                              _locate(text, ["simulation", "disturbances"]))


def linear_plant_from(cfg_plant: dict) -> LinearPlant:
    F = np.array(cfg_plant["F"], dtype=float)
    H = np.array(cfg_plant["H"], dtype=float)
    n, p = F.shape[0], H.shape[0]
    E = np.array(cfg_plant.get("E", np.zeros((n, 0))), dtype=float)
    if E.ndim == 1:
        E = E.reshape(n, -1) if E.size else np.zeros((n, 0))
    K = np.array(cfg_plant.get("K", np.zeros((p, E.shape[1]))), dtype=float)
    if K.ndim == 1:
        K = K.reshape(p, -1) if K.size else np.zeros((p, E.shape[1]))
    return LinearPlant(F, np.array(cfg_plant["G"], dtype=float), E, H, np.array(cfg_plant["J"], dtype=float), K,
                       fault_name=cfg_plant.get("fault_name", "f"),
                       disturbance_names=tuple(cfg_plant.get("disturbance_names", ())),
                       box=cfg_plant.get("box"))


def exo_from(cfg_exo: dict):
    return exo_from_dict(cfg_exo)
