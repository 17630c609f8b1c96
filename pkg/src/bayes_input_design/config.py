"""Experiment configuration: JSON documents, schema and consistency checks.

Matrices are row-major nested lists; ``system.B`` is the list
``[B_0, B_1, ..., B_p]`` of n x m matrices.  Every field is explicit, so the
echo written next to the results is the whole configuration.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Dict, Optional, Union

import jsonschema
import numpy as np

from .bayes import GaussianBelief
from .errors import ConfigError, DesignError
from .optimizer import OptimizerConfig
from .sysmodel import LinearParamSystem

METHODS = ("classical", "ensemble-exact", "ensemble-atoms")

_matrix = {"type": "array", "minItems": 1, "items": {"type": "array", "minItems": 1, "items": {"type": "number"}}}
_vector = {"type": "array", "minItems": 1, "items": {"type": "number"}}
_pos = {"type": "number", "exclusiveMinimum": 0}

SCHEMA: Dict[str, Any] = {
    "type": "object",
    "required": ["system", "prior", "design", "optimizer", "ensemble", "experiment", "output"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "calibration_note": {"type": "string"},
        "system": {
            "type": "object",
            "required": ["A", "B", "C", "sigma", "T"],
            "additionalProperties": False,
            "properties": {
                "A": _matrix,
                "B": {"type": "array", "minItems": 2, "items": _matrix},
                "C": _matrix,
                "sigma": _matrix,
                "T": _pos,
            },
        },
        "prior": {
            "type": "object",
            "required": ["mean", "cov"],
            "additionalProperties": False,
            "properties": {"mean": _vector, "cov": _matrix},
        },
        "design": {
            "type": "object",
            "required": ["alpha", "K", "V"],
            "additionalProperties": False,
            "properties": {
                "alpha": _pos,
                "K": {"type": "integer", "minimum": 2},
                "V": {"oneOf": [{"type": "null"}, _vector]},
            },
        },
        "optimizer": {
            "type": "object",
            "required": ["steps", "step_size", "method", "backtracking", "eta", "seed"],
            "additionalProperties": False,
            "properties": {
                "steps": {"type": "integer", "minimum": 1},
                "step_size": _pos,
                "method": {"enum": ["fista", "gradient"]},
                "backtracking": {"type": "boolean"},
                "eta": {"type": "number", "minimum": 0},
                "seed": {"oneOf": [{"type": "null"}, {"type": "integer", "minimum": 0}]},
            },
        },
        "ensemble": {
            "type": "object",
            "required": ["mode", "N", "radius", "weights"],
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["exact", "atoms"]},
                "N": {"type": "integer", "minimum": 1},
                "radius": _pos,
                "weights": {"enum": ["cell", "density"]},
            },
        },
        "experiment": {
            "type": "object",
            "required": ["theta_true", "noise_seed", "control"],
            "additionalProperties": False,
            "properties": {
                "theta_true": _vector,
                "noise_seed": {"type": "integer", "minimum": 0},
                "control": {"oneOf": [{"type": "null"}, _matrix]},
            },
        },
        "output": {
            "type": "object",
            "required": ["directory", "formats"],
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string"},
                "formats": {"type": "array", "items": {"enum": ["csv", "json", "svg"]}, "uniqueItems": True},
            },
        },
        "acceptance": {"type": "object"},
    },
}


def _path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def _matrix_array(raw, path: str) -> np.ndarray:
    widths = {len(row) for row in raw}
    if len(widths) != 1:
        raise ConfigError(path, "ragged matrix: rows have different lengths")
    a = np.array(raw, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ConfigError(path, "entries must be finite")
    return a


def _vector_array(raw, path: str) -> np.ndarray:
    a = np.array(raw, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ConfigError(path, "entries must be finite")
    return a


def canonical_json(tree) -> str:
    return json.dumps(tree, sort_keys=True, separators=(",", ":"), allow_nan=False)


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Validated configuration plus the arrays it describes."""

    raw: Dict[str, Any]
    system: LinearParamSystem
    prior: GaussianBelief
    alpha: float
    K: int
    V: Optional[np.ndarray]
    theta_true: np.ndarray
    control: Optional[np.ndarray]

    @property
    def sha256(self) -> str:
        return hashlib.sha256(canonical_json(self.raw).encode()).hexdigest()

    @property
    def noise_seed(self) -> int:
        return int(self.raw["experiment"]["noise_seed"])

    @property
    def ensemble(self) -> Dict[str, Any]:
        return self.raw["ensemble"]

    @property
    def acceptance(self) -> Dict[str, Any]:
        return self.raw.get("acceptance", {})

    def optimizer_config(self, paper_faithful: bool = False) -> OptimizerConfig:
        o = self.raw["optimizer"]
        if paper_faithful:
            return OptimizerConfig.paper_faithful(steps=o["steps"], step_size=o["step_size"])
        return OptimizerConfig(steps=o["steps"], step_size=o["step_size"], method=o["method"],
                               backtracking=o["backtracking"])

    def replace(self, **updates) -> "ExperimentConfig":
        """New validated config with dotted-path overrides, e.g. ``{"system.T": 20.0}``."""
        raw = copy.deepcopy(self.raw)
        for key, value in updates.items():
            node = raw
            *head, last = key.split(".")
            for h in head:
                node = node[h]
            node[last] = value
        return parse_config(raw)


def parse_config(tree: Dict[str, Any]) -> ExperimentConfig:
    """Validate a configuration tree and build the model objects.

    Raises
    ------
    ConfigError
        With the dotted path of the offending field.
    """
    try:
        canonical_json(tree)
    except ValueError as exc:
        raise ConfigError("<root>", f"not representable as strict JSON ({exc})") from None
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(tree), key=lambda e: (len(e.path), list(map(str, e.path))))
    if errors:
        e = errors[0]
        raise ConfigError(_path(e.absolute_path), e.message)

    s = tree["system"]
    A = _matrix_array(s["A"], "system.A")
    n = A.shape[0]
    if A.shape != (n, n):
        raise ConfigError("system.A", f"must be square, got {A.shape[0]}x{A.shape[1]}")
    Bs = [_matrix_array(b, f"system.B[{j}]") for j, b in enumerate(s["B"])]
    m = Bs[0].shape[1]
    for j, b in enumerate(Bs):
        if b.shape[0] != n:
            raise ConfigError(f"system.B[{j}]", f"must have n = {n} rows, got {b.shape[0]}")
        if b.shape[1] != m:
            raise ConfigError(f"system.B[{j}]", f"must have m = {m} columns like B[0], got {b.shape[1]}")
    C = _matrix_array(s["C"], "system.C")
    if C.shape[1] != n:
        raise ConfigError("system.C", f"must have n = {n} columns, got {C.shape[1]}")
    q = C.shape[0]
    sigma = _matrix_array(s["sigma"], "system.sigma")
    if sigma.shape != (q, q):
        raise ConfigError("system.sigma", f"must be {q}x{q} (one row per output), got {sigma.shape[0]}x{sigma.shape[1]}")
    p = len(Bs) - 1

    pr = tree["prior"]
    mean = _vector_array(pr["mean"], "prior.mean")
    if mean.shape != (p,):
        raise ConfigError("prior.mean", f"must have length p = {p}, got {mean.size}")
    cov = _matrix_array(pr["cov"], "prior.cov")
    if cov.shape != (p, p):
        raise ConfigError("prior.cov", f"must be {p}x{p}, got {cov.shape[0]}x{cov.shape[1]}")
    if np.max(np.abs(cov - cov.T)) > 1e-12 * max(1.0, np.max(np.abs(cov))):
        raise ConfigError("prior.cov", "must be symmetric")
    if np.linalg.eigvalsh(cov)[0] <= 0:
        raise ConfigError("prior.cov", "must be positive definite")

    d = tree["design"]
    V = None
    if d["V"] is not None:
        V = _vector_array(d["V"], "design.V")
        if V.shape != (p,):
            raise ConfigError("design.V", f"must have length p = {p}, got {V.size}")
        if np.linalg.norm(V) == 0:
            raise ConfigError("design.V", "must be nonzero")

    ens = tree["ensemble"]
    if ens["mode"] == "atoms" and p != 1:
        raise ConfigError("ensemble.mode", f"atoms are only available for a scalar parameter, got p = {p}")

    ex = tree["experiment"]
    theta_true = _vector_array(ex["theta_true"], "experiment.theta_true")
    if theta_true.shape != (p,):
        raise ConfigError("experiment.theta_true", f"must have length p = {p}, got {theta_true.size}")
    control = None
    if ex["control"] is not None:
        control = _matrix_array(ex["control"], "experiment.control")
        K = d["K"]
        if control.shape != (K, m):
            raise ConfigError("experiment.control", f"must be K x m = {K}x{m}, got {control.shape[0]}x{control.shape[1]}")
        worst = float(np.max(np.abs(control)))
        if worst > 1.0:
            raise ConfigError("experiment.control", f"violates the bound |u| <= 1 (max |u| = {worst:g})")

    try:
        system = LinearParamSystem(A=A, B=np.stack(Bs), C=C, sigma=sigma, T=float(s["T"]))
    except DesignError as exc:
        raise ConfigError("system", str(exc)) from None
    try:
        prior = GaussianBelief(mean, cov)
    except DesignError as exc:
        raise ConfigError("prior", str(exc)) from None
    return ExperimentConfig(raw=copy.deepcopy(tree), system=system, prior=prior, alpha=float(d["alpha"]),
                            K=int(d["K"]), V=V, theta_true=theta_true, control=control)


def load_config(source: Union[str, Path, Dict[str, Any]]) -> ExperimentConfig:
    """Read and validate a configuration from a path, or validate a parsed tree."""
    if isinstance(source, dict):
        return parse_config(source)
    path = Path(source)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read file ({exc.strerror})") from None
    try:
        tree = json.loads(text, parse_constant=lambda c: math.nan)
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(tree, dict):
        raise ConfigError("<root>", "configuration must be a JSON object")
    return parse_config(tree)


def preset_path(name: str = "oscillator") -> Path:
    return Path(str(resources.files("bayes_input_design") / "presets" / f"{name}.json"))


def load_preset(name: str = "oscillator") -> ExperimentConfig:
    return load_config(preset_path(name))
