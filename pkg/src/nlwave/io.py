"""
Problem configuration files and run artifacts.

A configuration is a JSON object::

    {
      "a": [["const", 1.0], ["cos", 1, 0.3]],
      "f": [{"power": 0, "amplitude": 1.0, "t": ["cos", 1], "x": ["cos", 1]},
            {"power": 2}],
      "epsilon": 1e-3,
      "omega": 1.37,
      "params": {"gamma": 0.1, "N0": 8},
      "sweep": {"interval": [1.05, 1.95], "grid_points": 10000,
                "gammas": [0.05, 0.1, 0.2], "mode": "frozen", "N": 4},
      "eigen": {"bands": 30, "modes": 128, "d": [["const", 1.0]]},
      "output_dir": "out"
    }

All files are written atomically (temporary file, then rename).
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from .nash_moser import Problem, SolverParams
from .spectral import FourierField, NonlinearitySpec, PositivityError, TimeFunction, check_positive

__all__ = [
    "ConfigError",
    "ConfigParseError",
    "ConfigValidationError",
    "ProblemConfig",
    "load_config",
    "parse_config",
    "dump_config",
    "a_from_terms",
    "atomic_write",
    "write_csv",
    "read_csv",
    "solution_to_json",
    "load_solution",
]


class ConfigError(ValueError):
    exit_code = 3


class ConfigParseError(ConfigError):
    exit_code = 2


class ConfigValidationError(ConfigError):
    """Invalid configuration; ``path`` names the offending field."""

    exit_code = 3

    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


PARAM_FIELDS = {f.name: f for f in fields(SolverParams)}
SWEEP_DEFAULTS = {"grid_points": 1000, "gammas": None, "mode": "frozen", "N": 4}
EIGEN_DEFAULTS = {"bands": 30, "modes": None, "d": None}


def _num(x, path: str) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ConfigValidationError(path, "expected a number")
    if not math.isfinite(x):
        raise ConfigValidationError(path, "expected a finite number")
    return float(x)


def _int(x, path: str) -> int:
    if isinstance(x, bool) or not isinstance(x, int):
        raise ConfigValidationError(path, "expected an integer")
    return int(x)


def _trig_terms(raw, path: str) -> list:
    if not isinstance(raw, list) or not raw:
        raise ConfigValidationError(path, "expected a non-empty list of terms")
    out = []
    for i, t in enumerate(raw):
        p = f"{path}[{i}]"
        if not isinstance(t, list) or not t or t[0] not in ("const", "cos", "sin"):
            raise ConfigValidationError(p, 'expected ["const", A], ["cos", k, A] or ["sin", k, A]')
        if t[0] == "const":
            if len(t) != 2:
                raise ConfigValidationError(p, '"const" takes one amplitude')
            out.append(["const", _num(t[1], p + "[1]")])
        else:
            if len(t) != 3:
                raise ConfigValidationError(p, f'"{t[0]}" takes a wavenumber and an amplitude')
            k = _int(t[1], p + "[1]")
            if k < 1:
                raise ConfigValidationError(p + "[1]", "wavenumber must be >= 1")
            out.append([t[0], k, _num(t[2], p + "[2]")])
    return out


def a_from_terms(terms: list) -> TimeFunction:
    return TimeFunction.from_trig([tuple(t) for t in terms])


def _factor(raw, path: str):
    if raw is None:
        return ["const"]
    if not isinstance(raw, list) or not raw or raw[0] not in ("const", "cos", "sin"):
        raise ConfigValidationError(path, 'expected ["const"], ["cos", k] or ["sin", k]')
    if raw[0] == "const":
        return ["const"]
    if len(raw) != 2:
        raise ConfigValidationError(path, "expected a wavenumber")
    k = _int(raw[1], path + "[1]")
    if k < 1:
        raise ConfigValidationError(path + "[1]", "wavenumber must be >= 1")
    return [raw[0], k]


def _f_terms(raw, path: str) -> list:
    if not isinstance(raw, list):
        raise ConfigValidationError(path, "expected a list of terms")
    out = []
    for i, t in enumerate(raw):
        p = f"{path}[{i}]"
        if not isinstance(t, dict):
            raise ConfigValidationError(p, "expected an object")
        extra = set(t) - {"power", "amplitude", "t", "x"}
        if extra:
            raise ConfigValidationError(p, f"unknown keys {sorted(extra)}")
        pw = _int(t.get("power", 0), p + ".power")
        if pw < 0:
            raise ConfigValidationError(p + ".power", "must be >= 0")
        out.append({"power": pw, "amplitude": _num(t.get("amplitude", 1.0), p + ".amplitude"),
                    "t": _factor(t.get("t"), p + ".t"), "x": _factor(t.get("x"), p + ".x")})
    return out


@dataclass
class ProblemConfig:
    """Validated configuration with defaults applied."""

    a: list
    f: list
    epsilon: float
    omega: float | None
    params: SolverParams
    sweep: dict | None = None
    eigen: dict = field(default_factory=lambda: dict(EIGEN_DEFAULTS))
    output_dir: str = "."

    def a_function(self) -> TimeFunction:
        return a_from_terms(self.a)

    def nonlinearity(self) -> NonlinearitySpec:
        return NonlinearitySpec.from_terms(self.f) if self.f else NonlinearitySpec(())

    def problem(self) -> Problem:
        if self.omega is None:
            raise ConfigValidationError("omega", "a scalar omega is required")
        return Problem(a=self.a_function(), f=self.nonlinearity(), eps=self.epsilon, omega=self.omega)

    def to_obj(self) -> dict:
        return {"a": self.a, "f": self.f, "epsilon": self.epsilon, "omega": self.omega,
                "params": self.params.to_dict(), "sweep": self.sweep, "eigen": self.eigen,
                "output_dir": self.output_dir}


def parse_config(obj: Any) -> ProblemConfig:
    """Validate a decoded JSON object and fill defaults."""
    if not isinstance(obj, dict):
        raise ConfigValidationError("$", "configuration must be a JSON object")
    known = {"a", "f", "epsilon", "omega", "params", "sweep", "eigen", "output_dir"}
    extra = set(obj) - known
    if extra:
        raise ConfigValidationError("$", f"unknown keys {sorted(extra)}")
    if "a" not in obj:
        raise ConfigValidationError("a", "missing")
    a = _trig_terms(obj["a"], "a")
    try:
        check_positive(a_from_terms(a))
    except PositivityError as exc:
        raise ConfigValidationError("a", f"a positivity: {exc}") from None
    f = _f_terms(obj.get("f", []), "f")
    eps = _num(obj.get("epsilon", 0.0), "epsilon")
    omega = obj.get("omega")
    if omega is not None:
        omega = _num(omega, "omega")
        if omega <= 0:
            raise ConfigValidationError("omega", "must be positive")
    raw_p = obj.get("params", {}) or {}
    if not isinstance(raw_p, dict):
        raise ConfigValidationError("params", "expected an object")
    kw = {}
    for k, v in raw_p.items():
        if k not in PARAM_FIELDS:
            raise ConfigValidationError(f"params.{k}", "unknown parameter")
        default = PARAM_FIELDS[k].default
        p = f"params.{k}"
        if isinstance(default, bool):
            if not isinstance(v, bool):
                raise ConfigValidationError(p, "expected a boolean")
            kw[k] = v
        elif isinstance(default, int):
            kw[k] = _int(v, p)
        elif isinstance(default, float):
            kw[k] = _num(v, p)
        else:
            if not isinstance(v, str):
                raise ConfigValidationError(p, "expected a string")
            kw[k] = v
    try:
        params = SolverParams(**kw)
    except ValueError as exc:
        raise ConfigValidationError("params", str(exc)) from None
    sweep = obj.get("sweep")
    if sweep is not None:
        sweep = _sweep(sweep, params)
    eigen = dict(EIGEN_DEFAULTS)
    raw_e = obj.get("eigen") or {}
    if not isinstance(raw_e, dict):
        raise ConfigValidationError("eigen", "expected an object")
    for k, v in raw_e.items():
        if k not in EIGEN_DEFAULTS:
            raise ConfigValidationError(f"eigen.{k}", "unknown key")
        if k == "d":
            eigen[k] = None if v is None else _trig_terms(v, "eigen.d")
        elif v is not None:
            eigen[k] = _int(v, f"eigen.{k}")
    out = obj.get("output_dir", ".")
    if not isinstance(out, str):
        raise ConfigValidationError("output_dir", "expected a string")
    return ProblemConfig(a=a, f=f, epsilon=eps, omega=omega, params=params, sweep=sweep,
                         eigen=eigen, output_dir=out)


def _sweep(raw, params: SolverParams) -> dict:
    if not isinstance(raw, dict):
        raise ConfigValidationError("sweep", "expected an object")
    extra = set(raw) - {"interval", "grid_points", "gammas", "mode", "N"}
    if extra:
        raise ConfigValidationError("sweep", f"unknown keys {sorted(extra)}")
    iv = raw.get("interval")
    if not isinstance(iv, list) or len(iv) != 2:
        raise ConfigValidationError("sweep.interval", "expected [lo, hi]")
    lo, hi = _num(iv[0], "sweep.interval[0]"), _num(iv[1], "sweep.interval[1]")
    if not 0 < lo < hi:
        raise ConfigValidationError("sweep.interval", "need 0 < lo < hi")
    out = dict(SWEEP_DEFAULTS)
    out["interval"] = [lo, hi]
    if "grid_points" in raw:
        out["grid_points"] = _int(raw["grid_points"], "sweep.grid_points")
        if out["grid_points"] < 2:
            raise ConfigValidationError("sweep.grid_points", "need at least 2 points")
    g = raw.get("gammas")
    if g is None:
        out["gammas"] = [params.gamma]
    else:
        g = g if isinstance(g, list) else [g]
        out["gammas"] = [_num(x, f"sweep.gammas[{i}]") for i, x in enumerate(g)]
        if any(x < 0 for x in out["gammas"]):
            raise ConfigValidationError("sweep.gammas", "must be nonnegative")
    mode = raw.get("mode", "frozen")
    if mode not in ("frozen", "coupled"):
        raise ConfigValidationError("sweep.mode", 'expected "frozen" or "coupled"')
    out["mode"] = mode
    if "N" in raw:
        out["N"] = _int(raw["N"], "sweep.N")
        if out["N"] < 1:
            raise ConfigValidationError("sweep.N", "must be >= 1")
    return out


def load_config(path) -> ProblemConfig:
    """Read and validate a configuration file.

    Raises
    ------
    ConfigParseError
        Unreadable file or invalid JSON (exit code 2).
    ConfigValidationError
        Semantic problems, with the field path (exit code 3).
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigParseError(f"cannot read {path}: {exc}") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigParseError(f"{path}: invalid JSON: {exc}") from None
    return parse_config(obj)


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def dump_config(cfg: ProblemConfig) -> str:
    """Canonical JSON text of a configuration (defaults included)."""
    return _canonical(cfg.to_obj())


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header: list, rows: list) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        vals = [r[h] for h in header] if isinstance(r, dict) else list(r)
        w.writerow([_fmt(v) for v in vals])
    atomic_write(path, buf.getvalue())


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.generic):
        return _clean(x.item())
    return x


def solution_to_json(u: FourierField, metadata: dict, trace_rows: list | None = None) -> str:
    return _canonical(_clean({"field": u.to_json_obj(), "metadata": metadata,
                              "trace": trace_rows or []}))


def load_solution(path) -> tuple[FourierField, dict, list]:
    obj = json.loads(Path(path).read_text())
    return FourierField.from_json_obj(obj["field"]), obj["metadata"], obj.get("trace", [])
