"""Strict JSON experiment configuration."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

from ..curves import CurveSpec, GStar, curve_from_dict
from ..engine import ConfigurationError, SimConfig

PRESETS = ("front-lag", "max-density", "cstar", "surf-census", "self-correction",
           "mass-floor", "bounds-verify", "envelope", "strip-growth")
DEFAULT_M_LIST = (0.25, 0.5, 0.75)
SIM_PRESETS = ("front-lag", "max-density", "cstar", "surf-census", "self-correction",
               "mass-floor", "strip-growth")


class ConfigError(ValueError):
    def __init__(self, location: str, message: str):
        super().__init__(f"{location}: {message}")
        self.location = location


# parameter name -> (type, default); a default of REQUIRED must be supplied
REQUIRED = object()
PRESET_PARAMS: dict[str, dict[str, tuple]] = {
    "front-lag": {},
    "cstar": {},
    "max-density": {"t_start": (float, 2.0)},
    "surf-census": {"thresholds": (list, [0.5, 1.0, 2.0, 4.0])},
    "self-correction": {"window": (list, REQUIRED), "t0": (float, 0.0), "t1": (float, REQUIRED)},
    "mass-floor": {"beta": (float, None), "tol": (float, 1e-6)},
    "strip-growth": {"tubes": (list, REQUIRED), "eps": (float, 0.5)},
    "bounds-verify": {"n_steps": (int, 1024)},
    "envelope": {"c": (float, REQUIRED), "t_list": (list, [1e4, 1e5, 1e6]),
                 "beta": (float, None), "n_grid": (int, 20001)},
}
CURVES_REQUIRED = ("surf-census", "mass-floor")


@dataclass
class ExperimentConfig:
    preset: str
    sim: SimConfig = field(default_factory=SimConfig)
    replicates: int = 1
    m_list: tuple = DEFAULT_M_LIST
    curves: list = field(default_factory=list)
    output_dir: str | None = None
    record_every: int = 100
    params: dict = field(default_factory=dict)
    workers: int = 1

    def to_dict(self) -> dict:
        sim = asdict(self.sim)
        sim["initial"] = [list(p) for p in self.sim.initial]
        return {"preset": self.preset, "sim": sim, "replicates": self.replicates,
                "m_list": list(self.m_list), "curves": [c.to_dict() for c in self.curves],
                "output_dir": self.output_dir, "record_every": self.record_every,
                "params": dict(self.params), "workers": self.workers}


def sim_hash(sim: SimConfig) -> str:
    d = asdict(sim)
    d["initial"] = [[float(x).hex(), float(m).hex()] for x, m in sim.initial]
    d["dt"] = float(sim.dt).hex()
    d["horizon"] = float(sim.horizon).hex()
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return (isinstance(v, (int, float)) and not isinstance(v, bool)) and math.isfinite(v)


_SIM_TYPES = {"dt": "num", "horizon": "num", "seed": "int", "max_particles": "int",
              "dynamics_mode": "str", "motion_frozen": "bool", "branching_disabled": "bool",
              "initial": "pairs", "check_invariants": "bool"}


def _check(loc, v, kind):
    ok = {"num": _is_num, "int": _is_int, "str": lambda x: isinstance(x, str),
          "bool": lambda x: isinstance(x, bool), "list": lambda x: isinstance(x, list),
          "dict": lambda x: isinstance(x, dict)}
    if kind == "pairs":
        if not isinstance(v, list):
            raise ConfigError(loc, "expected a list of [position, mass] pairs")
        for i, p in enumerate(v):
            if not (isinstance(p, list) and len(p) == 2 and all(_is_num(q) for q in p)):
                raise ConfigError(f"{loc}[{i}]", "expected [position, mass]")
        return
    if not ok[kind](v):
        raise ConfigError(loc, f"expected {kind}, got {type(v).__name__}")


def _parse_sim(d) -> SimConfig:
    _check("sim", d, "dict")
    for k, v in d.items():
        if k not in _SIM_TYPES:
            raise ConfigError(f"sim.{k}", f"unknown key {k!r}")
        _check(f"sim.{k}", v, _SIM_TYPES[k])
    try:
        return SimConfig(**d)
    except ConfigurationError as err:
        raise ConfigError("sim", str(err)) from None


_TOP = {"preset", "sim", "replicates", "m_list", "curves", "output_dir", "record_every",
        "params", "workers"}


def config_from_dict(d: dict) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ConfigError("<root>", "expected a JSON object")
    for k in d:
        if k not in _TOP:
            raise ConfigError(k, f"unknown key {k!r}")
    if "preset" not in d:
        raise ConfigError("preset", "missing required field")
    preset = d["preset"]
    if preset not in PRESETS:
        raise ConfigError("preset", f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    sim = _parse_sim(d.get("sim", {}))
    replicates = d.get("replicates", 1)
    _check("replicates", replicates, "int")
    if replicates < 1:
        raise ConfigError("replicates", "must be >= 1")
    record_every = d.get("record_every", 100)
    _check("record_every", record_every, "int")
    if record_every < 1:
        raise ConfigError("record_every", "must be >= 1")
    workers = d.get("workers", 1)
    _check("workers", workers, "int")
    if workers < 1:
        raise ConfigError("workers", "must be >= 1")
    m_list = d.get("m_list", list(DEFAULT_M_LIST))
    _check("m_list", m_list, "list")
    for i, m in enumerate(m_list):
        if not (_is_num(m) and m > 0):
            raise ConfigError(f"m_list[{i}]", "thresholds must be positive numbers")
    raw_curves = d.get("curves", [])
    _check("curves", raw_curves, "list")
    curves: list[CurveSpec] = []
    for i, c in enumerate(raw_curves):
        try:
            curves.append(curve_from_dict(c))
        except (TypeError, ValueError, KeyError) as err:
            raise ConfigError(f"curves[{i}]", str(err)) from None
    out_dir = d.get("output_dir")
    if out_dir is not None:
        _check("output_dir", out_dir, "str")
    params = d.get("params", {})
    _check("params", params, "dict")
    spec = PRESET_PARAMS[preset]
    full = {}
    for k, v in params.items():
        if k not in spec:
            raise ConfigError(f"params.{k}", f"unknown parameter {k!r} for preset {preset}")
    for k, (kind, default) in spec.items():
        if k in params:
            v = params[k]
            want = {float: "num", int: "int", list: "list"}[kind]
            _check(f"params.{k}", v, want)
            full[k] = float(v) if kind is float else v
        elif default is REQUIRED:
            raise ConfigError(f"params.{k}", f"missing required field for preset {preset}")
        else:
            full[k] = default
    if preset in CURVES_REQUIRED and not curves:
        raise ConfigError("curves", f"preset {preset} needs at least one curve")
    if preset == "cstar" and not curves:
        curves = [GStar()]
    if preset == "self-correction":
        w = full["window"]
        if not (len(w) == 2 and all(_is_num(x) for x in w) and w[0] < w[1]):
            raise ConfigError("params.window", "expected [lo, hi] with lo < hi")
        if not full["t1"] > full["t0"]:
            raise ConfigError("params.t1", "must exceed params.t0")
    return ExperimentConfig(preset=preset, sim=sim, replicates=replicates,
                            m_list=tuple(float(m) for m in m_list), curves=curves,
                            output_dir=out_dir, record_every=record_every, params=full,
                            workers=workers)


def parse_config(text: str) -> ExperimentConfig:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"line {err.lineno}", f"invalid JSON: {err.msg}") from None
    return config_from_dict(d)
