"""Experiment configuration: YAML files, defaults, dotted-path overrides and validation."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

import numpy as np
import yaml

from .model import CUTOFF_LADDER, K_A_DEFAULT, PRESETS, ModelParams

KINDS = (
    "spectrum-sweep",
    "ns-scaling",
    "dephasing",
    "kick-recovery",
    "semiclassical-sweep",
    "convergence-check",
)

DEFAULTS: dict[str, Any] = {
    "experiment": None,
    "model": {"preset": "paper-monostable"},
    "n": [1],
    "f_tilde": [1.8],
    "cutoffs": {"k_a": K_A_DEFAULT, "k_b": {}},
    "solver": {
        "method": "auto",
        "n_pairs": 6,
        "tol": 1e-9,
        "krylov_dim": None,
        "max_restarts": 3000,
        "seed": 0,
        "auto_dense_max": 2000,
        "dense_limit": 20000,
        "sigma": None,
        "fallback_dense": False,
    },
    "output": "results",
    "workers": 1,
    "cache": True,
    "options": {},
}

OPTION_DEFAULTS: dict[str, dict[str, Any]] = {
    "spectrum-sweep": {},
    "ns-scaling": {},
    "dephasing": {"rate": None, "sectors": ["eo", "oe"], "nonperturbative": True, "k_b_extra": 0},
    "kick-recovery": {
        "b": 0.5,
        "c0": 0.5,
        "t_kick": 2.5,
        "delta_phi": 1.0,
        "t_final": 20.0,
        "dt": 0.05,
        "mode": "master",
        "n_traj": 200,
        "seed": 0,
        "snapshot_times": [0.0, 2.5, 3.0, 5.0, 10.0, 20.0],
        "wigner_extent": 4.0,
        "wigner_step": 0.05,
        "co_rotate": True,
    },
    "semiclassical-sweep": {"direction": "down"},
    "convergence-check": {"k_b_ladder": [10, 14, 18], "sector": "eo", "stability_tol": 1e-6},
}

MODEL_KEYS = {"preset", "j", "delta", "u_tilde", "f_tilde", "gamma", "dephase_rate"}


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the offending dotted path."""

    def __init__(self, key: str, msg: str):
        self.key = key
        super().__init__(f"{key}: {msg}" if key else msg)


def _merge(base: dict, new: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in new.items():
        path = f"{prefix}{k}"
        if k not in base:
            raise ConfigError(path, "unknown key")
        if path != "model" and isinstance(base[k], dict) and base[k] and isinstance(v, dict):
            out[k] = _merge(base[k], v, path + ".")
        else:
            out[k] = v
    return out


def parse_override(text: str) -> tuple[list[str], Any]:
    """``a.b.c=value`` with the value parsed as YAML."""
    if "=" not in text:
        raise ConfigError(text, "override must look like dotted.key=value")
    key, raw = text.split("=", 1)
    return key.strip().split("."), yaml.safe_load(raw)


def apply_override(raw: dict, text: str) -> dict:
    path, value = parse_override(text)
    node = raw
    for part in path[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(".".join(path), f"{part} is not a mapping")
    node[path[-1]] = value
    return raw


def expand_grid(spec, key: str) -> list[float]:
    """A list, a scalar, or {start, stop, step} (inclusive of stop up to rounding)."""
    if isinstance(spec, dict):
        missing = {"start", "stop", "step"} - set(spec)
        if missing or set(spec) - {"start", "stop", "step"}:
            raise ConfigError(key, "grid mapping needs exactly start, stop, step")
        start, stop, step = float(spec["start"]), float(spec["stop"]), float(spec["step"])
        if step <= 0 or stop < start:
            raise ConfigError(key, "need step > 0 and stop >= start")
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 12) for i in range(n)]
    if isinstance(spec, (int, float)):
        return [float(spec)]
    if isinstance(spec, list) and spec:
        return [float(x) for x in spec]
    raise ConfigError(key, "grid must be a number, a nonempty list or {start, stop, step}")


@dataclass
class ExperimentConfig:
    kind: str
    params: ModelParams
    n_values: list[int]
    f_grid: list[float]
    k_a: int
    k_b: dict[int, int]
    solver: dict
    output: Path
    workers: int
    cache: bool
    options: dict
    raw: dict

    def space_for(self, n: int):
        from .fock import FockSpace

        return FockSpace(self.k_b[n], self.k_a)

    def params_for(self, n: int, f_tilde: float | None = None) -> ModelParams:
        changes = {"n_scale": n}
        if f_tilde is not None:
            changes["f_tilde"] = f_tilde
        return self.params.replace(**changes)

    def digest(self) -> str:
        return config_hash(self.raw)

    def solver_kw(self) -> dict:
        s = dict(self.solver)
        s.pop("fallback_dense", None)
        if s.get("krylov_dim") is None:
            s.pop("krylov_dim", None)
        return s


def config_hash(raw: dict) -> str:
    return hashlib.sha256(json.dumps(raw, sort_keys=True, default=str).encode()).hexdigest()


def build_config(raw: dict) -> ExperimentConfig:
    raw = dict(raw)
    kind = raw.get("experiment")
    if kind not in KINDS:
        raise ConfigError("experiment", f"must be one of {KINDS}, got {kind!r}")
    base = copy.deepcopy(DEFAULTS)
    base["options"] = copy.deepcopy(OPTION_DEFAULTS[kind])
    merged = _merge(base, raw)

    model = merged["model"]
    extra = set(model) - MODEL_KEYS
    if extra:
        raise ConfigError(f"model.{sorted(extra)[0]}", "unknown key")
    name = model.get("preset", "paper-monostable")
    if name not in PRESETS:
        raise ConfigError("model.preset", f"unknown preset {name!r}")
    try:
        params = PRESETS[name].replace(**{k: float(v) for k, v in model.items() if k != "preset"})
    except ValueError as exc:
        raise ConfigError("model", str(exc)) from None

    n_spec = merged["n"]
    n_values = [n_spec] if isinstance(n_spec, int) else list(n_spec or [])
    if not n_values or any(not isinstance(n, int) or n < 1 for n in n_values):
        raise ConfigError("n", "must be a positive integer or a nonempty list of them")
    f_grid = expand_grid(merged["f_tilde"], "f_tilde")

    cut = merged["cutoffs"]
    if set(cut) - {"k_a", "k_b"}:
        raise ConfigError(f"cutoffs.{sorted(set(cut) - {'k_a', 'k_b'})[0]}", "unknown key")
    k_a = int(cut.get("k_a", K_A_DEFAULT))
    k_b_given = {int(k): int(v) for k, v in (cut.get("k_b") or {}).items()}
    k_b = {}
    for n in n_values:
        if n in k_b_given:
            k_b[n] = k_b_given[n]
        elif n in CUTOFF_LADDER:
            k_b[n] = CUTOFF_LADDER[n]
        else:
            raise ConfigError(f"cutoffs.k_b.{n}", f"no preset cutoff for N={n}; set it explicitly")

    solver = merged["solver"]
    if solver["method"] not in ("auto", "dense", "krylov", "shift-invert"):
        raise ConfigError("solver.method", f"unknown method {solver['method']!r}")
    if solver["sigma"] is not None and not isinstance(solver["sigma"], (str, int, float, complex)):
        raise ConfigError("solver.sigma", "must be a number, a complex string like '0+5.9j', or 'auto'")
    opts = merged["options"]
    for k in set(opts) - set(OPTION_DEFAULTS[kind]):
        raise ConfigError(f"options.{k}", "unknown key")
    if kind == "kick-recovery":
        if opts["mode"] not in ("master", "trajectories"):
            raise ConfigError("options.mode", "must be 'master' or 'trajectories'")
        if not 0 <= opts["t_kick"] <= opts["t_final"]:
            raise ConfigError("options.t_kick", "must lie within [0, t_final]")
    workers = int(merged["workers"])
    if workers < 1:
        raise ConfigError("workers", "must be >= 1")
    return ExperimentConfig(
        kind, params, n_values, f_grid, k_a, k_b, solver, Path(merged["output"]), workers, bool(merged["cache"]), opts, merged
    )


def load_config(path, overrides: Iterable[str] = ()) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except FileNotFoundError:
        raise ConfigError("", f"config file {path} not found") from None
    except yaml.YAMLError as exc:
        raise ConfigError("", f"cannot parse {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("", "top level must be a mapping")
    for o in overrides:
        raw = apply_override(raw, o)
    return build_config(raw)
