"""Experiment configuration for the cart-pole benchmark harness.

Configs are TOML files with five tables (model, cost, filter, controller,
run); every key is optional and an empty file reproduces the benchmark
defaults: 0.05 s steps, horizon 5, 1000 particles, credible level 0.9,
force bounds +/-10 N, Q = diag(1, 0.1, 10, 0.1), R = 0.01, upright target
(0, 0, pi, 0), 100 steps per episode and 50 paired runs per controller.
Validation errors name the offending table.key.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .dynamics import SystemModel, cartpole_model
from .mpc import KINDS
from .risk import CostSpec

_PI = math.pi


@dataclass
class ExperimentConfig:
    """Flat record of every benchmark knob; see module docstring for defaults."""

    # [model]
    dt: float = 0.05
    noise_std: float = 0.01
    theta_true: tuple = (0.1, 0.5)
    param_box: tuple = ((0.05, 0.30), (0.20, 1.00))
    control_bounds: tuple = (-10.0, 10.0)
    # [cost]
    q_weights: tuple = (1.0, 0.1, 10.0, 0.1)
    r_weight: float = 0.01
    x_target: tuple = (0.0, 0.0, _PI, 0.0)
    terminal_weight: float = 1.0
    # [filter]
    particles: int = 1000
    jitter_scale: float = 0.005
    ess_threshold: float = 0.0
    interval: str = "eti"
    # [controller]
    kinds: tuple = KINDS
    horizon: int = 5
    budget: int = 6
    scenarios: int = 16
    level: float = 0.9
    subsample: int = 32
    optimizer: str = "gradient"
    candidate_grid: int = 0
    tube_box: tuple | None = None
    # [run]
    steps: int = 100
    runs: int = 50
    seed: int = 0
    x0: tuple = (0.0, 0.0, 0.0, 0.0)
    out: str = "out"

    def build_model(self) -> SystemModel:
        return cartpole_model(
            dt=self.dt,
            noise_std=self.noise_std,
            param_box=np.asarray(self.param_box, dtype=float),
            control_bounds=tuple(self.control_bounds),
        )

    def build_cost(self) -> CostSpec:
        return CostSpec(
            q_weights=np.asarray(self.q_weights, dtype=float),
            r_weight=self.r_weight,
            x_target=np.asarray(self.x_target, dtype=float),
            terminal_weight=self.terminal_weight,
        )

    def jitter_std(self) -> np.ndarray:
        box = np.asarray(self.param_box, dtype=float)
        return self.jitter_scale * (box[:, 1] - box[:, 0])

    def tube_box_array(self) -> np.ndarray:
        box = self.param_box if self.tube_box is None else self.tube_box
        return np.asarray(box, dtype=float)


#: table -> key -> config field
_SCHEMA = {
    "model": {
        "dt": "dt",
        "noise_std": "noise_std",
        "theta_true": "theta_true",
        "param_box": "param_box",
        "control_bounds": "control_bounds",
    },
    "cost": {
        "q_weights": "q_weights",
        "r_weight": "r_weight",
        "x_target": "x_target",
        "terminal_weight": "terminal_weight",
    },
    "filter": {
        "particles": "particles",
        "jitter_scale": "jitter_scale",
        "ess_threshold": "ess_threshold",
        "interval": "interval",
    },
    "controller": {
        "kinds": "kinds",
        "horizon": "horizon",
        "budget": "budget",
        "scenarios": "scenarios",
        "level": "level",
        "subsample": "subsample",
        "optimizer": "optimizer",
        "candidate_grid": "candidate_grid",
        "tube_box": "tube_box",
    },
    "run": {
        "steps": "steps",
        "runs": "runs",
        "seed": "seed",
        "x0": "x0",
        "out": "out",
    },
}

_INT_FIELDS = {"particles", "horizon", "budget", "scenarios", "subsample",
               "candidate_grid", "steps", "runs", "seed"}
_STR_FIELDS = {"interval", "optimizer", "out"}


def _tuplify(value):
    if isinstance(value, (list, tuple)):
        return tuple(_tuplify(v) for v in value)
    return float(value)


def load_config(path: str | None = None) -> ExperimentConfig:
    """Load a TOML config, filling unspecified keys with benchmark defaults.

    Args:
        path: Config file path, or None for pure defaults.

    Returns:
        Validated ExperimentConfig.

    Raises:
        ValueError: On unreadable files, unknown tables/keys, or invalid
            values; the message names the offending table.key.
    """
    overrides: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except OSError as exc:
            raise ValueError(f"cannot read config file {path!r}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ValueError(f"malformed config file {path!r}: {exc}") from exc
        for table, entries in raw.items():
            if table not in _SCHEMA:
                raise ValueError(f"unknown config table {table!r}")
            if not isinstance(entries, dict):
                raise ValueError(f"config table {table!r} must be a table of keys")
            for key, value in entries.items():
                if key not in _SCHEMA[table]:
                    raise ValueError(f"unknown config key {table}.{key}")
                field = _SCHEMA[table][key]
                if field in _STR_FIELDS:
                    overrides[field] = str(value)
                elif field == "kinds":
                    if not isinstance(value, (list, tuple)):
                        raise ValueError("controller.kinds must be a list of names")
                    overrides[field] = tuple(str(v) for v in value)
                elif field == "tube_box":
                    overrides[field] = None if value == [] else _tuplify(value)
                elif field in _INT_FIELDS:
                    if isinstance(value, bool) or not isinstance(value, int):
                        raise ValueError(f"{table}.{key} must be an integer, got {value!r}")
                    overrides[field] = int(value)
                elif isinstance(value, (list, tuple)):
                    overrides[field] = _tuplify(value)
                else:
                    overrides[field] = float(value)
    cfg = ExperimentConfig(**overrides)
    validate_config(cfg)
    return cfg


def replace_config(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    """Functional update that re-runs validation (used for CLI overrides)."""
    out = dataclasses.replace(cfg, **changes)
    validate_config(out)
    return out


def validate_config(cfg: ExperimentConfig) -> None:
    """Raise ValueError naming the first offending field, if any."""
    _positive("model.dt", cfg.dt)
    _positive("model.noise_std", cfg.noise_std)
    box = np.asarray(cfg.param_box, dtype=float)
    if box.shape != (2, 2):
        raise ValueError(f"model.param_box must be a 2x2 nested list, got shape {box.shape}")
    if np.any(box[:, 0] >= box[:, 1]):
        raise ValueError("model.param_box lower bounds must be below upper bounds")
    theta = np.asarray(cfg.theta_true, dtype=float)
    if theta.shape != (2,):
        raise ValueError("model.theta_true must have two entries (m, l)")
    if np.any(theta < box[:, 0]) or np.any(theta > box[:, 1]):
        raise ValueError(
            f"model.theta_true {cfg.theta_true} lies outside model.param_box {cfg.param_box}"
        )
    lo, hi = cfg.control_bounds
    if not lo < hi:
        raise ValueError("model.control_bounds must satisfy lo < hi")

    if len(cfg.q_weights) != 4:
        raise ValueError("cost.q_weights must have four entries")
    if any(w < 0 for w in cfg.q_weights):
        raise ValueError("cost.q_weights must be nonnegative")
    _positive("cost.r_weight", cfg.r_weight)
    if len(cfg.x_target) != 4:
        raise ValueError("cost.x_target must have four entries")
    if cfg.terminal_weight < 0:
        raise ValueError("cost.terminal_weight must be nonnegative")

    _at_least("filter.particles", cfg.particles, 1)
    if cfg.jitter_scale < 0:
        raise ValueError("filter.jitter_scale must be nonnegative")
    if not 0.0 <= cfg.ess_threshold <= 1.0:
        raise ValueError("filter.ess_threshold must lie in [0, 1]")
    if cfg.interval not in ("eti", "hpdi"):
        raise ValueError(f"filter.interval must be 'eti' or 'hpdi', got {cfg.interval!r}")

    if not cfg.kinds:
        raise ValueError("controller.kinds must not be empty")
    for kind in cfg.kinds:
        if kind not in KINDS:
            raise ValueError(f"controller.kinds entry {kind!r} not one of {KINDS}")
    _at_least("controller.horizon", cfg.horizon, 1)
    _at_least("controller.budget", cfg.budget, 0)
    _at_least("controller.scenarios", cfg.scenarios, 1)
    if not 0.0 < cfg.level <= 1.0:
        raise ValueError(f"controller.level must lie in (0, 1], got {cfg.level}")
    _at_least("controller.subsample", cfg.subsample, 1)
    if cfg.optimizer not in ("gradient", "lbfgs"):
        raise ValueError(f"controller.optimizer must be 'gradient' or 'lbfgs', got {cfg.optimizer!r}")
    _at_least("controller.candidate_grid", cfg.candidate_grid, 0)
    if cfg.tube_box is not None:
        tube = np.asarray(cfg.tube_box, dtype=float)
        if tube.shape != (2, 2):
            raise ValueError("controller.tube_box must be a 2x2 nested list")
        if np.any(tube[:, 0] > tube[:, 1]):
            raise ValueError("controller.tube_box lower bounds exceed upper bounds")

    _at_least("run.steps", cfg.steps, 1)
    _at_least("run.runs", cfg.runs, 1)
    _at_least("run.seed", cfg.seed, 0)
    if len(cfg.x0) != 4:
        raise ValueError("run.x0 must have four entries")
    if not cfg.out:
        raise ValueError("run.out must be a nonempty path")


def _positive(name: str, value: float) -> None:
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value}")


def _at_least(name: str, value: int, floor: int) -> None:
    if value < floor:
        raise ValueError(f"{name} must be at least {floor}, got {value}")
