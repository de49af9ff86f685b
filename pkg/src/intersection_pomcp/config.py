"""YAML configuration with built-in defaults for every experiment parameter.

Layout of a config file (every key optional)::

    simulation: {density: 0.2, dt: 0.25, sigma_p: 0.1, sigma_v: 0.1, timeout: 60, ...}
    idm: {v0: 13.88, headway: 1.0, s0: 2.0, a_max: 2.0, b_comf: 2.0, delta: 4}
    model: {sigma_cv: 1.0, sigma_ca: 1.0, p_stay: 0.98, ...}
    reward: {collision_penalty: -2000, crossing_reward: 100, accelerate: -4.98, ...}
    solver: {depth: 15, exploration: 20, tree_queries: 2000, pw_k: 4, pw_alpha: 0.2}
    policy: {ttc_threshold: 4.5}
    experiment: {turn: right, episodes: 1000, seed: 0}
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from .layout import Turn
from .model import ModelConfig, RewardConfig
from .pomcp import SolverConfig
from .sim import IdmParams, SimConfig


class ConfigError(ValueError):
    """Unknown key or invalid value in a configuration file."""


@dataclass(frozen=True)
class BenchConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    ttc_threshold: float = 4.5
    turn: Turn = Turn.RIGHT
    episodes: int = 1000
    seed: int = 0


def _apply(obj: Any, values: Mapping[str, Any], section: str) -> Any:
    if not isinstance(values, Mapping):
        raise ConfigError(f"section '{section}' must be a mapping")
    known = {f.name: f for f in fields(obj) if not dataclasses.is_dataclass(getattr(obj, f.name))}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {sorted(unknown)}")
    typed = {}
    for k, v in values.items():
        cur = getattr(obj, k)
        typed[k] = type(cur)(v) if isinstance(cur, (int, float)) and not isinstance(cur, bool) else v
    try:
        return replace(obj, **typed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid '{section}' settings: {exc}") from exc


def config_from_dict(data: Mapping[str, Any] | None) -> BenchConfig:
    data = dict(data or {})
    allowed = {"simulation", "idm", "model", "reward", "solver", "policy", "experiment"}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")
    sim = _apply(SimConfig(), data.get("simulation", {}), "simulation")
    sim = replace(sim, idm=_apply(IdmParams(), data.get("idm", {}), "idm"))
    reward = _apply(RewardConfig(), data.get("reward", {}), "reward")
    model = _apply(ModelConfig(), data.get("model", {}), "model")
    # the filter and the planner see the simulator's sensor noise and time step
    model = replace(model, reward=reward, dt=sim.dt, sigma_p=sim.sigma_p, sigma_v=sim.sigma_v)
    solver = _apply(SolverConfig(gamma=reward.gamma), data.get("solver", {}), "solver")
    policy = data.get("policy", {}) or {}
    if set(policy) - {"ttc_threshold"}:
        raise ConfigError(f"unknown keys in 'policy': {sorted(set(policy) - {'ttc_threshold'})}")
    exp = data.get("experiment", {}) or {}
    if set(exp) - {"turn", "episodes", "seed"}:
        raise ConfigError(f"unknown keys in 'experiment': {sorted(set(exp) - {'turn', 'episodes', 'seed'})}")
    try:
        cfg = BenchConfig(
            sim=sim, model=model, solver=solver,
            ttc_threshold=float(policy.get("ttc_threshold", 4.5)),
            turn=Turn(exp.get("turn", "right")),
            episodes=int(exp.get("episodes", 1000)),
            seed=int(exp.get("seed", 0)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.episodes < 1:
        raise ConfigError("episodes must be >= 1")
    return cfg


def load_config(path: str | Path | None) -> BenchConfig:
    if path is None:
        return config_from_dict({})
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data)


def config_to_dict(cfg: BenchConfig) -> dict[str, Any]:
    """Inverse of :func:`config_from_dict` (plain types only)."""
    sim = {f.name: getattr(cfg.sim, f.name) for f in fields(cfg.sim) if f.name not in ("layout", "idm")}
    model = {
        f.name: getattr(cfg.model, f.name) for f in fields(cfg.model)
        if f.name not in ("reward", "dt", "sigma_p", "sigma_v")
    }
    return {
        "simulation": sim,
        "idm": dataclasses.asdict(cfg.sim.idm),
        "model": model,
        "reward": dataclasses.asdict(cfg.model.reward),
        "solver": dataclasses.asdict(cfg.solver),
        "policy": {"ttc_threshold": cfg.ttc_threshold},
        "experiment": {"turn": cfg.turn.value, "episodes": cfg.episodes, "seed": cfg.seed},
    }
