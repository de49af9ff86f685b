"""POMDP structures and the planner's generative model.

The planner imagines other drivers as linear-Gaussian constant-velocity (CV)
or constant-acceleration (CA) movers that may switch behaviour every decision
step. The ground-truth simulator in :mod:`intersection_pomcp.sim` uses IDM
instead, so the planner always works with a mismatched model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from typing import Sequence

import numpy as np

from . import kinematics as kin
from .layout import PathSpec

MAX_SPEED = 13.88


class BehaviorMode(IntEnum):
    CV = 0
    CA = 1


class AccelAction(float, Enum):
    STRONG_BRAKE = -4.0
    BRAKE = -2.0
    MAINTAIN = 0.0
    ACCELERATE = 2.0

    @property
    def index(self) -> int:
        return ACTIONS.index(self)


# index order is the tie-breaking order everywhere
ACTIONS: tuple[AccelAction, ...] = tuple(AccelAction)
ACTION_VALUES = np.array([a.value for a in ACTIONS], dtype=float)


def as_action(value: float | AccelAction) -> AccelAction:
    try:
        return AccelAction(float(value))
    except ValueError:
        raise ValueError(f"{value!r} is not one of {list(ACTION_VALUES)}") from None


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    theta: float
    v: float
    a: float = 0.0

    def __post_init__(self) -> None:
        vals = (self.x, self.y, self.theta, self.v, self.a)
        if not all(math.isfinite(float(u)) for u in vals):
            raise ValueError(f"non-finite vehicle state {vals}")
        if self.v < 0:
            raise ValueError(f"negative speed {self.v}")
        object.__setattr__(self, "theta", float(kin.wrap_angle(float(self.theta))))

    @property
    def velocity(self) -> tuple[float, float]:
        return self.v * math.sin(self.theta), self.v * math.cos(self.theta)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta, self.v, self.a])


@dataclass(frozen=True)
class VehicleObservation:
    z_x: float
    z_y: float
    theta: float
    z_v: float
    vehicle_id: int | None = None

    def as_vector(self) -> np.ndarray:
        return np.array([self.z_x, self.z_y, self.z_v])


@dataclass(frozen=True, eq=False)
class DynamicsModel:
    """Discretised kinematic model for one behaviour mode.

    CV state is ``[x, vx, y, vy]`` (white-noise acceleration), CA state is
    ``[x, vx, ax, y, vy, ay]`` (white-noise jerk).
    """

    mode: BehaviorMode
    transition: np.ndarray
    process_noise: np.ndarray
    spectral_density: float
    dt: float

    @property
    def dim(self) -> int:
        return self.transition.shape[0]

    def embedded(self) -> tuple[np.ndarray, np.ndarray]:
        """(T, Q) expressed in the 6-d CA layout; CV acceleration rows are zero."""
        if self.mode is BehaviorMode.CA:
            return self.transition, self.process_noise
        idx = [kin.IX, kin.IVX, kin.IY, kin.IVY]
        t6 = np.zeros((6, 6))
        q6 = np.zeros((6, 6))
        t6[np.ix_(idx, idx)] = self.transition
        q6[np.ix_(idx, idx)] = self.process_noise
        return t6, q6

    def axis_blocks(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-axis 3x3 (transition, noise square root) in (pos, vel, acc) order."""
        t6, q6 = self.embedded()
        f3, q3 = t6[:3, :3], q6[:3, :3]
        if not (np.allclose(t6, np.kron(np.eye(2), f3)) and np.allclose(q6, np.kron(np.eye(2), q3))):
            raise ValueError("dynamics are not axis-separable")
        return np.ascontiguousarray(f3), np.ascontiguousarray(psd_sqrt(q3))


def psd_sqrt(cov: np.ndarray) -> np.ndarray:
    """A matrix L with L @ L.T == cov for a symmetric PSD ``cov``."""
    cov = 0.5 * (cov + cov.T)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(cov)
        return v * np.sqrt(np.clip(w, 0.0, None))


def cv_model(dt: float, spectral_density: float) -> DynamicsModel:
    f = np.array([[1.0, dt], [0.0, 1.0]])
    q = spectral_density * np.array([[dt**3 / 3, dt**2 / 2], [dt**2 / 2, dt]])
    return DynamicsModel(BehaviorMode.CV, np.kron(np.eye(2), f), np.kron(np.eye(2), q), spectral_density, dt)


def ca_model(dt: float, spectral_density: float) -> DynamicsModel:
    f = np.array([[1.0, dt, dt**2 / 2], [0.0, 1.0, dt], [0.0, 0.0, 1.0]])
    q = spectral_density * np.array(
        [
            [dt**5 / 20, dt**4 / 8, dt**3 / 6],
            [dt**4 / 8, dt**3 / 3, dt**2 / 2],
            [dt**3 / 6, dt**2 / 2, dt],
        ]
    )
    return DynamicsModel(BehaviorMode.CA, np.kron(np.eye(2), f), np.kron(np.eye(2), q), spectral_density, dt)


@dataclass(frozen=True)
class ObservationModel:
    """Noisy (x, y, speed) measurement; heading is observed exactly.

    Speed is linear in the state once the heading is known:
    ``v = sin(theta) * vx + cos(theta) * vy``.
    """

    sigma_p: float = 0.1
    sigma_v: float = 0.1

    def __post_init__(self) -> None:
        if self.sigma_p < 0 or self.sigma_v < 0:
            raise ValueError("sensor noise must be non-negative")

    @property
    def noise(self) -> np.ndarray:
        return np.diag([self.sigma_p**2, self.sigma_p**2, self.sigma_v**2])

    def projection(self, theta: float, dim: int = 6) -> np.ndarray:
        s, c = math.sin(theta), math.cos(theta)
        if dim == 6:
            return np.array(
                [
                    [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                    [0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
                    [0.0, s, 0.0, 0.0, c, 0.0],
                ]
            )
        if dim == 4:
            return np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, s, 0.0, c]])
        raise ValueError(f"unsupported state dimension {dim}")


@dataclass(frozen=True, eq=False)
class BehaviorSwitchMatrix:
    p: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.p, dtype=float)
        if p.shape != (2, 2):
            raise ValueError("switch matrix must be 2x2")
        if np.any(p < 0) or np.any(p > 1) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError(f"switch matrix must be row-stochastic, got {p.tolist()}")
        object.__setattr__(self, "p", p)

    @classmethod
    def symmetric(cls, p_stay: float) -> "BehaviorSwitchMatrix":
        return cls(np.array([[p_stay, 1.0 - p_stay], [1.0 - p_stay, p_stay]]))


@dataclass(frozen=True)
class RewardConfig:
    collision_penalty: float = -2000.0
    crossing_reward: float = 100.0
    accelerate: float = -4.98
    maintain: float = -4.99
    moderate_brake: float = -5.0
    strong_brake: float = -5.02
    gamma: float = 0.95

    def __post_init__(self) -> None:
        pens = self.action_penalties
        if not (self.collision_penalty < min(pens) and max(pens) < 0 < self.crossing_reward):
            raise ValueError("need collision_penalty < action penalties < 0 < crossing_reward")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")

    @property
    def action_penalties(self) -> tuple[float, float, float, float]:
        """Penalties in ACTIONS order (-4, -2, 0, +2)."""
        return (self.strong_brake, self.moderate_brake, self.maintain, self.accelerate)

    def penalty(self, action: AccelAction | float) -> float:
        return self.action_penalties[as_action(action).index]

    def scaled(self, factor: float) -> "RewardConfig":
        """Same structure with every action penalty multiplied by ``factor``."""
        return replace(
            self,
            accelerate=self.accelerate * factor,
            maintain=self.maintain * factor,
            moderate_brake=self.moderate_brake * factor,
            strong_brake=self.strong_brake * factor,
        )


@dataclass(frozen=True)
class ModelConfig:
    """Everything the planner's generative model needs."""

    dt: float = 0.25
    sigma_p: float = 0.1
    sigma_v: float = 0.1
    sigma_cv: float = 1.0
    sigma_ca: float = 1.0
    p_stay: float = 0.98
    max_speed: float = MAX_SPEED
    ego_length: float = 4.5
    ego_width: float = 1.8
    vehicle_length: float = 4.5
    vehicle_width: float = 1.8
    reward: RewardConfig = field(default_factory=RewardConfig)

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not 0 <= self.p_stay <= 1:
            raise ValueError("p_stay must be a probability")

    @property
    def switch(self) -> BehaviorSwitchMatrix:
        return BehaviorSwitchMatrix.symmetric(self.p_stay)

    @property
    def observation(self) -> ObservationModel:
        return ObservationModel(self.sigma_p, self.sigma_v)

    def dynamics(self, mode: BehaviorMode) -> DynamicsModel:
        if mode is BehaviorMode.CV:
            return cv_model(self.dt, self.sigma_cv)
        return ca_model(self.dt, self.sigma_ca)


@dataclass(frozen=True, eq=False)
class WorldState:
    ego: VehicleState
    others: tuple[tuple[VehicleState, BehaviorMode], ...]
    ego_arclength: float
    path: PathSpec

    def __post_init__(self) -> None:
        if self.ego_arclength < 0:
            raise ValueError("ego arclength must be non-negative")
        object.__setattr__(self, "others", tuple(self.others))

    @classmethod
    def at_arclength(
        cls,
        path: PathSpec,
        s: float,
        v: float = 0.0,
        others: Sequence[tuple[VehicleState, BehaviorMode]] = (),
    ) -> "WorldState":
        x, y, th = path.pose(s)
        return cls(VehicleState(x, y, th, v, 0.0), tuple(others), s, path)


# ---------------------------------------------------------------------------
# operations


def ego_step(
    ego: VehicleState,
    arclength: float,
    path: PathSpec,
    action: AccelAction | float,
    dt: float,
    max_speed: float = MAX_SPEED,
) -> tuple[VehicleState, float]:
    """Advance the ego along its path under a constant acceleration command.

    Travelled distance is ``v*dt + a*dt**2/2`` (exact; speed clamped to
    [0, max_speed]). The returned pose lies on the path and takes its heading.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    a = as_action(action).value
    dist, v_new = kin.advance_along(ego.v, a, dt, max_speed)
    s_new = arclength + dist
    x, y, th = path.pose(s_new)
    return VehicleState(x, y, th, v_new, a), s_new


def behavior_transition(mode: BehaviorMode, p: BehaviorSwitchMatrix, rng: np.random.Generator) -> BehaviorMode:
    u = rng.random()
    return BehaviorMode.CV if u < p.p[int(mode), 0] else BehaviorMode.CA


def other_step(
    vehicle: VehicleState, mode: BehaviorMode, dynamics: DynamicsModel, rng: np.random.Generator
) -> VehicleState:
    if dynamics.mode is not BehaviorMode(mode):
        raise ValueError(f"dynamics model {dynamics.mode.name} does not match mode {BehaviorMode(mode).name}")
    f3, l3 = dynamics.axis_blocks()
    noise = rng.standard_normal(6)
    x, y, th, v, a = kin.linear_gaussian_step(vehicle.x, vehicle.y, vehicle.theta, vehicle.v, vehicle.a, f3, l3, noise)
    return VehicleState(x, y, th, v, a)


def sample_observation(
    vehicle: VehicleState, obs: ObservationModel, rng: np.random.Generator, vehicle_id: int | None = None
) -> VehicleObservation:
    n = rng.standard_normal(3)
    return VehicleObservation(
        vehicle.x + obs.sigma_p * n[0],
        vehicle.y + obs.sigma_p * n[1],
        vehicle.theta,
        vehicle.v + obs.sigma_v * n[2],
        vehicle_id,
    )


def in_collision(state: WorldState, cfg: ModelConfig) -> bool:
    e = state.ego
    for veh, _ in state.others:
        if kin.rect_overlap(
            e.x, e.y, e.theta, cfg.ego_length, cfg.ego_width,
            veh.x, veh.y, veh.theta, cfg.vehicle_length, cfg.vehicle_width,
        ):
            return True
    return False


def reward(
    state: WorldState,
    action: AccelAction | float,
    next_state: WorldState,
    cfg: RewardConfig,
    model: ModelConfig | None = None,
) -> float:
    """Collision beats goal beats the per-action penalty."""
    model = model or ModelConfig(reward=cfg)
    if in_collision(next_state, model):
        return cfg.collision_penalty
    if next_state.ego_arclength >= next_state.path.length:
        return cfg.crossing_reward
    return cfg.penalty(action)


def is_terminal(state: WorldState, model: ModelConfig) -> bool:
    return in_collision(state, model) or state.ego_arclength >= state.path.length


def generative_step(
    state: WorldState,
    action: AccelAction | float,
    cfg: ModelConfig,
    rng: np.random.Generator,
    steps_left: int | None = None,
) -> tuple[WorldState, list[VehicleObservation], float, bool]:
    """Sample (next state, observations, reward, terminal) from the planner's model."""
    switch = cfg.switch
    models = {m: cfg.dynamics(m) for m in BehaviorMode}
    others = []
    for veh, mode in state.others:
        new_mode = behavior_transition(mode, switch, rng)
        others.append((other_step(veh, new_mode, models[new_mode], rng), new_mode))
    ego, s = ego_step(state.ego, state.ego_arclength, state.path, action, cfg.dt, cfg.max_speed)
    nxt = WorldState(ego, tuple(others), s, state.path)
    obs_model = cfg.observation
    observations = [sample_observation(v, obs_model, rng, i) for i, (v, _) in enumerate(others)]
    r = reward(state, action, nxt, cfg.reward, cfg)
    terminal = is_terminal(nxt, cfg) or (steps_left is not None and steps_left <= 1)
    return nxt, observations, r, terminal
