"""Ground-truth T-junction simulator with IDM traffic.

Traffic follows the Intelligent Driver Model on the two main-road lanes and
yields to the ego only once the ego's body intrudes into their lane. The
planner never sees these dynamics; it plans with CV/CA models instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import kinematics as kin
from .layout import IntersectionLayout, Lane, PathSpec, Turn
from .model import MAX_SPEED, AccelAction, ObservationModel, VehicleObservation, VehicleState, ego_step, sample_observation


class OverlapError(ValueError):
    """IDM was asked for an acceleration behind a leader it already overlaps."""


class SimulationError(RuntimeError):
    """Misuse of the simulator, e.g. stepping a finished episode."""


@dataclass(frozen=True)
class IdmParams:
    v0: float = MAX_SPEED
    headway: float = 1.0
    s0: float = 2.0
    a_max: float = 2.0
    b_comf: float = 2.0
    delta: float = 4.0

    def __post_init__(self) -> None:
        if min(self.v0, self.headway, self.s0, self.a_max, self.b_comf) <= 0:
            raise ValueError("IDM parameters must be positive")
        if self.delta < 1:
            raise ValueError("IDM exponent must be >= 1")

    def as_tuple(self) -> tuple[float, float, float, float, float, float]:
        return self.v0, self.headway, self.s0, self.a_max, self.b_comf, self.delta


def idm_accel(v: float, gap: float, dv: float, params: IdmParams) -> float:
    """IDM acceleration for speed ``v``, bumper gap ``gap`` and closing speed ``dv``."""
    if gap <= 0:
        raise OverlapError(f"non-positive gap {gap}")
    return float(kin.idm_accel_kernel(float(v), float(gap), float(dv), *params.as_tuple()))


@dataclass(frozen=True)
class SimConfig:
    density: float = 0.2
    dt: float = 0.25
    sigma_p: float = 0.1
    sigma_v: float = 0.1
    timeout: float = 60.0
    vehicle_length: float = 4.5
    vehicle_width: float = 1.8
    max_speed: float = MAX_SPEED
    spawn_speed_min: float = 0.8  # fraction of v0
    braking_threshold: float = -0.5
    stop_threshold: float = 0.1
    warmup: float = 12.0
    layout: IntersectionLayout = field(default_factory=IntersectionLayout)
    idm: IdmParams = field(default_factory=IdmParams)

    def __post_init__(self) -> None:
        if not 0 <= self.density <= 1:
            raise ValueError("traffic density must lie in [0, 1]")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.density * self.dt > 1:
            raise ValueError("density * dt exceeds one spawn per step")

    @property
    def observation(self) -> ObservationModel:
        return ObservationModel(self.sigma_p, self.sigma_v)


@dataclass
class TrafficVehicle:
    vid: int
    lane: Lane
    x: float
    v: float
    a: float = 0.0

    @property
    def y(self) -> float:
        return self.lane.center_y

    @property
    def theta(self) -> float:
        return self.lane.heading

    @property
    def progress(self) -> float:
        """Distance travelled from the lane entry."""
        return self.lane.direction * (self.x - self.lane.entry_x)

    @property
    def state(self) -> VehicleState:
        return VehicleState(self.x, self.y, self.theta, self.v, self.a)


@dataclass
class StepEvents:
    braking: list[int]
    stopped: list[int]
    collided: bool = False
    crossed: bool = False
    timed_out: bool = False


@dataclass
class SimState:
    path: PathSpec
    ego: VehicleState
    ego_s: float = 0.0
    clock: float = 0.0
    steps: int = 0
    traffic: list[TrafficVehicle] = field(default_factory=list)
    next_id: int = 0
    collided: bool = False
    crossed: bool = False
    timed_out: bool = False

    @property
    def terminal(self) -> bool:
        return self.collided or self.crossed or self.timed_out

    def vehicle_states(self) -> list[VehicleState]:
        return [t.state for t in self.traffic]


def new_sim(layout: IntersectionLayout, turn: Turn | str) -> SimState:
    """Ego stopped on the stop line, empty road."""
    path = layout.path(Turn(turn))
    x, y, th = path.pose(0.0)
    return SimState(path=path, ego=VehicleState(x, y, th, 0.0, 0.0))


def spawn_traffic(sim: SimState, cfg: SimConfig, rng: np.random.Generator) -> SimState:
    """Bernoulli(density * dt) arrival per lane entry; never inserts overlapping vehicles.

    Two uniforms are drawn per lane every call so the traffic stream stays
    aligned across policies regardless of occupancy.
    """
    p = cfg.density * cfg.dt
    length = cfg.vehicle_length
    for lane in cfg.layout.lanes:
        u_arrive, u_speed = rng.random(2)
        if u_arrive >= p:
            continue
        v_new = cfg.idm.v0 * (cfg.spawn_speed_min + (1.0 - cfg.spawn_speed_min) * u_speed)
        in_lane = [t for t in sim.traffic if t.lane.index == lane.index]
        if in_lane:
            last = min(in_lane, key=lambda t: t.progress)
            gap = last.progress - length
            # enter no faster than the leader and keep at least the IDM desired gap
            v_new = min(v_new, last.v, (gap - cfg.idm.s0) / cfg.idm.headway)
            if v_new <= 0.0:
                continue  # entry cell occupied
        sim.traffic.append(TrafficVehicle(sim.next_id, lane, lane.entry_x, v_new, 0.0))
        sim.next_id += 1
    return sim


def rect_corners(x: float, y: float, theta: float, length: float, width: float) -> np.ndarray:
    s, c = math.sin(theta), math.cos(theta)
    u = np.array([s, c]) * 0.5 * length
    w = np.array([c, -s]) * 0.5 * width
    ctr = np.array([x, y])
    return np.array([ctr + u + w, ctr + u - w, ctr - u - w, ctr - u + w])


def _ego_leader_gap(veh: TrafficVehicle, ego_corners: np.ndarray, cfg: SimConfig) -> float | None:
    """Bumper gap to the ego if it intrudes into this vehicle's lane ahead of it."""
    lo, hi = cfg.layout.lane_strip(veh.lane)
    ys = ego_corners[:, 1]
    if ys.max() < lo or ys.min() > hi:
        return None
    along = veh.lane.direction * ego_corners[:, 0]
    if along.max() <= veh.lane.direction * veh.x:
        return None  # ego is behind this vehicle
    return float(along.min() - (veh.lane.direction * veh.x + 0.5 * cfg.vehicle_length))


def traffic_accelerations(sim: SimState, cfg: SimConfig) -> dict[int, float]:
    ego = sim.ego
    corners = rect_corners(ego.x, ego.y, ego.theta, cfg.vehicle_length, cfg.vehicle_width)
    ego_vx = ego.velocity[0]
    acc: dict[int, float] = {}
    params = cfg.idm.as_tuple()
    for lane in cfg.layout.lanes:
        queue = sorted((t for t in sim.traffic if t.lane.index == lane.index), key=lambda t: -t.progress)
        for k, veh in enumerate(queue):
            gap, dv = math.inf, 0.0
            if k > 0:
                lead = queue[k - 1]
                gap = lead.progress - veh.progress - cfg.vehicle_length
                dv = veh.v - lead.v
            ego_gap = _ego_leader_gap(veh, corners, cfg)
            if ego_gap is not None and ego_gap < gap:
                gap = ego_gap
                dv = veh.v - lane.direction * ego_vx
            if gap <= 0:
                acc[veh.vid] = kin.IDM_MIN_ACCEL
            else:
                acc[veh.vid] = float(kin.idm_accel_kernel(veh.v, gap, dv, *params))
    return acc


def detect_collision(sim: SimState, footprint: tuple[float, float] = (4.5, 1.8)) -> bool:
    """Closed-set overlap of the ego rectangle with any traffic rectangle."""
    length, width = footprint
    e = sim.ego
    for t in sim.traffic:
        if kin.rect_overlap(e.x, e.y, e.theta, length, width, t.x, t.y, t.theta, length, width):
            return True
    return False


def traffic_overlaps(sim: SimState, cfg: SimConfig) -> bool:
    """True if any two same-lane traffic vehicles overlap."""
    for lane in cfg.layout.lanes:
        prog = sorted(t.progress for t in sim.traffic if t.lane.index == lane.index)
        if any(b - a < cfg.vehicle_length for a, b in zip(prog, prog[1:])):
            return True
    return False


def sim_step(
    sim: SimState, ego_action: AccelAction | float, cfg: SimConfig, rng: np.random.Generator
) -> tuple[SimState, StepEvents]:
    """Advance traffic (IDM) and ego (path kinematics) by one step, then spawn arrivals."""
    if sim.terminal:
        raise SimulationError("cannot step a terminal simulation")
    acc = traffic_accelerations(sim, cfg)
    braking, stopped = [], []
    for veh in sim.traffic:
        a = acc[veh.vid]
        dist, v_new = kin.advance_along(veh.v, a, cfg.dt, cfg.max_speed)
        veh.x += veh.lane.direction * dist
        veh.v = v_new
        veh.a = a
        if a < cfg.braking_threshold:
            braking.append(veh.vid)
        if v_new < cfg.stop_threshold:
            stopped.append(veh.vid)
    sim.ego, sim.ego_s = ego_step(sim.ego, sim.ego_s, sim.path, ego_action, cfg.dt, cfg.max_speed)
    exit_at = cfg.layout.half_length + cfg.vehicle_length
    sim.traffic = [t for t in sim.traffic if t.lane.direction * t.x <= exit_at]
    spawn_traffic(sim, cfg, rng)
    sim.steps += 1
    sim.clock = sim.steps * cfg.dt

    ev = StepEvents(braking, stopped)
    if detect_collision(sim, (cfg.vehicle_length, cfg.vehicle_width)):
        sim.collided = ev.collided = True
    elif sim.ego_s >= sim.path.length:
        sim.crossed = ev.crossed = True
    elif sim.clock >= cfg.timeout - 1e-9:
        sim.timed_out = ev.timed_out = True
    return sim, ev


def warm_up(sim: SimState, cfg: SimConfig, rng: np.random.Generator) -> SimState:
    """Run traffic alone with the ego parked on the stop line; resets the clock."""
    n = int(round(cfg.warmup / cfg.dt))
    for _ in range(n):
        acc = traffic_accelerations(sim, cfg)
        for veh in sim.traffic:
            dist, v_new = kin.advance_along(veh.v, acc[veh.vid], cfg.dt, cfg.max_speed)
            veh.x += veh.lane.direction * dist
            veh.v = v_new
            veh.a = acc[veh.vid]
        exit_at = cfg.layout.half_length + cfg.vehicle_length
        sim.traffic = [t for t in sim.traffic if t.lane.direction * t.x <= exit_at]
        spawn_traffic(sim, cfg, rng)
    sim.steps = 0
    sim.clock = 0.0
    return sim


def sense(sim: SimState, obs: ObservationModel, rng: np.random.Generator) -> list[VehicleObservation]:
    """Noisy observation of every traffic vehicle (ego state is known exactly)."""
    return [sample_observation(t.state, obs, rng, t.vid) for t in sim.traffic]


def step_record(sim: SimState, action: float | None, events: StepEvents | None) -> dict[str, Any]:
    """One JSON-lines row of the episode log."""
    e = sim.ego
    rec: dict[str, Any] = {
        "clock": round(sim.clock, 6),
        "ego": [e.x, e.y, e.theta, e.v, e.a, sim.ego_s],
        "action": action,
        "vehicles": [[t.vid, t.x, t.y, t.theta, t.v, t.a] for t in sim.traffic],
    }
    if events is not None:
        rec["braking"] = events.braking
        rec["stopped"] = events.stopped
    return rec
