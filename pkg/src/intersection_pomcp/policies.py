"""Decision policies: TTC gap acceptance, uniform random, and POMCP.

Every policy exposes ``reset(ego, arclength, path)`` and
``act(observations, ego, arclength, rng) -> PolicyDecision`` so the episode
loop can treat them interchangeably.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Protocol, Sequence

import numpy as np

from . import kinematics as kin
from . import planner_model as pm
from .imm import ImmBelief, initial_belief, update_belief
from .layout import IntersectionLayout, PathSpec
from .model import ACTION_VALUES, ACTIONS, AccelAction, ModelConfig, VehicleObservation, VehicleState, as_action
from .pomcp import GenerativeModel, SolverConfig, plan
from .sim import IdmParams

TTC_SUBSTEPS = (0.0, 0.1)


@dataclass(frozen=True)
class PolicyDecision:
    action: AccelAction
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "action", as_action(self.action))


class Policy(Protocol):
    name: str

    def reset(self, ego: VehicleState, arclength: float, path: PathSpec) -> None: ...

    def act(
        self, observations: Sequence[VehicleObservation], ego: VehicleState, arclength: float,
        rng: np.random.Generator,
    ) -> PolicyDecision: ...


# ---------------------------------------------------------------------------
# TTC baseline


class Phase(str, Enum):
    WAITING = "waiting"
    CROSSING = "crossing"


@dataclass(frozen=True)
class TtcPolicyState:
    threshold: float = 4.5
    consecutive_clear: int = 0
    phase: Phase = Phase.WAITING

    def __post_init__(self) -> None:
        if self.threshold < 0:
            raise ValueError("TTC threshold must be non-negative")
        if self.consecutive_clear not in (0, 1, 2):
            raise ValueError("consecutive_clear must be 0, 1 or 2")


def ttc_compute(ego: VehicleState, vehicle: VehicleState, layout: IntersectionLayout | None = None) -> float:
    """Seconds until ``vehicle`` reaches the line through the ego parallel to the side road.

    Distance is measured along the main road (x); the closing speed is the
    vehicle's x-velocity relative to the ego's. Receding or passed vehicles give
    +inf. ``layout`` is accepted for interface symmetry; the line only depends
    on the ego position.
    """
    return float(kin.ttc_kernel(ego.x, ego.velocity[0], vehicle.x, vehicle.velocity[0]))


def _propagate(z: VehicleObservation, t: float) -> VehicleState:
    s, c = math.sin(z.theta), math.cos(z.theta)
    v = max(0.0, z.z_v)
    return VehicleState(z.z_x + v * s * t, z.z_y + v * c * t, z.theta, v)


def min_ttc(ego: VehicleState, observations: Sequence[VehicleObservation], t: float = 0.0) -> float:
    """Smallest TTC over linearly propagated observations at relative time ``t``."""
    s, c = math.sin(ego.theta), math.cos(ego.theta)
    ego_t = VehicleState(ego.x + ego.v * s * t, ego.y + ego.v * c * t, ego.theta, ego.v)
    return min((ttc_compute(ego_t, _propagate(z, t)) for z in observations), default=math.inf)


def idm_action(v: float, idm: IdmParams, actions: np.ndarray = ACTION_VALUES) -> AccelAction:
    """Free-road IDM acceleration snapped to the nearest action."""
    acc = kin.idm_accel_kernel(float(v), math.inf, 0.0, *idm.as_tuple())
    return as_action(kin.snap_to_actions(acc, actions))


def ttc_policy_step(
    observations: Sequence[VehicleObservation],
    ego: VehicleState,
    st: TtcPolicyState,
    idm: IdmParams | None = None,
    substeps: Sequence[float] = TTC_SUBSTEPS,
) -> tuple[PolicyDecision, TtcPolicyState]:
    """Hold at the stop line until two consecutive clear TTC checks, then follow IDM."""
    idm = idm or IdmParams()
    clear = st.consecutive_clear
    phase = st.phase
    worst = math.inf
    if phase is Phase.WAITING:
        for t in substeps:
            m = min_ttc(ego, observations, t)
            worst = min(worst, m)
            clear = clear + 1 if m > st.threshold else 0
            if clear >= 2:
                phase = Phase.CROSSING
                break
    new = replace(st, consecutive_clear=min(clear, 2), phase=phase)
    if phase is Phase.CROSSING:
        action = idm_action(ego.v, idm)
    else:
        action = AccelAction.BRAKE if ego.v > 0 else AccelAction.MAINTAIN
    return PolicyDecision(action, {"min_ttc": worst, "phase": phase.value}), new


def conflicting(
    observations: Sequence[VehicleObservation], layout: IntersectionLayout, lanes: Sequence[int],
) -> list[VehicleObservation]:
    """Observations of vehicles driving in one of the given lanes."""
    return [z for z in observations if layout.lane_of(z.z_y).index in lanes]


class TtcPolicy:
    """TTC gap acceptance over the vehicles in lanes the ego's path enters."""

    name = "ttc"

    def __init__(
        self, threshold: float = 4.5, idm: IdmParams | None = None,
        layout: IntersectionLayout | None = None, ego_width: float = 1.8,
    ) -> None:
        self.threshold = threshold
        self.idm = idm or IdmParams()
        self.layout = layout or IntersectionLayout()
        self.ego_width = ego_width
        self.state = TtcPolicyState(threshold)
        self.lanes: tuple[int, ...] = tuple(lane.index for lane in self.layout.lanes)

    def reset(self, ego: VehicleState, arclength: float, path: PathSpec) -> None:
        self.state = TtcPolicyState(self.threshold)
        self.lanes = tuple(lane.index for lane in self.layout.conflict_lanes(path, 0.5 * self.ego_width))

    def act(self, observations, ego, arclength, rng) -> PolicyDecision:
        relevant = conflicting(observations, self.layout, self.lanes)
        decision, self.state = ttc_policy_step(relevant, ego, self.state, self.idm)
        return decision


# ---------------------------------------------------------------------------
# random baseline


def random_policy_step(rng: np.random.Generator) -> PolicyDecision:
    return PolicyDecision(ACTIONS[int(rng.integers(len(ACTIONS)))])


class RandomPolicy:
    name = "random"

    def reset(self, ego: VehicleState, arclength: float, path: PathSpec) -> None:
        pass

    def act(self, observations, ego, arclength, rng) -> PolicyDecision:
        return random_policy_step(rng)


# ---------------------------------------------------------------------------
# POMCP


@dataclass(frozen=True, eq=False)
class PlannerBundle:
    """Compiled generative model plus the configuration it was built from."""

    model: GenerativeModel
    config: ModelConfig
    solver: SolverConfig
    lanes: tuple[tuple[float, bool], ...] | None = None
    track_margin: float = 5.0

    @classmethod
    def build(
        cls, path: PathSpec, cfg: ModelConfig | None = None, solver: SolverConfig | None = None,
        ttc_threshold: float = 4.5, idm: IdmParams | None = None, layout: IntersectionLayout | None = None,
    ) -> "PlannerBundle":
        """Planner for ``path``; with a ``layout`` only vehicles in lanes the path enters are planned around."""
        cfg = cfg or ModelConfig()
        solver = solver or SolverConfig(gamma=cfg.reward.gamma)
        lanes = None
        if layout is not None:
            hit = {lane.index for lane in layout.conflict_lanes(path, 0.5 * cfg.ego_width)}
            lanes = tuple((lane.center_y, lane.index in hit) for lane in layout.lanes)
        return cls(pm.intersection_model(path, cfg, ttc_threshold, idm), cfg, solver, lanes)


def pomcp_policy_step(
    observations: Sequence[VehicleObservation],
    belief: ImmBelief,
    solver: SolverConfig,
    bundle: PlannerBundle,
    rng: np.random.Generator,
    ego: VehicleState | None = None,
    arclength: float | None = None,
) -> tuple[PolicyDecision, ImmBelief]:
    """IMM-update the belief with this step's observations, then plan from it."""
    ego = belief.ego if ego is None else ego
    arclength = belief.ego_arclength if arclength is None else arclength
    belief = update_belief(belief, ego, arclength, observations, bundle.config)
    tracks = pm.relevant_tracks(belief, bundle.track_margin, bundle.lanes)
    value, tree = plan(pm.pack_belief(belief, tracks), solver, bundle.model, rng)
    diag = {
        "root_q": tree.root_q.tolist(),
        "root_visits": tree.root_visits.tolist(),
        "tracks": len(tracks),
    }
    return PolicyDecision(value, diag), belief


class PomcpPolicy:
    name = "pomcp"

    def __init__(self, bundle: PlannerBundle) -> None:
        self.bundle = bundle
        self.belief: ImmBelief | None = None

    def reset(self, ego: VehicleState, arclength: float, path: PathSpec) -> None:
        self.belief = initial_belief(ego, arclength, path)

    def act(self, observations, ego, arclength, rng) -> PolicyDecision:
        if self.belief is None:
            raise RuntimeError("reset() must be called before act()")
        decision, self.belief = pomcp_policy_step(
            observations, self.belief, self.bundle.solver, self.bundle, rng, ego, arclength
        )
        return decision
