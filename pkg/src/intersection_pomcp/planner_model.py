"""Compiled intersection generative model handed to the POMCP search.

Flat state layout (1-d float array)::

    [ego_x, ego_y, ego_theta, ego_v, ego_a, ego_s,
     x_1, y_1, theta_1, v_1, a_1, mode_1,
     ...]

The step composes behaviour switching, CV/CA propagation, ego path kinematics,
collision checking and the reward, exactly as :func:`model.generative_step`
does with the same kernels.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from . import kinematics as kin
from .imm import ImmBelief, TrackBelief
from .layout import PathSpec
from .model import ACTION_VALUES, BehaviorMode, ModelConfig, VehicleState, WorldState
from .pomcp import GenerativeModel
from .sim import IdmParams

EGO = 6
VEH = 6

# indices into the scalar parameter vector
DT, VMAX, EGO_L, EGO_W, VEH_L, VEH_W, P_CV, P_CA, COLL, GOAL, PATH_LEN, TTC_THR = range(12)
IDM0 = 12  # six IDM parameters follow
N_SCALARS = IDM0 + 6


@njit(cache=True)
def model_step(ns, action, params, rng):
    """Advance the flat state ``ns`` in place; returns (reward, terminal)."""
    route, scal, mats, acts = params
    n = (ns.shape[0] - EGO) // VEH
    for i in range(n):
        o = EGO + VEH * i
        mode = int(ns[o + 5])
        u = rng.random()
        stay_cv = scal[P_CV] if mode == 0 else 1.0 - scal[P_CA]
        mode = 0 if u < stay_cv else 1
        if mode == 0:
            x, y, th, v, a = kin.linear_gaussian_step_draw(ns[o], ns[o + 1], ns[o + 2], ns[o + 3], ns[o + 4],
                                                           mats[0], mats[1], rng)
        else:
            x, y, th, v, a = kin.linear_gaussian_step_draw(ns[o], ns[o + 1], ns[o + 2], ns[o + 3], ns[o + 4],
                                                           mats[2], mats[3], rng)
        ns[o] = x
        ns[o + 1] = y
        ns[o + 2] = th
        ns[o + 3] = v
        ns[o + 4] = a
        ns[o + 5] = mode

    dist, v_new = kin.advance_along(ns[3], action, scal[DT], scal[VMAX])
    s_new = ns[5] + dist
    ex, ey, eth = kin.path_pose(s_new, route[0], route[1], route[2], route[3])
    ns[0] = ex
    ns[1] = ey
    ns[2] = eth
    ns[3] = v_new
    ns[4] = action
    ns[5] = s_new

    for i in range(n):
        o = EGO + VEH * i
        if kin.rect_overlap(ex, ey, eth, scal[EGO_L], scal[EGO_W],
                            ns[o], ns[o + 1], ns[o + 2], scal[VEH_L], scal[VEH_W]):
            return scal[COLL], True
    if s_new >= scal[PATH_LEN]:
        return scal[GOAL], True
    r = acts[1, 0]
    for k in range(acts.shape[1]):
        if acts[0, k] == action:
            r = acts[1, k]
    return r, False


@njit(cache=True)
def min_ttc(state):
    n = (state.shape[0] - EGO) // VEH
    ego_vx = state[3] * math.sin(state[2])
    best = math.inf
    for i in range(n):
        o = EGO + VEH * i
        t = kin.ttc_kernel(state[0], ego_vx, state[o], state[o + 3] * math.sin(state[o + 2]))
        if t < best:
            best = t
    return best


@njit(cache=True)
def state_dim(belief):
    return EGO + VEH * belief[1].shape[0]


@njit(cache=True)
def ttc_rollout_policy(state, params):
    """Markov TTC rule on the simulated state: once moving, follow free-road IDM."""
    scal = params[1]
    actions = params[3][0]
    v = state[3]
    moving = state[5] > 1e-9 or v > 0.0
    if moving or min_ttc(state) > scal[TTC_THR]:
        acc = kin.idm_accel_kernel(v, math.inf, 0.0, scal[IDM0], scal[IDM0 + 1], scal[IDM0 + 2],
                                   scal[IDM0 + 3], scal[IDM0 + 4], scal[IDM0 + 5])
        return kin.snap_to_actions(acc, actions)
    return 0.0


@njit(cache=True)
def sample_root(belief, params, rng, st):
    ego, mu, means, roots, thetas = belief
    n = mu.shape[0]
    st[:EGO] = ego
    z = np.empty(6)
    vec = np.empty(6)
    for i in range(n):
        mode = 0 if rng.random() < mu[i, 0] else 1
        for k in range(6):
            z[k] = rng.standard_normal()
        th = thetas[i]
        sn = math.sin(th)
        cs = math.cos(th)
        for r in range(6):
            acc = means[i, mode, r]
            for k in range(6):
                acc += roots[i, mode, r, k] * z[k]
            vec[r] = acc
        o = EGO + VEH * i
        st[o] = vec[kin.IX]
        st[o + 1] = vec[kin.IY]
        st[o + 2] = th
        st[o + 3] = max(0.0, vec[kin.IVX] * sn + vec[kin.IVY] * cs)
        st[o + 4] = vec[kin.IAX] * sn + vec[kin.IAY] * cs
        st[o + 5] = mode


def pack_params(path: PathSpec, cfg: ModelConfig, ttc_threshold: float = 4.5, idm: IdmParams | None = None) -> tuple:
    idm = idm or IdmParams()
    scal = np.zeros(N_SCALARS)
    scal[DT] = cfg.dt
    scal[VMAX] = cfg.max_speed
    scal[EGO_L] = cfg.ego_length
    scal[EGO_W] = cfg.ego_width
    scal[VEH_L] = cfg.vehicle_length
    scal[VEH_W] = cfg.vehicle_width
    sw = cfg.switch.p
    scal[P_CV] = sw[0, 0]
    scal[P_CA] = sw[1, 1]
    scal[COLL] = cfg.reward.collision_penalty
    scal[GOAL] = cfg.reward.crossing_reward
    scal[PATH_LEN] = path.length
    scal[TTC_THR] = ttc_threshold
    scal[IDM0:IDM0 + 6] = idm.as_tuple()
    t_cv, l_cv = cfg.dynamics(BehaviorMode.CV).axis_blocks()
    t_ca, l_ca = cfg.dynamics(BehaviorMode.CA).axis_blocks()
    # headings are per segment; pad to the waypoint count so the route stacks
    route = np.vstack([path.xs, path.ys, path.ss, np.append(path.hs, path.hs[-1])])
    mats = np.stack([t_cv, l_cv, t_ca, l_ca])
    acts = np.vstack([ACTION_VALUES, np.array(cfg.reward.action_penalties, dtype=float)])
    return route, scal, mats, acts


def intersection_model(
    path: PathSpec, cfg: ModelConfig, ttc_threshold: float = 4.5, idm: IdmParams | None = None,
    actions: np.ndarray | None = None,
) -> GenerativeModel:
    params = pack_params(path, cfg, ttc_threshold, idm)
    acts = ACTION_VALUES.copy() if actions is None else np.asarray(actions, dtype=float)
    return GenerativeModel(model_step, ttc_rollout_policy, sample_root, state_dim, params, acts)


def _track_arrays(tracks: list[TrackBelief]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    n = len(tracks)
    mu = np.zeros((n, 2))
    means = np.zeros((n, 2, 6))
    roots = np.zeros((n, 2, 6, 6))
    thetas = np.zeros(n)
    for i, t in enumerate(tracks):
        mu[i] = t.mu
        thetas[i] = t.theta
        for m in range(2):
            means[i, m] = t.estimates[m].mean
            w, v = np.linalg.eigh(t.estimates[m].cov)
            roots[i, m] = v * np.sqrt(np.clip(w, 0.0, None))
    return mu, means, roots, thetas


def ego_vector(ego: VehicleState, arclength: float) -> np.ndarray:
    return np.array([ego.x, ego.y, ego.theta, ego.v, ego.a, arclength])


def relevant_tracks(
    belief: ImmBelief, margin: float = 5.0, lanes: tuple[tuple[float, bool], ...] | None = None,
) -> list[TrackBelief]:
    """Tracks that can still meet the ego.

    Drops vehicles already past the ego path's x-extent. ``lanes`` lists
    ``(centre_y, relevant)`` per lane; a track is dropped when its nearest
    lane is not relevant.
    """
    lo = float(belief.path.xs.min()) - margin
    hi = float(belief.path.xs.max()) + margin
    keep = []
    for t in belief.tracks:
        x = t.estimates[0].mean[kin.IX] * t.mu[0] + t.estimates[1].mean[kin.IX] * t.mu[1]
        if lanes:
            y = t.estimates[0].mean[kin.IY] * t.mu[0] + t.estimates[1].mean[kin.IY] * t.mu[1]
            if not min(lanes, key=lambda lane: abs(lane[0] - y))[1]:
                continue
        direction = math.sin(t.theta)
        if direction > 0.5 and x > hi:
            continue
        if direction < -0.5 and x < lo:
            continue
        keep.append(t)
    return keep


def pack_belief(belief: ImmBelief, tracks: list[TrackBelief] | None = None) -> tuple:
    tracks = list(belief.tracks) if tracks is None else tracks
    mu, means, roots, thetas = _track_arrays(tracks)
    return (ego_vector(belief.ego, belief.ego_arclength), mu, means, roots, thetas)


def world_to_array(state: WorldState) -> np.ndarray:
    out = [ego_vector(state.ego, state.ego_arclength)]
    for veh, mode in state.others:
        out.append(np.array([veh.x, veh.y, veh.theta, veh.v, veh.a, float(int(mode))]))
    return np.concatenate(out)


def array_to_world(arr: np.ndarray, path: PathSpec) -> WorldState:
    ego = VehicleState(arr[0], arr[1], arr[2], arr[3], arr[4])
    others = []
    for o in range(EGO, arr.size, VEH):
        others.append((VehicleState(*arr[o:o + 5]), BehaviorMode(int(arr[o + 5]))))
    return WorldState(ego, tuple(others), float(arr[5]), path)
