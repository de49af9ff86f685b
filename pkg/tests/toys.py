"""Small generative models with known optimal actions, shared by the solver tests."""

import numpy as np
from numba import njit

from intersection_pomcp.pomcp import GenerativeModel

ACTS = np.array([-4.0, -2.0, 0.0, 2.0])


@njit
def _root_copy(belief, params, rng, out):
    out[:] = belief


@njit
def _dim(belief):
    return belief.shape[0]


@njit
def always_brake(state, params):
    return -4.0


@njit
def chain_step(state, action, params, rng):
    # state = [t, flag]; accelerating twice pays +100, anything else -5
    t = state[0]
    state[0] = t + 1.0
    if t == 0.0:
        state[1] = 1.0 if action == 2.0 else 0.0
        return -5.0, False
    if state[1] == 1.0 and action == 2.0:
        return 100.0, True
    return -5.0, True


@njit
def crash_step(state, action, params, rng):
    # only the strongest brake avoids the crossing vehicle
    if action == -4.0:
        state[0] = 1.0
        return -5.0, True
    return -2000.0, True


@njit
def mdp_step(state, action, params, rng):
    # params = flat [next (3x4), reward (3x4)]
    s = int(state[0])
    a = int((action + 4.0) / 2.0)
    state[0] = params[s * 4 + a]
    return params[12 + s * 4 + a], False


@njit
def noisy_step(state, action, params, rng):
    state[0] += action + rng.standard_normal()
    return -abs(state[0]), False


def toy(step, params=None, actions=ACTS):
    return GenerativeModel(step, always_brake, _root_copy, _dim,
                           np.zeros(1) if params is None else params, np.asarray(actions, float))


MDP_NEXT = np.array([[1, 2, 0, 2], [2, 0, 1, 1], [0, 0, 2, 1]], dtype=float)
MDP_REWARD = np.array([[1.0, -2.0, 0.0, 3.0], [-1.0, 4.0, 0.5, -3.0], [6.0, -4.0, 1.0, 0.0]])


def expectimax(s, depth, gamma):
    if depth == 0:
        return 0.0, None
    vals = [MDP_REWARD[s, a] + gamma * expectimax(int(MDP_NEXT[s, a]), depth - 1, gamma)[0] for a in range(4)]
    return max(vals), int(np.argmax(vals))


MDP_PARAMS = np.concatenate([MDP_NEXT.ravel(), MDP_REWARD.ravel()])
