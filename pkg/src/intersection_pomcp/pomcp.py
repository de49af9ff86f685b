"""POMCP with progressive widening over sampled next states.

The search is generic over a generative-model contract made of compiled
(``numba.njit``) functions and an opaque parameter tuple:

``step(state, action_value, params, rng) -> (reward, terminal)``
    One sample from the generative model, overwriting the 1-d float array
    ``state`` with the next state.
``rollout_policy(state, params) -> action_value``
    Action of the default policy, computed from the simulated state.
``sample_root(belief, params, rng, out)``
    Draw a root state from the (opaque) belief into ``out``.
``state_dim(belief) -> int``
    Length of the flat state vector.

``rng`` is the caller's ``numpy.random.Generator``; the compiled search draws
from it directly, so its state advances exactly as in pure Python.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np
from numba import njit


@dataclass(frozen=True)
class SolverConfig:
    depth: int = 15
    exploration: float = 20.0
    tree_queries: int = 2000
    pw_k: float = 4.0
    pw_alpha: float = 0.2
    gamma: float = 0.95
    log_ucb: bool = False

    def __post_init__(self) -> None:
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.tree_queries < 1:
            raise ValueError("tree_queries must be >= 1")
        if self.pw_k <= 0:
            raise ValueError("pw_k must be positive")
        if not 0 <= self.pw_alpha <= 1:
            raise ValueError("pw_alpha must lie in [0, 1]")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")


@dataclass(frozen=True)
class GenerativeModel:
    step: Callable
    rollout_policy: Callable
    sample_root: Callable
    state_dim: Callable
    params: Any
    actions: np.ndarray


@njit(cache=True)
def ucb_select(n_h, n_ha, q, c, log_variant):
    """Index maximising Q + c*sqrt(N(h)/N(h,a)) (or the log(N(h)) variant).

    Unvisited actions score +inf; ties go to the lowest index.
    """
    best = -1
    best_score = -math.inf
    for a in range(n_ha.shape[0]):
        if n_ha[a] == 0:
            return a
        if log_variant:
            bonus = c * math.sqrt(math.log(n_h) / n_ha[a]) if n_h > 1 else 0.0
        else:
            bonus = c * math.sqrt(n_h / n_ha[a])
        score = q[a] + bonus
        if score > best_score:
            best_score = score
            best = a
    return best


@njit(cache=True)
def pw_widen(n_visits, n_children, k, alpha):
    """True when a new child state should be sampled: k * N(h,a)**alpha > #children."""
    return k * n_visits**alpha > n_children


@njit(cache=True)
def rollout(state, depth, policy_fn, step_fn, params, gamma, rng):
    """Discounted return of the rollout policy from ``state`` over ``depth`` steps.

    ``state`` is used as scratch space and is overwritten.
    """
    total = 0.0
    disc = 1.0
    s = state
    for _ in range(depth):
        a = policy_fn(s, params)
        r, term = step_fn(s, a, params, rng)
        total += disc * r
        if term:
            break
        disc *= gamma
    return total


@njit(cache=True)
def _search(belief, params, step_fn, policy_fn, sample_fn, dim_fn, actions, depth, c, queries,
            pw_k, pw_alpha, gamma, log_ucb, rng, validate):
    n_act = actions.shape[0]
    max_nodes = queries + 2
    dim = dim_fn(belief)
    first = np.empty(dim)
    sample_fn(belief, params, rng, first)
    s = np.empty(dim)

    states = np.empty((max_nodes, dim))
    h_n = np.zeros(max_nodes, np.int64)
    h_expanded = np.zeros(max_nodes, np.bool_)
    h_reward = np.zeros(max_nodes)
    h_terminal = np.zeros(max_nodes, np.bool_)
    h_sibling = np.full(max_nodes, -1, np.int64)
    h_parent = np.full(max_nodes, -1, np.int64)
    h_parent_action = np.full(max_nodes, -1, np.int64)
    h_depth = np.zeros(max_nodes, np.int64)
    a_n = np.zeros((max_nodes, n_act), np.int64)
    a_q = np.zeros((max_nodes, n_act))
    a_nchild = np.zeros((max_nodes, n_act), np.int64)
    a_first = np.full((max_nodes, n_act), -1, np.int64)

    n_nodes = 1
    h_expanded[0] = True
    states[0] = first

    path_node = np.empty(depth + 1, np.int64)
    path_act = np.empty(depth + 1, np.int64)
    path_rew = np.empty(depth + 1)
    violations = 0
    new_states = 0

    for qi in range(queries):
        if qi == 0:
            s[:] = first
        else:
            sample_fn(belief, params, rng, s)
        node = 0
        d = depth
        length = 0
        leaf = 0.0
        while True:
            if d == 0:
                break
            if not h_expanded[node]:
                h_expanded[node] = True
                leaf = rollout(s, d, policy_fn, step_fn, params, gamma, rng)
                break
            a = ucb_select(h_n[node], a_n[node], a_q[node], c, log_ucb)
            h_n[node] += 1
            a_n[node, a] += 1
            if pw_widen(a_n[node, a], a_nchild[node, a], pw_k, pw_alpha):
                child = n_nodes
                n_nodes += 1
                states[child] = s
                r, term = step_fn(states[child], actions[a], params, rng)
                h_reward[child] = r
                h_terminal[child] = term
                h_parent[child] = node
                h_parent_action[child] = a
                h_depth[child] = h_depth[node] + 1
                h_sibling[child] = a_first[node, a]
                a_first[node, a] = child
                a_nchild[node, a] += 1
                new_states += 1
            else:
                j = rng.integers(0, a_nchild[node, a])
                child = a_first[node, a]
                for _ in range(j):
                    child = h_sibling[child]
                r = h_reward[child]
                term = h_terminal[child]
            path_node[length] = node
            path_act[length] = a
            path_rew[length] = r
            length += 1
            if term:
                break
            node = child
            s[:] = states[child]
            d -= 1

        g = leaf
        for i in range(length - 1, -1, -1):
            g = path_rew[i] + gamma * g
            nd = path_node[i]
            ac = path_act[i]
            a_q[nd, ac] += (g - a_q[nd, ac]) / a_n[nd, ac]
            if validate and a_nchild[nd, ac] > math.ceil(pw_k * a_n[nd, ac] ** pw_alpha):
                violations += 1

    return (a_q[:n_nodes].copy(), a_n[:n_nodes].copy(), a_nchild[:n_nodes].copy(), h_n[:n_nodes].copy(),
            h_parent[:n_nodes].copy(), h_parent_action[:n_nodes].copy(), h_depth[:n_nodes].copy(),
            h_terminal[:n_nodes].copy(), violations, new_states)


@dataclass(frozen=True, eq=False)
class SearchTree:
    """Flattened search statistics; node 0 is the root."""

    q: np.ndarray  # (nodes, actions)
    n_action: np.ndarray
    n_children: np.ndarray
    n_node: np.ndarray
    parent: np.ndarray
    parent_action: np.ndarray
    depth: np.ndarray
    terminal: np.ndarray
    pw_violations: int
    new_states: int

    @property
    def root_q(self) -> np.ndarray:
        return self.q[0]

    @property
    def root_visits(self) -> np.ndarray:
        return self.n_action[0]

    def dump(self, max_depth: int = 2, actions: np.ndarray | None = None) -> str:
        """Depth-limited text dump: per node N, Q per action, child counts."""
        children: dict[int, list[int]] = {}
        for i, p in enumerate(self.parent):
            if p >= 0:
                children.setdefault(int(p), []).append(i)
        lines = []
        labels = actions if actions is not None else np.arange(self.q.shape[1])

        def visit(i: int) -> None:
            pad = "  " * int(self.depth[i])
            head = f"{pad}node {i} N={int(self.n_node[i])}"
            if self.terminal[i]:
                head += " terminal"
            lines.append(head)
            for a, lab in enumerate(labels):
                if self.n_action[i, a]:
                    lines.append(
                        f"{pad}  a={lab:g} N={int(self.n_action[i, a])} Q={self.q[i, a]:.3f} "
                        f"children={int(self.n_children[i, a])}"
                    )
            if self.depth[i] < max_depth:
                for ch in sorted(children.get(i, [])):
                    visit(ch)

        visit(0)
        return "\n".join(lines)


def search(belief: Any, cfg: SolverConfig, model: GenerativeModel, rng: np.random.Generator,
           validate: bool = False) -> SearchTree:
    out = _search(
        belief, model.params, model.step, model.rollout_policy, model.sample_root, model.state_dim,
        np.asarray(model.actions, dtype=float), cfg.depth, float(cfg.exploration), cfg.tree_queries,
        float(cfg.pw_k), float(cfg.pw_alpha), float(cfg.gamma), cfg.log_ucb, rng, validate,
    )
    return SearchTree(*out)


def best_action_index(tree: SearchTree) -> int:
    """argmax of root Q over visited actions; lowest index wins ties."""
    q = np.where(tree.root_visits > 0, tree.root_q, -np.inf)
    return int(np.argmax(q))


def plan(belief: Any, cfg: SolverConfig, model: GenerativeModel, rng: np.random.Generator) -> tuple[float, SearchTree]:
    """Run ``cfg.tree_queries`` simulations and return (best action value, tree)."""
    tree = search(belief, cfg, model, rng)
    return float(model.actions[best_action_index(tree)]), tree
