"""Exit criteria for the whole package.

Each test prints one PASS/FAIL line (collected again in the terminal summary).
Episode counts are the full ones; set ACCEPTANCE_SCALE below 1 for a quick
smoke run, which is reported as reduced.
"""

import itertools
import math
import os
import time

import numpy as np
import pytest

from intersection_pomcp.bench import (
    ExperimentSpec,
    csv_text,
    pareto_dominates,
    prediction_error_probe,
    run_batch,
)
from intersection_pomcp.imm import (
    GaussianEstimate,
    ImmBelief,
    TrackBelief,
    belief_hygiene,
    embedded_models,
    imm_core,
    imm_step,
    initial_track,
    kalman_predict,
    kalman_update,
)
from intersection_pomcp.layout import Turn
from intersection_pomcp.model import (
    BehaviorSwitchMatrix,
    ModelConfig,
    VehicleObservation,
    VehicleState,
)
from intersection_pomcp.pomcp import SolverConfig, best_action_index, plan, search

from toys import MDP_PARAMS, chain_step, crash_step, expectimax, mdp_step, noisy_step, toy

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

SCALE = float(os.environ.get("ACCEPTANCE_SCALE", "1.0"))
THRESHOLDS = (0.0, 1.0, 2.0, 3.0, 4.0, 4.5, 5.0)
DENSITIES = (0.1, 0.3, 0.5, 0.7, 0.9)
PENALTY_SCALES = (0.5, 1.0, 2.0, 5.0, 10.0, 20.0)


def _n(full):
    return max(1, int(round(full * SCALE)))


def _tag():
    return "" if SCALE == 1.0 else f" [reduced x{SCALE:g}]"


_BATCHES = {}


def batch(policy, turn=Turn.RIGHT, density=0.2, threshold=4.5, penalty_scale=1.0, episodes=1000):
    """Run a batch once per session; criteria that share settings reuse it."""
    key = (policy, turn, density, threshold, penalty_scale, episodes)
    if key not in _BATCHES:
        spec = ExperimentSpec(
            turn=turn, density=density, policy=policy, threshold=threshold,
            penalty_scale=penalty_scale, episodes=episodes,
        )
        _BATCHES[key] = run_batch(spec)
    return _BATCHES[key]


def ttc_sweep():
    return [batch("ttc", threshold=t, episodes=_n(300)) for t in THRESHOLDS]


def _fmt(a):
    return f"coll {a.collision_rate:.1f}% succ {a.success_rate:.1f}% ttc {a.time_to_cross:.2f}s"


# ---------------------------------------------------------------------------
# 1. filter oracle


def _gauss(x, m, v):
    return math.exp(-0.5 * (x - m) ** 2 / v) / math.sqrt(2 * math.pi * v)


def test_filter_oracle(report):
    t0 = time.perf_counter()
    a, q, r = (1.0, 0.6), (0.3, 1.5), 1e-10
    sw = np.array([[0.9, 0.1], [0.3, 0.7]])
    mu0 = np.array([0.4, 0.6])
    zs = [1.3, 0.2, 0.9]
    ests = [GaussianEstimate(np.array([1.0]), np.zeros((1, 1)))] * 2
    models = [(np.array([[a[j]]]), np.array([[q[j]]])) for j in range(2)]
    mu, bayes_err = mu0, 0.0
    for t, z in enumerate(zs, start=1):
        ests, mu, _ = imm_core(ests, mu, np.array([z]), np.eye(1), np.array([[r]]), sw, models)
        post = np.zeros(2)
        for seq in itertools.product(range(2), repeat=t):
            w, prev = mu0 @ sw[:, seq[0]], 1.0
            for k, m in enumerate(seq):
                if k:
                    w *= sw[seq[k - 1], m]
                w *= _gauss(zs[k], a[m] * prev, q[m] + r)
                prev = zs[k]
            post[seq[-1]] += w
        bayes_err = max(bayes_err, np.abs(mu - post / post.sum()).max())

    cfg = ModelConfig()
    mods = embedded_models(cfg)
    obs = cfg.observation
    rng = np.random.default_rng(2)
    z0 = VehicleObservation(-30.0, -2.0, math.pi / 2, 11.0, 0)
    track = initial_track(z0, obs)
    track = TrackBelief(0, track.estimates, np.array([1.0, 0.0]), z0.theta)
    kf, kf_err = track.estimates[0], 0.0
    for k in range(30):
        z = VehicleObservation(-30 + 2.75 * (k + 1) + rng.normal(0, 0.1), -2.0 + rng.normal(0, 0.1),
                               math.pi / 2, 11.0 + rng.normal(0, 0.1), 0)
        track = imm_step(track, z, BehaviorSwitchMatrix(np.eye(2)), mods, obs)
        kf, _ = kalman_update(kalman_predict(kf, mods[0]), z.as_vector(), obs.projection(z.theta), obs.noise)
        kf_err = max(kf_err, np.abs(track.estimates[0].mean - kf.mean).max(),
                     np.abs(track.estimates[0].cov - kf.cov).max())
    dt = time.perf_counter() - t0
    ok = bayes_err <= 1e-6 and kf_err <= 1e-9 and dt < 1.0
    report(1, ok, f"bayes err {bayes_err:.2e}, kalman err {kf_err:.2e}, {dt:.2f}s")


# ---------------------------------------------------------------------------
# 2. solver oracle


def test_solver_oracle(report):
    cfg = SolverConfig(depth=3, tree_queries=500, gamma=0.95)
    # warm the compiled kernels so the timing covers search only
    plan(np.zeros(2), SolverConfig(depth=2, tree_queries=5), toy(chain_step), np.random.default_rng(0))
    t0 = time.perf_counter()
    _, mdp_best = expectimax(0, 3, 0.95)
    problems = {
        "chain": (np.zeros(2), toy(chain_step), 3),
        "crash": (np.zeros(1), toy(crash_step), 0),
        "mdp": (np.zeros(1), toy(mdp_step, MDP_PARAMS), mdp_best),
    }
    hits = {}
    for name, (root, model, best) in problems.items():
        hits[name] = sum(best_action_index(search(root, cfg, model, np.random.default_rng(s))) == best
                         for s in range(100))
    dt = time.perf_counter() - t0
    ok = min(hits.values()) >= 99 and dt < 30.0
    report(2, ok, f"optimal/100: {hits}, {dt:.1f}s")


# ---------------------------------------------------------------------------
# 3. progressive widening bound


def test_pw_bound(report):
    rng = np.random.default_rng(0)
    violations, queries = 0, 0
    for _ in range(10):
        k, alpha = float(rng.uniform(0.5, 6.0)), float(rng.uniform(0.0, 1.0))
        cfg = SolverConfig(depth=8, tree_queries=1000, pw_k=k, pw_alpha=alpha)
        tree = search(np.zeros(1), cfg, toy(noisy_step), rng, validate=True)
        bound = np.ceil(k * tree.n_action.astype(float) ** alpha)
        violations += tree.pw_violations + int(np.sum(tree.n_children > bound))
        queries += cfg.tree_queries
    report(3, violations == 0, f"{violations} violations over {queries} search steps")


# ---------------------------------------------------------------------------
# 4. TTC threshold sweep


def test_ttc_sweep_shape(report):
    rows = [b.aggregate for b in ttc_sweep()]
    times = [a.time_to_cross for a in rows]
    coll = {a.threshold: a.collision_rate for a in rows}
    ok = (coll[0.0] >= 10.0 and coll[4.5] <= 0.3 and coll[5.0] <= 0.3
          and all(x < y for x, y in zip(times, times[1:])))
    flag = " (nonzero)" if coll[4.5] or coll[5.0] else ""
    detail = ", ".join(f"{a.threshold:g}s: {a.collision_rate:.1f}%/{a.time_to_cross:.2f}s" for a in rows)
    report(4, ok, f"coll/ttc {detail}{flag}{_tag()}")


# ---------------------------------------------------------------------------
# 5. headline comparison


def test_headline_comparison(report):
    n = _n(1000)
    pomcp = batch("pomcp", episodes=n).aggregate
    ttc = batch("ttc", episodes=n).aggregate
    rnd_left = batch("random", turn=Turn.LEFT, episodes=n).aggregate
    pomcp_left = batch("pomcp", turn=Turn.LEFT, episodes=n).aggregate
    checks = {
        "zero collisions": pomcp.collision_rate == 0.0 and ttc.collision_rate == 0.0,
        "full success": pomcp.success_rate == 100.0 and ttc.success_rate == 100.0,
        "time": pomcp.time_to_cross <= ttc.time_to_cross,
        "braking": pomcp.braking_time >= ttc.braking_time,
        "waiting": pomcp.waiting_time >= ttc.waiting_time,
        "random left": rnd_left.collision_rate > 5.0 * pomcp_left.collision_rate,
    }
    failed = [k for k, v in checks.items() if not v]
    detail = (
        f"right pomcp {_fmt(pomcp)} brake {pomcp.braking_time:.3f} wait {pomcp.waiting_time:.3f}; "
        f"ttc {_fmt(ttc)} brake {ttc.braking_time:.3f} wait {ttc.waiting_time:.3f}; "
        f"left random coll {rnd_left.collision_rate:.1f}% vs pomcp {pomcp_left.collision_rate:.1f}%"
    )
    if failed:
        detail += f"; failed: {', '.join(failed)}"
    report(5, not failed, detail + _tag())


# ---------------------------------------------------------------------------
# 6. density sweep


def test_density_sweep_shape(report):
    n = _n(200)
    rows = {p: [batch(p, density=d, episodes=n).aggregate for d in DENSITIES] for p in ("pomcp", "ttc")}
    succ = {p: [a.success_rate for a in r] for p, r in rows.items()}
    ok = all(s[0] == 100.0 and all(x >= y for x, y in zip(s, s[1:])) for s in succ.values())
    ok &= all(a.time_to_cross <= b.time_to_cross for a, b in zip(rows["pomcp"], rows["ttc"]))
    detail = "; ".join(
        f"{d:g}: pomcp {a.success_rate:.1f}%/{a.time_to_cross:.2f}s ttc {b.success_rate:.1f}%/{b.time_to_cross:.2f}s"
        for d, a, b in zip(DENSITIES, rows["pomcp"], rows["ttc"])
    )
    report(6, ok, detail + _tag())


# ---------------------------------------------------------------------------
# 7. tradeoff frontier


def test_tradeoff_frontier(report):
    pomcp = [batch("pomcp", penalty_scale=s, episodes=_n(200)).aggregate for s in PENALTY_SCALES]
    ttc = [b.aggregate for b in ttc_sweep()]
    pairs = [(p, t) for p in pomcp for t in ttc if pareto_dominates(p, t)]
    detail = ", ".join(f"x{a.penalty_scale:g}: {a.collision_rate:.1f}%/{a.time_to_cross:.2f}s" for a in pomcp)
    if pairs:
        p, t = pairs[0]
        detail += f"; x{p.penalty_scale:g} dominates ttc {t.threshold:g}s"
    report(7, bool(pairs), f"pomcp coll/ttc {detail}{_tag()}")


# ---------------------------------------------------------------------------
# 8. prediction-error probe


def test_prediction_error_probe(report):
    errs = prediction_error_probe(10, _n(200), ExperimentSpec())
    ok = bool(errs[-1] > 0 and np.all(np.diff(errs) >= 0))
    report(8, ok, f"10-step (2.5 s) mean error {errs[-1]:.3f} m (reference 2.15 m), "
                  f"by horizon {np.round(errs, 3).tolist()}{_tag()}")


# ---------------------------------------------------------------------------
# 9. determinism


def test_determinism(report):
    specs = [
        ExperimentSpec(policy="pomcp", episodes=_n(20), seed=123, density=0.5),
        ExperimentSpec(policy="ttc", episodes=_n(100), seed=123, turn=Turn.LEFT),
        ExperimentSpec(policy="random", episodes=_n(100), seed=123, turn=Turn.LEFT),
    ]
    same = [csv_text([run_batch(s).aggregate]) == csv_text([run_batch(s).aggregate]) for s in specs]
    report(9, all(same), f"byte-identical CSV for {sum(same)}/{len(same)} re-run batches")


# ---------------------------------------------------------------------------
# 10. numerical hygiene


def test_numerical_hygiene(report):
    # every POMCP batch run so far in this session, plus one of our own
    batch("pomcp", density=0.5, episodes=_n(50))
    eps = [m for b in _BATCHES.values() if b.aggregate.policy == "pomcp" for m in b.episodes]
    worst_eig = min(m.min_cov_eigenvalue for m in eps)
    worst_mu = max(m.max_mu_error for m in eps)

    cfg = ModelConfig()
    mods = embedded_models(cfg)
    obs = cfg.observation
    rng = np.random.default_rng(5)
    for _ in range(10_000):
        th = rng.uniform(-math.pi, math.pi)
        track = initial_track(VehicleObservation(*rng.uniform(-50, 50, 2), th, rng.uniform(0, 14), 0), obs)
        sw = BehaviorSwitchMatrix.symmetric(rng.uniform(0.5, 1.0))
        for _ in range(rng.integers(1, 6)):
            z = VehicleObservation(*rng.uniform(-50, 50, 2), th, rng.uniform(0, 14), 0)
            track = imm_step(track, z, sw, mods, obs)
        eig, mu_err = belief_hygiene(ImmBelief(VehicleState(0, 0, 0, 0), 0.0, None, (track,)))
        worst_eig, worst_mu = min(worst_eig, eig), max(worst_mu, mu_err)
    ok = worst_eig >= -1e-9 and worst_mu <= 1e-9
    report(10, ok, f"min cov eigenvalue {worst_eig:.3e}, max |sum mu - 1| {worst_mu:.1e} "
                   f"over {len(eps)} planner episodes and 10000 fuzzed tracks")
