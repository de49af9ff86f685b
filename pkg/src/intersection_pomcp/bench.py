"""Seeded episodes, batches, parameter sweeps and the prediction-error probe.

CSV schema (one row per policy and parameter point)::

    policy, turn, density, threshold, penalty_scale, episodes,
    collision_rate, success_rate, timeout_rate,           # percent of episodes
    time_to_cross, time_to_cross_se,                      # s, over crossed episodes
    braking_time, braking_time_se,                        # s per episode
    waiting_time, waiting_time_se                         # s per episode

Braking and waiting times are per-episode sums over all traffic vehicles of
the time each spent braking harder than ``SimConfig.braking_threshold`` or
moving slower than ``SimConfig.stop_threshold``, averaged over episodes.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import planner_model as pm
from .config import BenchConfig
from .imm import belief_hygiene, initial_belief, update_belief
from .layout import Turn
from .model import ModelConfig
from .policies import PlannerBundle, Policy, PomcpPolicy, RandomPolicy, TtcPolicy
from .sim import SimConfig, new_sim, sense, sim_step, step_record, warm_up

POLICIES = ("pomcp", "ttc", "random")

CSV_FIELDS = (
    "policy", "turn", "density", "threshold", "penalty_scale", "episodes",
    "collision_rate", "success_rate", "timeout_rate",
    "time_to_cross", "time_to_cross_se",
    "braking_time", "braking_time_se",
    "waiting_time", "waiting_time_se",
)


@dataclass(frozen=True)
class ExperimentSpec:
    turn: Turn = Turn.RIGHT
    density: float = 0.2
    sigma_p: float = 0.1
    sigma_v: float = 0.1
    policy: str = "pomcp"
    threshold: float = 4.5
    penalty_scale: float = 1.0
    episodes: int = 1000
    seed: int = 0
    config: BenchConfig = field(default_factory=BenchConfig)

    def __post_init__(self) -> None:
        object.__setattr__(self, "turn", Turn(self.turn))
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}; expected one of {POLICIES}")
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if self.threshold < 0:
            raise ValueError("threshold must be non-negative")
        if self.penalty_scale <= 0:
            raise ValueError("penalty_scale must be positive")
        # surfaces invalid density/noise before any stepping
        self.sim_config()
        self.model_config()

    @classmethod
    def from_config(cls, cfg: BenchConfig, **overrides: Any) -> "ExperimentSpec":
        base = dict(
            turn=cfg.turn, density=cfg.sim.density, sigma_p=cfg.sim.sigma_p, sigma_v=cfg.sim.sigma_v,
            threshold=cfg.ttc_threshold, episodes=cfg.episodes, seed=cfg.seed, config=cfg,
        )
        base.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**base)

    def sim_config(self) -> SimConfig:
        return replace(self.config.sim, density=self.density, sigma_p=self.sigma_p, sigma_v=self.sigma_v)

    def model_config(self) -> ModelConfig:
        m = self.config.model
        return replace(
            m, dt=self.config.sim.dt, sigma_p=self.sigma_p, sigma_v=self.sigma_v,
            reward=m.reward.scaled(self.penalty_scale),
        )

    def make_policy(self) -> Policy:
        sim = self.config.sim
        if self.policy == "ttc":
            return TtcPolicy(self.threshold, sim.idm, sim.layout, self.model_config().ego_width)
        if self.policy == "random":
            return RandomPolicy()
        path = sim.layout.path(self.turn)
        return PomcpPolicy(PlannerBundle.build(
            path, self.model_config(), self.config.solver, self.config.ttc_threshold, sim.idm, sim.layout
        ))


@dataclass(frozen=True)
class EpisodeMetrics:
    seed: int
    collided: bool
    timed_out: bool
    time_to_cross: float | None
    braking_time: float
    waiting_time: float
    duration: float
    steps: int
    min_cov_eigenvalue: float = math.inf
    max_mu_error: float = 0.0

    def __post_init__(self) -> None:
        crossed = self.time_to_cross is not None
        if crossed + self.collided + self.timed_out != 1:
            raise ValueError("exactly one of crossed/collided/timed_out must hold")
        if min(self.braking_time, self.waiting_time, self.duration) < 0:
            raise ValueError("times must be non-negative")

    @property
    def crossed(self) -> bool:
        return self.time_to_cross is not None

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["crossed"] = self.crossed
        for k in ("min_cov_eigenvalue",):
            if not math.isfinite(d[k]):
                d[k] = None
        return d


@dataclass(frozen=True)
class AggregateMetrics:
    policy: str
    turn: str
    density: float
    threshold: float
    penalty_scale: float
    episodes: int
    collision_rate: float
    success_rate: float
    timeout_rate: float
    time_to_cross: float
    time_to_cross_se: float
    braking_time: float
    braking_time_se: float
    waiting_time: float
    waiting_time_se: float

    def row(self) -> dict[str, str]:
        out = {}
        for k in CSV_FIELDS:
            v = getattr(self, k)
            out[k] = f"{v:.6f}" if isinstance(v, float) else str(v)
        return out


@dataclass
class EpisodeResult:
    metrics: EpisodeMetrics
    log: list[dict[str, Any]] | None = None


def episode_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """Independent (traffic, sensor, policy) generators derived from one seed.

    The traffic stream only depends on the seed, so different policies see the
    same arrivals for the same seed.
    """
    ss = np.random.SeedSequence(seed)
    return tuple(np.random.default_rng(s) for s in ss.spawn(3))  # type: ignore[return-value]


def run_episode(
    spec: ExperimentSpec, seed: int, policy: Policy | None = None, detail: bool = False,
) -> EpisodeResult:
    """Warm up traffic, then loop sense -> act -> step until a terminal event."""
    cfg = spec.sim_config()
    traffic_rng, sensor_rng, policy_rng = episode_streams(seed)
    policy = policy or spec.make_policy()
    sim = warm_up(new_sim(cfg.layout, spec.turn), cfg, traffic_rng)
    policy.reset(sim.ego, sim.ego_s, sim.path)
    obs_model = cfg.observation
    braking = waiting = 0.0
    min_eig, mu_err = math.inf, 0.0
    log: list[dict[str, Any]] | None = [step_record(sim, None, None)] if detail else None
    while not sim.terminal:
        observations = sense(sim, obs_model, sensor_rng)
        decision = policy.act(observations, sim.ego, sim.ego_s, policy_rng)
        if isinstance(policy, PomcpPolicy) and policy.belief is not None and policy.belief.tracks:
            e, m = belief_hygiene(policy.belief)
            min_eig, mu_err = min(min_eig, e), max(mu_err, m)
        sim, ev = sim_step(sim, decision.action, cfg, traffic_rng)
        braking += cfg.dt * len(ev.braking)
        waiting += cfg.dt * len(ev.stopped)
        if log is not None:
            rec = step_record(sim, float(decision.action.value), ev)
            rec["diagnostics"] = decision.diagnostics
            log.append(rec)
    metrics = EpisodeMetrics(
        seed=seed,
        collided=sim.collided,
        timed_out=sim.timed_out,
        time_to_cross=sim.clock if sim.crossed else None,
        braking_time=braking,
        waiting_time=waiting,
        duration=sim.clock,
        steps=sim.steps,
        min_cov_eigenvalue=min_eig,
        max_mu_error=mu_err,
    )
    return EpisodeResult(metrics, log)


def _mean_se(xs: Sequence[float]) -> tuple[float, float]:
    if not xs:
        return math.nan, math.nan
    a = np.asarray(xs, dtype=float)
    se = float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else 0.0
    return float(a.mean()), se


def aggregate(spec: ExperimentSpec, episodes: Sequence[EpisodeMetrics]) -> AggregateMetrics:
    n = len(episodes)
    if n == 0:
        raise ValueError("no episodes to aggregate")
    n_coll = sum(e.collided for e in episodes)
    n_to = sum(e.timed_out for e in episodes)
    coll, tout = 100.0 * n_coll / n, 100.0 * n_to / n
    ttc_m, ttc_se = _mean_se([e.time_to_cross for e in episodes if e.crossed])
    br_m, br_se = _mean_se([e.braking_time for e in episodes])
    wt_m, wt_se = _mean_se([e.waiting_time for e in episodes])
    return AggregateMetrics(
        policy=spec.policy, turn=spec.turn.value, density=float(spec.density),
        threshold=float(spec.threshold), penalty_scale=float(spec.penalty_scale), episodes=n,
        collision_rate=coll, success_rate=100.0 - coll - tout, timeout_rate=tout,
        time_to_cross=ttc_m, time_to_cross_se=ttc_se,
        braking_time=br_m, braking_time_se=br_se, waiting_time=wt_m, waiting_time_se=wt_se,
    )


def _episode_job(args: tuple[ExperimentSpec, int, bool]) -> EpisodeResult:
    spec, seed, detail = args
    return run_episode(spec, seed, detail=detail)


@dataclass
class BatchResult:
    aggregate: AggregateMetrics
    episodes: list[EpisodeMetrics]
    logs: list[list[dict[str, Any]]] | None = None

    @property
    def min_cov_eigenvalue(self) -> float:
        return min((e.min_cov_eigenvalue for e in self.episodes), default=math.inf)

    @property
    def max_mu_error(self) -> float:
        return max((e.max_mu_error for e in self.episodes), default=0.0)


def run_batch(spec: ExperimentSpec, detail: bool = False, workers: int = 1) -> BatchResult:
    """Episodes with seeds ``spec.seed .. spec.seed + episodes - 1``, in seed order."""
    seeds = range(spec.seed, spec.seed + spec.episodes)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_episode_job, [(spec, s, detail) for s in seeds], chunksize=4))
    else:
        policy = spec.make_policy()
        results = [run_episode(spec, s, policy, detail) for s in seeds]
    eps = [r.metrics for r in results]
    logs = [r.log for r in results] if detail else None  # type: ignore[misc]
    return BatchResult(aggregate(spec, eps), eps, logs)


def sweep_threshold(grid: Sequence[float], spec: ExperimentSpec, workers: int = 1) -> list[BatchResult]:
    if not grid:
        raise ValueError("threshold grid is empty")
    return [run_batch(replace(spec, policy="ttc", threshold=float(t)), workers=workers) for t in grid]


def sweep_tradeoff(
    scales: Sequence[float], thresholds: Sequence[float], spec: ExperimentSpec, workers: int = 1,
) -> list[BatchResult]:
    """POMCP over action-penalty scale factors, then TTC over thresholds."""
    if not scales or not thresholds:
        raise ValueError("tradeoff grids must be nonempty")
    out = [run_batch(replace(spec, policy="pomcp", penalty_scale=float(s)), workers=workers) for s in scales]
    out += [run_batch(replace(spec, policy="ttc", threshold=float(t)), workers=workers) for t in thresholds]
    return out


def sweep_density(
    grid: Sequence[float], spec: ExperimentSpec, policies: Sequence[str] = ("pomcp", "ttc"), workers: int = 1,
) -> list[BatchResult]:
    if not grid:
        raise ValueError("density grid is empty")
    if any(not 0 <= d < 1 for d in grid):
        raise ValueError("densities must lie in [0, 1)")
    return [
        run_batch(replace(spec, policy=p, density=float(d)), workers=workers)
        for d in grid for p in policies
    ]


def pareto_dominates(a: AggregateMetrics, b: AggregateMetrics) -> bool:
    """``a`` is no worse than ``b`` in both time-to-cross and collision rate."""
    return a.time_to_cross <= b.time_to_cross and a.collision_rate <= b.collision_rate


# ---------------------------------------------------------------------------
# prediction-error probe


def prediction_error_probe(
    horizon: int, n: int, spec: ExperimentSpec, filter_steps: int = 8,
) -> np.ndarray:
    """Mean position error of the planner's generative model against the simulator.

    For each trial the ego stays parked at the stop line while traffic runs.
    After ``filter_steps`` IMM updates, every vehicle's true state is copied into
    the planner state (mode drawn from its IMM probabilities) and both the
    planner model and the simulator advance ``horizon`` steps. Returns the mean
    Euclidean position error at horizons 0..``horizon`` over vehicles that stay
    on the road throughout.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if n < 1:
        raise ValueError("n must be >= 1")
    cfg = spec.sim_config()
    mcfg = spec.model_config()
    path = cfg.layout.path(spec.turn)
    params = pm.pack_params(path, mcfg, spec.config.ttc_threshold, cfg.idm)
    sums = np.zeros(horizon + 1)
    counts = np.zeros(horizon + 1)
    trial = 0
    seed = spec.seed
    while trial < n:
        traffic_rng, sensor_rng, model_rng = episode_streams(seed)
        seed += 1
        sim = warm_up(new_sim(cfg.layout, spec.turn), cfg, traffic_rng)
        belief = initial_belief(sim.ego, sim.ego_s, sim.path)
        for _ in range(filter_steps):
            belief = update_belief(belief, sim.ego, sim.ego_s, sense(sim, cfg.observation, sensor_rng), mcfg)
            sim, _ = sim_step(sim, 0.0, cfg, traffic_rng)
        belief = update_belief(belief, sim.ego, sim.ego_s, sense(sim, cfg.observation, sensor_rng), mcfg)
        mu = {t.vehicle_id: t.mu for t in belief.tracks}
        ids = [t.vid for t in sim.traffic if t.vid in mu]
        if not ids:
            continue
        state = [pm.ego_vector(sim.ego, sim.ego_s)]
        for t in sim.traffic:
            if t.vid in mu:
                mode = 0.0 if model_rng.random() < mu[t.vid][0] else 1.0
                state.append(np.array([t.x, t.y, t.theta, t.v, t.a, mode]))
        flat = np.concatenate(state)
        errs = np.zeros((horizon + 1, len(ids)))
        alive = np.ones(len(ids), dtype=bool)
        for h in range(1, horizon + 1):
            pm.model_step(flat, 0.0, params, model_rng)
            sim, _ = sim_step(sim, 0.0, cfg, traffic_rng)
            where = {t.vid: t for t in sim.traffic}
            for k, vid in enumerate(ids):
                t = where.get(vid)
                if t is None:
                    alive[k] = False
                    continue
                o = pm.EGO + pm.VEH * k
                errs[h, k] = math.hypot(flat[o] - t.x, flat[o + 1] - t.y)
        if not alive.any():
            continue
        sums += errs[:, alive].sum(axis=1)
        counts += alive.sum()
        trial += 1
    return sums / counts


# ---------------------------------------------------------------------------
# output


def csv_text(rows: Iterable[AggregateMetrics]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r.row())
    return buf.getvalue()


def write_csv(rows: Iterable[AggregateMetrics], path: str | Path | None) -> str:
    text = csv_text(rows)
    if path is not None:
        Path(path).write_text(text)
    return text


def _jsonable(x: Any) -> Any:
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return _jsonable(x.item())
    return x


def write_jsonl(records: Iterable[dict[str, Any]], path: str | Path) -> None:
    with Path(path).open("w") as fh:
        for rec in records:
            fh.write(json.dumps(_jsonable(rec), sort_keys=True) + "\n")


def batch_records(spec: ExperimentSpec, batch: BatchResult) -> list[dict[str, Any]]:
    """JSON-lines detail: one record per episode, with its step log when recorded."""
    out = []
    for i, ep in enumerate(batch.episodes):
        rec = {"policy": spec.policy, "turn": spec.turn.value, "density": spec.density,
               "threshold": spec.threshold, "penalty_scale": spec.penalty_scale, **ep.to_dict()}
        if batch.logs is not None:
            rec["steps_log"] = batch.logs[i]
        out.append(rec)
    return out
