"""Interacting Multiple Model belief updater (CV + CA Kalman filters).

Both mode-conditioned estimates live in the 6-d CA layout
``[x, vx, ax, y, vy, ay]``; the CV filter uses the embedded CV model, so its
acceleration entries stay at zero mean and zero variance.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .layout import PathSpec
from .model import (
    BehaviorMode,
    BehaviorSwitchMatrix,
    DynamicsModel,
    ModelConfig,
    ObservationModel,
    VehicleObservation,
    VehicleState,
    WorldState,
)

log = logging.getLogger(__name__)

INITIAL_ACCEL_VAR = 4.0
_LOG_2PI = math.log(2.0 * math.pi)
_LOG_TINY = math.log(np.finfo(float).tiny)  # below this a likelihood underflows to zero


class NumericalFailure(ArithmeticError):
    """Raised when a filter step cannot be evaluated (e.g. singular innovation)."""


@dataclass(frozen=True, eq=False)
class GaussianEstimate:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean size {mean.size}")
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-9:
            raise ValueError("covariance is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))

    @property
    def dim(self) -> int:
        return self.mean.size

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.cov)[0])


def kalman_predict(est: GaussianEstimate, dyn: DynamicsModel | tuple[np.ndarray, np.ndarray]) -> GaussianEstimate:
    trans, noise = (dyn.transition, dyn.process_noise) if isinstance(dyn, DynamicsModel) else dyn
    if trans.shape != (est.dim, est.dim) or noise.shape != trans.shape:
        raise ValueError(f"model of dimension {trans.shape} applied to {est.dim}-d estimate")
    cov = trans @ est.cov @ trans.T + noise
    return GaussianEstimate(trans @ est.mean, 0.5 * (cov + cov.T))


def _update(est: GaussianEstimate, z: np.ndarray, proj: np.ndarray, noise: np.ndarray) -> tuple[GaussianEstimate, float]:
    z = np.atleast_1d(np.asarray(z, dtype=float))
    proj = np.atleast_2d(proj)
    noise = np.atleast_2d(noise)
    innov = z - proj @ est.mean
    s = proj @ est.cov @ proj.T + noise
    try:
        chol = np.linalg.cholesky(0.5 * (s + s.T))
    except np.linalg.LinAlgError:
        raise NumericalFailure("innovation covariance is not positive definite") from None
    gain = np.linalg.solve(chol.T, np.linalg.solve(chol, proj @ est.cov)).T
    white = np.linalg.solve(chol, innov)
    loglik = -0.5 * (white @ white) - np.log(np.diag(chol)).sum() - 0.5 * z.size * _LOG_2PI
    i_kh = np.eye(est.dim) - gain @ proj
    cov = i_kh @ est.cov @ i_kh.T + gain @ noise @ gain.T  # Joseph form keeps PSD
    return GaussianEstimate(est.mean + gain @ innov, 0.5 * (cov + cov.T)), float(loglik)


def kalman_update(
    est: GaussianEstimate, z: np.ndarray, projection: np.ndarray, noise: np.ndarray
) -> tuple[GaussianEstimate, float]:
    """Measurement update; returns the posterior and the innovation likelihood."""
    post, loglik = _update(est, z, projection, noise)
    return post, math.exp(loglik)


def measurement(z: VehicleObservation, obs: ObservationModel, dim: int = 6) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(z vector, H, R) for one vehicle observation."""
    return z.as_vector(), obs.projection(z.theta, dim), obs.noise


def imm_core(
    estimates: Sequence[GaussianEstimate],
    mu: np.ndarray,
    z: np.ndarray,
    projection: np.ndarray,
    noise: np.ndarray,
    switch: np.ndarray,
    models: Sequence[tuple[np.ndarray, np.ndarray]],
) -> tuple[list[GaussianEstimate], np.ndarray, np.ndarray]:
    """One IMM cycle over an arbitrary number of same-dimension linear models.

    Returns the model-conditioned posteriors, the new model probabilities and the
    per-model log-likelihoods.
    """
    n = len(models)
    mu = np.asarray(mu, dtype=float)
    switch = np.asarray(switch, dtype=float)

    # mixing
    c_bar = switch.T @ mu
    mixed = []
    for j in range(n):
        if c_bar[j] > 0:
            w = switch[:, j] * mu / c_bar[j]
        else:
            w = np.zeros(n)
            w[j] = 1.0
        m = sum(w[i] * estimates[i].mean for i in range(n))
        p = np.zeros_like(estimates[j].cov)
        for i in range(n):
            d = estimates[i].mean - m
            p += w[i] * (estimates[i].cov + np.outer(d, d))
        mixed.append(GaussianEstimate(m, 0.5 * (p + p.T)))

    # filtering
    posts = []
    logliks = np.empty(n)
    for j in range(n):
        pred = kalman_predict(mixed[j], models[j])
        post, logliks[j] = _update(pred, z, projection, noise)
        posts.append(post)

    # combining
    with np.errstate(divide="ignore"):
        logw = np.log(c_bar) + logliks
    if not np.any(logliks > _LOG_TINY):
        log.warning("IMM: all model likelihoods vanished; keeping predicted probabilities")
        preds = [kalman_predict(mixed[j], models[j]) for j in range(n)]
        return preds, c_bar / c_bar.sum(), logliks
    top = np.max(logw)
    w = np.exp(logw - top)
    return posts, w / w.sum(), logliks


def combine(estimates: Sequence[GaussianEstimate], mu: np.ndarray) -> GaussianEstimate:
    """Moment-matched single Gaussian of a mixture."""
    mean = sum(m * e.mean for m, e in zip(mu, estimates))
    cov = np.zeros_like(estimates[0].cov)
    for m, e in zip(mu, estimates):
        d = e.mean - mean
        cov += m * (e.cov + np.outer(d, d))
    return GaussianEstimate(mean, 0.5 * (cov + cov.T))


@dataclass(frozen=True, eq=False)
class TrackBelief:
    """Belief about one other vehicle."""

    vehicle_id: int | None
    estimates: tuple[GaussianEstimate, GaussianEstimate]  # (CV, CA)
    mu: np.ndarray
    theta: float

    def __post_init__(self) -> None:
        mu = np.asarray(self.mu, dtype=float)
        if mu.shape != (2,) or np.any(mu < -1e-12) or np.any(mu > 1 + 1e-12) or abs(mu.sum() - 1.0) > 1e-9:
            raise ValueError(f"invalid model probabilities {mu}")
        object.__setattr__(self, "mu", mu)

    @property
    def mu_cv(self) -> float:
        return float(self.mu[0])

    @property
    def mu_ca(self) -> float:
        return float(self.mu[1])

    def to_dict(self) -> dict:
        comb = combine(self.estimates, self.mu)
        return {
            "id": self.vehicle_id,
            "mu": self.mu.tolist(),
            "theta": self.theta,
            "mean": comb.mean.tolist(),
            "cov_diag": np.diag(comb.cov).tolist(),
        }


@dataclass(frozen=True, eq=False)
class ImmBelief:
    ego: VehicleState
    ego_arclength: float
    path: PathSpec
    tracks: tuple[TrackBelief, ...] = ()

    def to_dict(self) -> dict:
        return {
            "ego": self.ego.as_array().tolist(),
            "ego_arclength": self.ego_arclength,
            "tracks": [t.to_dict() for t in self.tracks],
        }


def embedded_models(cfg: ModelConfig) -> tuple[tuple[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]:
    return cfg.dynamics(BehaviorMode.CV).embedded(), cfg.dynamics(BehaviorMode.CA).embedded()


def initial_track(z: VehicleObservation, obs: ObservationModel) -> TrackBelief:
    s, c = math.sin(z.theta), math.cos(z.theta)
    mean = np.array([z.z_x, z.z_v * s, 0.0, z.z_y, z.z_v * c, 0.0])
    pv, vv = obs.sigma_p**2, obs.sigma_v**2
    cov_ca = np.diag([pv, vv, INITIAL_ACCEL_VAR, pv, vv, INITIAL_ACCEL_VAR])
    cov_cv = np.diag([pv, vv, 0.0, pv, vv, 0.0])
    return TrackBelief(
        z.vehicle_id,
        (GaussianEstimate(mean, cov_cv), GaussianEstimate(mean.copy(), cov_ca)),
        np.array([0.5, 0.5]),
        z.theta,
    )


def imm_step(
    track: TrackBelief,
    z: VehicleObservation,
    p: BehaviorSwitchMatrix,
    models: tuple[tuple[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]],
    obs: ObservationModel,
) -> TrackBelief:
    """Mix, filter and combine one vehicle's belief with a new observation."""
    zv, proj, noise = measurement(z, obs)
    posts, mu, _ = imm_core(track.estimates, track.mu, zv, proj, noise, p.p, models)
    return TrackBelief(track.vehicle_id, (posts[0], posts[1]), mu, z.theta)


def combined_estimate(belief: ImmBelief | TrackBelief, index: int = 0) -> GaussianEstimate:
    track = belief.tracks[index] if isinstance(belief, ImmBelief) else belief
    return combine(track.estimates, track.mu)


def initial_belief(ego: VehicleState, arclength: float, path: PathSpec) -> ImmBelief:
    return ImmBelief(ego, arclength, path, ())


def update_belief(
    belief: ImmBelief,
    ego: VehicleState,
    arclength: float,
    observations: Iterable[VehicleObservation],
    cfg: ModelConfig,
) -> ImmBelief:
    """IMM-update every observed vehicle; new ids start fresh tracks, unseen ids are dropped."""
    known = {t.vehicle_id: t for t in belief.tracks}
    models = embedded_models(cfg)
    obs_model = cfg.observation
    switch = cfg.switch
    tracks = []
    for z in observations:
        prev = known.get(z.vehicle_id)
        if prev is None or z.vehicle_id is None:
            tracks.append(initial_track(z, obs_model))
        else:
            tracks.append(imm_step(prev, z, switch, models, obs_model))
    return ImmBelief(ego, arclength, belief.path, tuple(tracks))


def sample_track_state(track: TrackBelief, rng: np.random.Generator) -> tuple[VehicleState, BehaviorMode]:
    mode = BehaviorMode.CV if rng.random() < track.mu[0] else BehaviorMode.CA
    est = track.estimates[int(mode)]
    draw = est.mean + _sqrt_psd(est.cov) @ rng.standard_normal(est.dim)
    return project_known_heading(draw, track.theta), mode


def project_known_heading(vec: np.ndarray, theta: float) -> VehicleState:
    """VehicleState from a CA-layout vector, keeping the (exactly known) heading."""
    s, c = math.sin(theta), math.cos(theta)
    v = max(0.0, vec[1] * s + vec[4] * c)
    return VehicleState(float(vec[0]), float(vec[3]), theta, v, float(vec[2] * s + vec[5] * c))


def _sqrt_psd(cov: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(cov)
    return v * np.sqrt(np.clip(w, 0.0, None))


def belief_sample(belief: ImmBelief, rng: np.random.Generator) -> WorldState:
    """Draw a world state: mode from the model probabilities, then the physical state."""
    others = tuple(sample_track_state(t, rng) for t in belief.tracks)
    return WorldState(belief.ego, others, belief.ego_arclength, belief.path)


def belief_hygiene(belief: ImmBelief) -> tuple[float, float]:
    """(smallest covariance eigenvalue, largest |sum(mu) - 1|) over all tracks."""
    min_eig = math.inf
    mu_err = 0.0
    for t in belief.tracks:
        for e in t.estimates:
            min_eig = min(min_eig, e.min_eigenvalue())
        mu_err = max(mu_err, abs(float(t.mu.sum()) - 1.0))
    return min_eig, mu_err


def with_tracks(belief: ImmBelief, tracks: Sequence[TrackBelief]) -> ImmBelief:
    return replace(belief, tracks=tuple(tracks))
