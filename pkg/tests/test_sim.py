import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intersection_pomcp import kinematics as kin
from intersection_pomcp.layout import IntersectionLayout, Turn
from intersection_pomcp.model import AccelAction, ObservationModel
from intersection_pomcp.sim import (
    IdmParams,
    OverlapError,
    SimConfig,
    SimulationError,
    TrafficVehicle,
    detect_collision,
    idm_accel,
    new_sim,
    rect_corners,
    sense,
    sim_step,
    spawn_traffic,
    traffic_accelerations,
    traffic_overlaps,
    warm_up,
)

shapely = pytest.importorskip("shapely.geometry")


def idm_reference(v, gap, dv, p: IdmParams):
    s_star = p.s0 + v * p.headway + v * dv / (2 * math.sqrt(p.a_max * p.b_comf))
    return p.a_max * (1 - (v / p.v0) ** p.delta - (s_star / gap) ** 2)


# ---------------------------------------------------------------------------
# IDM


def test_idm_free_road():
    p = IdmParams()
    assert idm_accel(0.0, math.inf, 0.0, p) == pytest.approx(2.0)
    assert idm_accel(p.v0, math.inf, 0.0, p) == pytest.approx(0.0, abs=1e-12)


def test_idm_gap_equal_desired():
    p = IdmParams()
    v = 10.0
    s_star = p.s0 + v * p.headway
    assert idm_accel(v, s_star, 0.0, p) == pytest.approx(-p.a_max * (v / p.v0) ** 4, abs=1e-12)


def test_idm_equilibrium_gap():
    p = IdmParams()
    v = 10.0
    # gap at which interaction cancels the free-road term
    s_eq = (p.s0 + v * p.headway) / math.sqrt(1 - (v / p.v0) ** 4)
    assert idm_accel(v, s_eq, 0.0, p) == pytest.approx(0.0, abs=1e-9)


@given(
    v=st.floats(0.0, 13.88),
    gap=st.floats(0.5, 200.0),
    dv=st.floats(-10.0, 10.0),
)
def test_idm_matches_reference(v, gap, dv):
    p = IdmParams()
    exp = min(max(idm_reference(v, gap, dv, p), kin.IDM_MIN_ACCEL), p.a_max)
    assert idm_accel(v, gap, dv, p) == pytest.approx(exp, rel=1e-9, abs=1e-9)


def test_idm_rejects_overlap():
    with pytest.raises(OverlapError):
        idm_accel(5.0, 0.0, 0.0, IdmParams())
    with pytest.raises(ValueError):
        IdmParams(headway=0.0)


def test_idm_clamped_to_emergency_brake():
    assert idm_accel(13.0, 0.1, 13.0, IdmParams()) == kin.IDM_MIN_ACCEL


# ---------------------------------------------------------------------------
# spawning


def test_spawn_rate_empty_road():
    cfg = SimConfig(density=0.2)
    rng = np.random.default_rng(0)
    n = 20_000
    count = 0
    for _ in range(n):
        sim = spawn_traffic(new_sim(cfg.layout, Turn.RIGHT), cfg, rng)
        count += len(sim.traffic)
    rate = count / (2 * n)
    se = math.sqrt(0.05 * 0.95 / (2 * n))
    assert abs(rate - 0.05) < 4 * se


def test_spawn_density_zero():
    cfg = SimConfig(density=0.0)
    rng = np.random.default_rng(0)
    sim = warm_up(new_sim(cfg.layout, Turn.LEFT), cfg, rng)
    assert sim.traffic == []


def test_spawn_respects_leader():
    cfg = SimConfig(density=1.0, dt=0.25)
    rng = np.random.default_rng(1)
    sim = new_sim(cfg.layout, Turn.RIGHT)
    lane = cfg.layout.lanes[0]
    sim.traffic.append(TrafficVehicle(0, lane, lane.entry_x + 5.0, 3.0))
    sim.next_id = 1
    for _ in range(200):
        spawn_traffic(sim, cfg, rng)
    assert [t.vid for t in sim.traffic if t.lane.index == 0] == [0]


def test_spawn_config_validation():
    with pytest.raises(ValueError):
        SimConfig(density=1.5)
    with pytest.raises(ValueError):
        SimConfig(density=1.0, dt=2.0)
    with pytest.raises(ValueError):
        SimConfig(dt=0.0)


# ---------------------------------------------------------------------------
# traffic safety


def _park(sim, cfg, rng, steps):
    for _ in range(steps):
        sim, ev = sim_step(sim, AccelAction.MAINTAIN, cfg, rng)
        assert not traffic_overlaps(sim, cfg)
        yield sim, ev


@pytest.mark.slow
def test_idm_traffic_never_overlaps_long_run():
    cfg = SimConfig(density=0.9, timeout=1e9)
    rng = np.random.default_rng(11)
    sim = new_sim(cfg.layout, Turn.RIGHT)
    n = 0
    for sim, ev in _park(sim, cfg, rng, 100_000):
        assert not ev.collided
        n += 1
    assert n == 100_000


def test_traffic_never_overlaps_short_run():
    cfg = SimConfig(density=0.7, timeout=1e9)
    rng = np.random.default_rng(4)
    sim = new_sim(cfg.layout, Turn.LEFT)
    for sim, ev in _park(sim, cfg, rng, 4000):
        assert not ev.collided
        assert all(t.v >= 0 for t in sim.traffic)


def test_vehicle_stops_behind_stopped_ego():
    cfg = SimConfig(density=0.0, timeout=1e9)
    rng = np.random.default_rng(0)
    sim = new_sim(cfg.layout, Turn.RIGHT)
    # put the ego in the middle of the near lane, stopped
    s_block = next(s for s in np.linspace(0, sim.path.length, 400) if sim.path.pose(s)[1] >= -2.0)
    x, y, th = sim.path.pose(s_block)
    sim.ego = type(sim.ego)(x, y, th, 0.0, 0.0)
    sim.ego_s = float(s_block)
    lane = cfg.layout.lanes[0]
    sim.traffic.append(TrafficVehicle(0, lane, -50.0, 12.0))
    sim.next_id = 1
    for _ in range(400):
        sim, ev = sim_step(sim, AccelAction.MAINTAIN, cfg, rng)
        assert not ev.collided
    veh = sim.traffic[0]
    assert veh.v < 1e-3
    corners = rect_corners(sim.ego.x, sim.ego.y, sim.ego.theta, cfg.vehicle_length, cfg.vehicle_width)
    gap = corners[:, 0].min() - (veh.x + 0.5 * cfg.vehicle_length)
    # IDM with these constants settles a few cm inside s0 even in continuous
    # time; compare against a fine-step integration of the same law
    assert gap == pytest.approx(_idm_stop_gap(12.0, 40.0, cfg.idm), abs=0.03)
    assert gap > 0.95 * cfg.idm.s0


def _idm_stop_gap(v, gap, p: IdmParams, dt=1e-3):
    while v > 0:
        a = idm_reference(v, gap, v, p)
        v_new = max(v + max(a, kin.IDM_MIN_ACCEL) * dt, 0.0)
        gap -= 0.5 * (v + v_new) * dt
        v = v_new
    return gap


def test_traffic_ignores_ego_outside_lane():
    cfg = SimConfig(density=0.0)
    sim = new_sim(cfg.layout, Turn.RIGHT)
    lane = cfg.layout.lanes[0]
    sim.traffic.append(TrafficVehicle(0, lane, -30.0, 13.88))
    acc = traffic_accelerations(sim, cfg)
    assert acc[0] == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------------------
# collision geometry


def _poly(x, y, th, length, width):
    return shapely.Polygon(rect_corners(x, y, th, length, width))


def test_rect_overlap_matches_shapely():
    rng = np.random.default_rng(3)
    mismatches = 0
    for _ in range(1000):
        a = (*rng.uniform(-4, 4, 2), rng.uniform(-math.pi, math.pi))
        b = (*rng.uniform(-4, 4, 2), rng.uniform(-math.pi, math.pi))
        la, wa, lb, wb = rng.uniform(1, 5, 4)
        pa, pb = _poly(*a, la, wa), _poly(*b, lb, wb)
        # skip pairs within rounding of tangency
        if pa.distance(pb) < 1e-9 and pa.intersection(pb).area < 1e-9 and pa.intersects(pb):
            continue
        got = kin.rect_overlap(*a, la, wa, *b, lb, wb)
        mismatches += got != pa.intersects(pb)
    assert mismatches == 0


def test_rect_overlap_touching_counts():
    # edge-to-edge contact is a collision (closed sets)
    assert kin.rect_overlap(0.0, 0.0, 0.0, 4.0, 2.0, 2.0, 0.0, 0.0, 4.0, 2.0)
    assert not kin.rect_overlap(0.0, 0.0, 0.0, 4.0, 2.0, 2.0 + 1e-9, 0.0, 0.0, 4.0, 2.0)


def test_detect_collision():
    cfg = SimConfig()
    sim = new_sim(cfg.layout, Turn.RIGHT)
    lane = cfg.layout.lanes[0]
    assert not detect_collision(sim)
    sim.traffic.append(TrafficVehicle(0, lane, sim.ego.x, 0.0))
    sim.ego = type(sim.ego)(sim.ego.x, lane.center_y, 0.0, 0.0)
    assert detect_collision(sim)


# ---------------------------------------------------------------------------
# episode mechanics


def test_terminal_step_raises():
    cfg = SimConfig(density=0.0, timeout=0.5)
    rng = np.random.default_rng(0)
    sim = new_sim(cfg.layout, Turn.RIGHT)
    sim, ev = sim_step(sim, AccelAction.MAINTAIN, cfg, rng)
    sim, ev = sim_step(sim, AccelAction.MAINTAIN, cfg, rng)
    assert ev.timed_out and sim.terminal
    with pytest.raises(SimulationError):
        sim_step(sim, AccelAction.MAINTAIN, cfg, rng)


def test_empty_road_crossing():
    cfg = SimConfig(density=0.0)
    rng = np.random.default_rng(0)
    sim = new_sim(cfg.layout, Turn.LEFT)
    while not sim.terminal:
        sim, ev = sim_step(sim, AccelAction.ACCELERATE, cfg, rng)
    assert sim.crossed and not sim.collided
    # constant 2 m/s^2 from rest (speed cap not reached)
    assert sim.clock == pytest.approx(math.ceil(math.sqrt(sim.path.length) / 0.25) * 0.25)


def _trace(seed, turn):
    cfg = SimConfig(density=0.5)
    rng = np.random.default_rng(seed)
    sim = warm_up(new_sim(cfg.layout, turn), cfg, rng)
    out = []
    for _ in range(80):
        if sim.terminal:
            break
        sim, _ = sim_step(sim, AccelAction.BRAKE, cfg, rng)
        out.append([(t.vid, t.x, t.v) for t in sim.traffic])
    return out


def test_determinism():
    assert _trace(5, Turn.RIGHT) == _trace(5, Turn.RIGHT)
    assert _trace(5, Turn.RIGHT) != _trace(6, Turn.RIGHT)


def test_sense_noise():
    cfg = SimConfig(density=0.5)
    rng = np.random.default_rng(1)
    sim = warm_up(new_sim(cfg.layout, Turn.RIGHT), cfg, rng)
    assert sim.traffic
    obs = sense(sim, ObservationModel(0.0, 0.0), rng)
    assert [(o.z_x, o.z_y, o.z_v) for o in obs] == [(t.x, t.y, t.v) for t in sim.traffic]


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), density=st.floats(0.0, 1.0))
def test_warm_up_invariants(seed, density):
    cfg = SimConfig(density=density, warmup=5.0)
    sim = warm_up(new_sim(cfg.layout, Turn.RIGHT), cfg, np.random.default_rng(seed))
    assert sim.clock == 0.0 and sim.steps == 0
    assert not traffic_overlaps(sim, cfg)
    assert not detect_collision(sim)
