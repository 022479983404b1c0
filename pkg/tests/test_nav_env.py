import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geomagnav.eval import generate_tasks
from geomagnav.field_model import GeoPosition, LinearField
from geomagnav.geodesy import FULL_REGION, LocalFrame, Region, desk_region
from geomagnav.nav_env import (TRACE_HEADER, EpisodeFinishedError, EpisodeTrace, NavAction,
                               NavEnv, RewardConfig, StateNormalizer, TaskError, TaskSpec,
                               VehiclePose, compute_reward, motion_update, objective,
                               objective_terms, theoretical_heading, wrap_abs)

angles = st.floats(-20.0, 20.0, allow_nan=False)


def desk_env(**kw):
    region = desk_region()
    kw.setdefault("max_distance", 20_000.0)
    return NavEnv(LinearField(region.frame), region, **kw)


def task_at(region, xy0, xy1, seed=0):
    f = region.frame
    (a, b), (c, d) = f.to_latlon(*xy0), f.to_latlon(*xy1)
    return TaskSpec(GeoPosition(float(a), float(b)), GeoPosition(float(c), float(d)), seed=seed)


# ---------------------------------------------------------------------------
# motion


def test_motion_examples():
    p = motion_update(VehiclePose(0, 0, 0), NavAction(1, math.pi / 2))
    assert (p.x, p.y, p.theta) == pytest.approx((0, 1, math.pi / 2))
    p = motion_update(VehiclePose(0, 0, math.pi / 2), NavAction(2, 0))
    assert (p.x, p.y) == pytest.approx((0, 2))
    p = motion_update(VehiclePose(3, 4, 0.2, 5), NavAction(0, 0.3))
    assert (p.x, p.y, p.theta, p.step_index) == pytest.approx((3, 4, 0.5, 6))


def test_action_clamping():
    a = NavAction(-5, 4)
    assert a.distance == 0.0 and a.yaw == math.pi / 2
    assert NavAction.bounded(1e9, -9, 100).distance == 100 and NavAction.bounded(1e9, -9, 100).yaw == -math.pi / 2


# ---------------------------------------------------------------------------
# objective


def test_objective_examples():
    ini, tgt = np.array([1.0, 2.0, 3.0]), np.array([2.0, 0.0, 7.0])
    assert objective(ini, tgt, ini) == 3.0
    assert objective(tgt, tgt, ini) == 0.0
    assert objective((ini + tgt) / 2, tgt, ini) == pytest.approx(0.75)


def test_objective_floor_flag():
    terms, floored = objective_terms([1.0, 1.0, 1.0], [1.0, 2.0, 3.0], [1.0, 1.0, 1.0])
    assert floored.tolist() == [True, False, False]
    assert terms[0] == 0.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e4, 1e4), min_size=9, max_size=9))
def test_objective_nonnegative_and_zero_iff_at_target(v):
    cur, tgt, ini = np.array(v[:3]), np.array(v[3:6]), np.array(v[6:])
    F = objective(cur, tgt, ini)
    assert F >= 0
    assert objective(tgt, tgt, ini) == 0


# ---------------------------------------------------------------------------
# theoretical heading


def test_heading_identity_fields():
    # B1 = x, B2 = y: residual (x - xT, y - yT)
    lam, flag = theoretical_heading((0.0, 0.0), (3.0, 4.0), (1.0, 0.0), (0.0, 1.0))
    assert flag == "ok" and lam == pytest.approx(math.atan2(4, 3), abs=1e-12)


def test_heading_degenerate_and_parallel():
    assert theoretical_heading((1, 2), (1, 2), (1, 0), (0, 1)) == (0.0, "degenerate")
    assert theoretical_heading((0, 0), (1, 1), (1, 1), (2, 2))[1] == "parallel"


@settings(max_examples=300, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1),
       st.floats(-1e5, 1e5), st.floats(-1e5, 1e5), st.floats(-math.pi, math.pi))
def test_heading_is_bearing_in_linear_field_and_rotates(g1x, g1y, g2x, g2y, tx, ty, phi):
    det = g1x * g2y - g1y * g2x
    if abs(det) < 1e-3 or math.hypot(tx, ty) < 1.0:
        return
    g1, g2 = np.array([g1x, g1y]), np.array([g2x, g2y])
    t = np.array([tx, ty])
    lam, flag = theoretical_heading((0.0, 0.0), (g1 @ t, g2 @ t), g1, g2)
    assert flag == "ok"
    assert wrap_abs(lam - math.atan2(ty, tx)) < 1e-9
    R = np.array([[math.cos(phi), -math.sin(phi)], [math.sin(phi), math.cos(phi)]])
    lam_r, _ = theoretical_heading((0.0, 0.0), (g1 @ t, g2 @ t), R @ g1, R @ g2)
    assert wrap_abs(lam_r - lam - phi) < 1e-9


# ---------------------------------------------------------------------------
# reward


def test_reward_examples():
    cfg = RewardConfig()
    pose = VehiclePose(0, 0, 0.3)
    assert compute_reward(1.0, 1.0, pose, 0.3, 3, cfg, True) == pytest.approx(200 + 3 * math.pi / 4)
    assert compute_reward(1.0, 0.9, pose, 0.3, 3, cfg, False) == pytest.approx(1.0 + 3 * math.pi / 4)
    assert compute_reward(1.0, 1.0, VehiclePose(0, 0, math.pi / 4), 0.0, 3, cfg, False) == pytest.approx(0.0, abs=1e-12)
    assert compute_reward(1.0, 1.0, VehiclePose(0, 0, 1.0), 0.0, 3, cfg, False) < 0


def test_reward_decay_only_late_and_when_regressing():
    cfg = RewardConfig(zeta3=0.0)
    pose = VehiclePose()
    early = compute_reward(1.0, 1.5, pose, 0.0, 25, cfg, False)
    late = compute_reward(1.0, 1.5, pose, 0.0, 40, cfg, False)
    assert early == pytest.approx(-5.0)
    assert late == pytest.approx(-5.0 - 10 * 0.5 * 40 / 50)
    assert compute_reward(1.0, 0.5, pose, 0.0, 40, cfg, False) == pytest.approx(5.0)
    off = RewardConfig(zeta3=0.0, decay_enabled=False)
    assert compute_reward(1.0, 1.5, pose, 0.0, 40, off, False) == pytest.approx(-5.0)


def test_objective_cap_saturates_proximity():
    cfg = RewardConfig(zeta3=0.0, objective_cap=3.0)
    assert compute_reward(3.0, 50.0, VehiclePose(), 0.0, 1, cfg, False) == 0.0
    assert compute_reward(50.0, 1.0, VehiclePose(), 0.0, 1, cfg, False) == pytest.approx(20.0)


@settings(max_examples=300, deadline=None)
@given(angles, angles)
def test_alignment_bounds(theta, lam):
    cfg = RewardConfig(zeta2=10.0)
    r = compute_reward(1.0, 1.0, VehiclePose(0, 0, theta), lam, 1, cfg, False)
    assert abs(r) <= cfg.zeta3 * 3 * math.pi / 4 + 1e-12
    assert 0.0 <= wrap_abs(theta - lam) <= math.pi


def test_reward_config_validation():
    assert RewardConfig().validate() == []
    assert RewardConfig(zeta3=0.0).validate() == []
    errs = RewardConfig(zeta1=1.0, zeta3=20.0, n_max=0, objective_cap=1.0).validate()
    assert len(errs) == 4


# ---------------------------------------------------------------------------
# normalizer


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=8, max_size=8))
def test_normalizer_bijection(z):
    n = StateNormalizer(np.arange(8.0) - 10, np.arange(8.0) * 3 + 1)
    np.testing.assert_allclose(n.normalize(n.denormalize(z)), z, atol=1e-12)


def test_env_states_normalize_into_unit_box():
    env = desk_env()
    for t in generate_tasks(desk_region(110_000), 10, 40_000, 100_000, seed=3):
        s = env.normalizer.normalize(env.reset(t).as_array())
        assert np.all((s >= 0) & (s <= 1))


# ---------------------------------------------------------------------------
# episodes


def test_reset_deterministic_and_F3():
    env = desk_env()
    t = task_at(env.region, (-30_000, 0), (30_000, 20_000), seed=5)
    a = env.reset(t)
    assert env.current_objective == 3.0
    b = env.reset(t)
    assert a == b
    assert a.last_distance == 0 and a.last_yaw == 0


def test_reset_heading_points_at_target():
    env = desk_env()
    t = task_at(env.region, (-30_000, 0), (30_000, 20_000))
    env.reset(t)
    assert env.pose.theta == pytest.approx(math.atan2(20_000, 60_000), abs=1e-6)


def test_reset_task_errors():
    env = desk_env()
    with pytest.raises(TaskError):
        env.reset(TaskSpec(GeoPosition(20.0, 0.0), GeoPosition(-5.0, 165.0)))
    with pytest.raises(TaskError):
        env.reset(TaskSpec(GeoPosition(-5.0, 165.0), GeoPosition(-5.0, 165.0)))


def test_step_reaching_target_succeeds():
    env = desk_env(max_distance=100_000.0)
    t = task_at(env.region, (-30_000, 0), (30_000, 20_000))
    env.reset(t)
    _, r, done, info = env.step(NavAction(math.hypot(60_000, 20_000), 0.0))
    assert done and info["success"] and info["F"] == pytest.approx(0.0, abs=1e-12)
    assert r > 200
    with pytest.raises(EpisodeFinishedError):
        env.step(NavAction(0, 0))


def test_zero_distance_actions_time_out():
    env = desk_env()
    env.reset(task_at(env.region, (-30_000, 0), (30_000, 20_000)))
    done, n = False, 0
    while not done:
        _, _, done, info = env.step(NavAction(0.0, 0.0))
        n += 1
    assert n == 50 and info["timeout"] and not info["success"]
    assert env.trace.steps == 50


def test_step_toward_target_reduces_F():
    env = desk_env()
    t = task_at(env.region, (-30_000, 0), (30_000, 20_000))
    env.reset(t)
    _, _, _, info = env.step(NavAction(10_000, 0.0))
    assert info["F"] < 3.0
    recomputed = objective(env.source.params(info["lat"], info["lon"]), env._target, env._initial)
    assert info["F"] == pytest.approx(recomputed, rel=1e-12)


def test_following_heading_closes_distance():
    env = desk_env(max_distance=8_000.0)
    for t in generate_tasks(desk_region(110_000), 5, 40_000, 100_000, seed=9):
        env.reset(t)
        prev = env.distance_to_target()
        done = False
        while not done and prev > 8_000:
            lam = env._lambda_prime
            _, _, done, _ = env.step(NavAction(8_000, lam - env.pose.theta))
            d = env.distance_to_target()
            assert d < prev
            prev = d


def test_leaving_region_ends_episode():
    env = desk_env(max_distance=100_000.0)
    env.reset(task_at(env.region, (60_000, 0), (0, 0)))
    _, _, done, info = env.step(NavAction(100_000, math.pi / 2))
    assert done and info["out_of_region"] and not info["success"]


def test_success_implies_F_below_zeta():
    env = desk_env(max_distance=50_000.0, success_radius_m=5_000.0)
    for t in generate_tasks(desk_region(110_000), 20, 40_000, 100_000, seed=2):
        env.reset(t)
        done = False
        while not done:
            _, _, done, info = env.step(NavAction(min(50_000, env.distance_to_target()), 0.0))
        if info["success"]:
            assert info["F"] < env.zeta
        assert env.trace.steps <= 50


def test_trace_csv_roundtrip():
    env = desk_env()
    env.reset(task_at(env.region, (-30_000, 0), (30_000, 20_000)))
    for _ in range(3):
        env.step(NavAction(7_000, 0.1))
    text = env.trace.to_csv()
    assert text.split("\n")[0] == ",".join(TRACE_HEADER)
    back = EpisodeTrace.from_csv(text)
    assert back.rows == [{k: (float(v) if k not in ("step", "done", "success") else v)
                          for k, v in r.items()} for r in env.trace.rows]


def test_full_scale_task_state_matches_anchor_elements(igrf):
    env = NavEnv(igrf, FULL_REGION)
    s = env.reset(TaskSpec(GeoPosition(-2.0, 162.0), GeoPosition(-8.0, 164.0)))
    assert abs(math.degrees(s.d_cur) - 8.019) < 0.5
    assert abs(math.degrees(s.i_cur) - (-16.150)) < 0.5
    assert abs(s.bh_cur - 35467.990) < 300
    assert abs(math.degrees(s.d_tgt) - 9.228) < 0.5
    assert abs(math.degrees(s.i_tgt) - (-26.923)) < 0.5
    assert abs(s.bh_tgt - 35199.415) < 300
