import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perceploco.errors import SpecificationError, StatisticError
from perceploco.foothold import FootholdConfig, FootholdState, touchdown_reward
from perceploco.harness import (
    CONTACT_TOL,
    CONTROL_DT,
    GaitScript,
    GaitTrajectory,
    RolloutConfig,
    RolloutLog,
    detect_events,
    foothold_over_trajectory,
    gate_records,
    is_depth_tick,
    median_absolute_deviation,
    run_rollout,
    synthesize_gait,
    touchdown_mad,
)
from perceploco.policy import PolicyDims, gate_statistics, init_params
from perceploco.terrain import TerrainSpec, generate

CFG = FootholdConfig()


def scan_events(traj: GaitTrajectory):
    """Events from clearance and height read straight off the trajectory at each control tick."""
    times = np.arange(traj.n_samples) * CONTROL_DT
    clear = traj.clearance_at(times)
    z = traj.feet_at(times)[0][..., 2]
    out = []
    for f in range(2):
        down = True
        for i in range(1, len(times)):
            if down and clear[i, f] > CONTACT_TOL:
                out.append((i, f, "liftoff"))
                down = False
            elif not down and clear[i, f] <= CONTACT_TOL and z[i, f] < z[i - 1, f]:
                out.append((i, f, "touchdown"))
                down = True
    return sorted(out)


@pytest.mark.parametrize("name, lift", [("flat", 0.1), ("stairs", 0.2), ("stairs_down", 0.2), ("platform", 0.4)])
def test_events_match_clearance_scan(fields, name, lift):
    script = GaitScript(step_height=lift)
    traj = GaitTrajectory(script, fields[name], 5.0)
    g = traj.sample()
    got = sorted((e.index, e.foot, e.kind) for e in detect_events(g.times, g.feet, fields[name]))
    assert got == scan_events(traj)
    for sw in traj.swings:
        assert (sw.lift_tick + 1, sw.foot, "liftoff") in got or sw.lift_tick + 1 >= traj.n_samples
        if sw.land_tick < traj.n_samples:
            assert (sw.land_tick, sw.foot, "touchdown") in got


def test_swing_stays_above_terrain_on_a_dense_scan(fields):
    traj = GaitTrajectory(GaitScript(step_height=0.2), fields["stairs"], 4.0)
    for sw in traj.swings:
        t = np.linspace(sw.lift_tick * CONTROL_DT, sw.land_tick * CONTROL_DT, 2001)[1:-1]
        assert np.all(traj.clearance_at(t)[:, sw.foot] > 0.0)


def test_low_swing_over_stairs_rejected(fields):
    with pytest.raises(SpecificationError):
        GaitTrajectory(GaitScript(step_height=0.0), fields["stairs"], 3.0)


@pytest.mark.parametrize("k", [0, 1, 2, 5])
def test_k_steps_give_k_touchdowns(fields, k):
    log = run_rollout(GaitScript(max_steps=k), fields["flat"], 5.0)
    assert len(log.touchdowns) == k
    kinds = [e["kind"] for e in log.events()]
    assert kinds.count("liftoff") == k


def test_zero_command_gives_no_events(fields):
    log = run_rollout(GaitScript(forward_cmd=0.0), fields["stairs"], 2.0)
    assert len(log) == 100
    assert log.events() == []
    assert log.touchdowns == []


def test_zero_duration_gives_empty_log(fields, tmp_path):
    log = run_rollout(GaitScript(), fields["flat"], 0.0)
    assert len(log) == 0
    path = tmp_path / "log.jsonl"
    log.write(path)
    assert len(path.read_text().splitlines()) == 1
    assert len(RolloutLog.read(path)) == 0


def test_negative_duration(fields):
    with pytest.raises(SpecificationError):
        synthesize_gait(GaitScript(), fields["flat"], -1.0)


@pytest.mark.parametrize("name", ["flat", "stairs", "stairs_down"])
def test_clean_gait_scores_high(fields, name):
    log = run_rollout(GaitScript(step_height=0.2), fields[name], 4.0)
    assert len(log.touchdowns) >= 6
    assert all(td["reward"] > 0.9 for td in log.touchdowns)


def test_offset_touchdown_scores_inverse_e(fields):
    log = run_rollout(GaitScript(touchdown_offset=0.05), fields["stairs"], 2.0)
    first = log.touchdowns[:2]
    assert len(first) == 2
    for td in first:
        assert td["distance"] == pytest.approx(0.05, abs=1e-9)
        assert td["reward"] == pytest.approx(math.exp(-1), abs=1e-6)


def test_rewards_recompute_offline(fields):
    log = run_rollout(GaitScript(touchdown_offset=0.03), fields["stairs"], 4.0)
    assert log.touchdowns
    for td in log.touchdowns:
        state = FootholdState(candidates=np.array(td["candidates"]).reshape(-1, 3), phase="swing")
        assert touchdown_reward(state, td["contact_local"], CFG) == td["reward"]
    for s in log.steps:
        assert s["total_reward"] == pytest.approx(math.fsum(v[2] for v in s["rewards"].values()), abs=1e-12)
        placed = sum(td["reward"] for td in s["touchdowns"])
        assert s["rewards"]["foothold_placement"][0] == placed


def test_trajectory_path_matches_rollout(fields):
    log = run_rollout(GaitScript(), fields["stairs"], 4.0)
    times = [s["t"] for s in log.steps]
    feet = np.array([s["feet"] for s in log.steps])
    tds = foothold_over_trajectory(fields["stairs"], times, feet, [0.6] * len(times))
    assert [(t["foot"], t["step"], t["reward"]) for t in tds] == [(t["foot"], t["step"], t["reward"]) for t in log.touchdowns]


def test_force_contact_variant_agrees_on_clean_gait(fields):
    a = run_rollout(GaitScript(), fields["flat"], 3.0)
    b = run_rollout(GaitScript(), fields["flat"], 3.0, RolloutConfig(contact_mode="force"))
    assert [(e["step"], e["foot"], e["kind"]) for e in a.events()] == [(e["step"], e["foot"], e["kind"]) for e in b.events()]


def test_depth_tick_schedule():
    ticks = [i for i in range(50) if is_depth_tick(i)]
    assert len(ticks) == 20
    assert ticks[:6] == [0, 3, 5, 8, 10, 13]
    assert all(is_depth_tick(i) == is_depth_tick(i + 5) for i in range(1, 200))


def test_log_round_trip(fields, tmp_path):
    log = run_rollout(GaitScript(), fields["flat"], 1.5)
    path = tmp_path / "log.jsonl"
    log.write(path)
    back = RolloutLog.read(path)
    assert back.header == log.header
    assert back.steps == log.steps
    assert back.lines() == log.lines()


def test_rollout_is_deterministic(fields):
    a = run_rollout(GaitScript(), fields["stairs"], 2.0).lines()
    b = run_rollout(GaitScript(), fields["stairs"], 2.0).lines()
    assert a == b


def test_policy_rollout_logs_gates(fields):
    dims = PolicyDims()
    cfg = RolloutConfig(policy=init_params(dims, 3))
    log = run_rollout(GaitScript(), fields["stairs"], 0.6, cfg)
    recs = gate_records(log)
    assert len(recs) == len(log) == 30
    assert all(r.beta.shape == (dims.fused_dim,) for r in recs)
    stats = gate_statistics(recs)
    assert set(stats["terrain"]) == {"stairs_up"}
    assert all(0 < v < 1 for g in stats.values() for v in g.values())


def test_gait_script_dict_round_trip():
    g = GaitScript(step_length=0.25, max_steps=3, initial_pose=(1.0, 0.5, 0.1))
    assert GaitScript.from_dict(g.to_dict()) == g
    with pytest.raises(SpecificationError):
        GaitScript.from_dict({"stride": 1.0})
    with pytest.raises(SpecificationError):
        GaitScript(duty_factor=1.0)


def test_yawed_gait_follows_heading(fields):
    g = synthesize_gait(GaitScript(initial_pose=(2.0, 0.0, 0.5)), fields["flat"], 3.0)
    disp = g.base[-1, :2] - g.base[0, :2]
    assert math.atan2(disp[1], disp[0]) == pytest.approx(0.5, abs=1e-9)


# touchdown spread


def sorted_median(values):
    v = sorted(values)
    n = len(v)
    return v[n // 2] if n % 2 else 0.5 * (v[n // 2 - 1] + v[n // 2])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=60))
def test_mad_matches_sort_oracle(values):
    med = sorted_median(values)
    want = sorted_median([abs(v - med) for v in values])
    assert median_absolute_deviation(values) == pytest.approx(want, abs=1e-9)


def test_mad_empty():
    with pytest.raises(StatisticError):
        median_absolute_deviation([])


def test_clean_stairs_touchdown_mad_is_zero(fields):
    log = run_rollout(GaitScript(), fields["stairs"], 4.0)
    assert touchdown_mad(log) < 1e-9


def test_touchdown_mad_needs_tread_off_stairs(fields):
    log = run_rollout(GaitScript(), fields["flat"], 3.0)
    with pytest.raises(StatisticError):
        touchdown_mad(log)
    assert touchdown_mad(log, tread=0.3) < 1e-9
    with pytest.raises(StatisticError):
        touchdown_mad(run_rollout(GaitScript(forward_cmd=0.0), fields["flat"], 1.0))
