import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perceploco.errors import SpecificationError
from perceploco.rewards import (
    TERMS,
    WEIGHTS,
    RewardParams,
    RobotSnapshot,
    evaluate_all,
    support_height,
    track_lin_vel,
)

N_JOINTS = 12

# weights exactly as listed for the training reward table
TABLE_WEIGHTS = [
    ("lin_vel_tracking", 2.5),
    ("ang_vel_tracking", 1.5),
    ("orientation", 1.0),
    ("feet_contact", 1.5),
    ("feet_y_distance", 0.1),
    ("foothold_placement", 2.0),
    ("base_height", 0.8),
    ("lin_vel_z", -1.0),
    ("ang_vel_xy", -0.05),
    ("joint_velocity", -0.001),
    ("action_rate", -0.01),
    ("action_smoothness", -0.01),
    ("feet_air_time", -2.5),
    ("foot_slip", -0.2),
    ("foot_impact_acc", -0.5),
    ("foot_impact_vel", -1.5),
    ("dof_pos_limits", -10.0),
    ("dof_vel_limits", -0.6),
    ("hip_pos", -7.0),
    ("ankle_pos", -10.0),
    ("stumble", -10.0),
]


def nominal(**changes) -> RobotSnapshot:
    """Perfect tracking at the nominal pose with both feet loaded on flat ground."""
    base = dict(
        base_ang_vel=[0.0, 0.0, 0.0],
        base_lin_vel=[0.6, 0.0, 0.0],
        projected_gravity=[0.0, 0.0, -1.0],
        command=[0.6, 0.0, 0.0],
        q=np.zeros(N_JOINTS),
        qd=np.zeros(N_JOINTS),
        q0=np.zeros(N_JOINTS),
        action=np.zeros(N_JOINTS),
        action_prev=np.zeros(N_JOINTS),
        action_prev2=np.zeros(N_JOINTS),
        q_min=np.full(N_JOINTS, -1.5),
        q_max=np.full(N_JOINTS, 1.5),
        qd_max=np.full(N_JOINTS, 20.0),
        foot_forces=[[0.0, 0.0, 190.0], [0.0, 0.0, 190.0]],
        foot_vel=np.zeros((2, 3)),
        foot_height=[0.0, 0.0],
        air_time=[0.0, 0.0],
        first_contact=[False, False],
        foot_acc_z=[0.0, 0.0],
        base_height=0.55,
        feet_y_distance=0.27,
        single_contact_recent=True,
    )
    base.update(changes)
    return RobotSnapshot(**base)


def joints(**entries):
    v = np.zeros(N_JOINTS)
    for k, val in entries.items():
        v[int(k[1:])] = val
    return v


# (term, snapshot, expected raw value) rows; expectations are worked by hand
ROWS = [
    ("lin_vel_tracking", nominal(), 1.0),
    ("lin_vel_tracking", nominal(command=[0.05, 0.0, 0.0], base_lin_vel=[-0.05, 0.0, 0.0]), math.exp(-0.1 / 0.25)),
    ("lin_vel_tracking", nominal(command=[0.03, 0.04, 0.0], base_lin_vel=[0.0, 0.0, 0.0]), math.exp(-0.07 / 0.25)),
    ("lin_vel_tracking", nominal(command=[1.0, 0.0, 0.0], base_lin_vel=[0.5, 0.0, 0.0]), math.exp(-1.0)),
    ("lin_vel_tracking", nominal(command=[0.6, 0.0, 0.0], base_lin_vel=[0.3, 0.4, 0.0]), math.exp(-0.25 / 0.25)),
    ("ang_vel_tracking", nominal(command=[0.6, 0.0, 0.4], base_ang_vel=[0.3, -0.2, 0.4]), 1.0),
    ("ang_vel_tracking", nominal(command=[0.6, 0.0, 0.5], base_ang_vel=[0.0, 0.0, 0.0]), math.exp(-1.0)),
    ("orientation", nominal(), 1.0),
    ("orientation", nominal(projected_gravity=[0.6, 0.0, -0.8]), math.exp(-6.0)),
    ("feet_contact", nominal(command=[0.0, 0.0, 0.0], single_contact_recent=False), 1.0),
    ("feet_contact", nominal(single_contact_recent=False), 0.0),
    ("feet_contact", nominal(), 1.0),
    ("feet_y_distance", nominal(), 1.0),
    ("feet_y_distance", nominal(feet_y_distance=0.17), math.exp(-1.0)),
    ("base_height", nominal(), 1.0),
    ("base_height", nominal(base_height=0.75, foot_height=[0.15, 0.30]), math.exp(-10 * 0.025)),
    ("base_height", nominal(base_height=0.75, foot_height=[0.15, 0.30], foot_forces=[[0, 0, 0.5], [0, 0, 100]]),
     math.exp(-10 * 0.1)),
    ("base_height", nominal(foot_forces=np.zeros((2, 3))), 0.0),
    ("lin_vel_z", nominal(base_lin_vel=[0.6, 0.0, -0.3]), 0.09),
    ("ang_vel_xy", nominal(base_ang_vel=[0.3, 0.4, 1.0]), 0.25),
    ("joint_velocity", nominal(qd=joints(j0=1.0, j5=-2.0)), 5.0),
    ("action_rate", nominal(action=joints(j3=0.5), action_prev=joints(j3=0.25, j4=0.5)), 0.3125),
    ("action_smoothness", nominal(action=joints(j1=1.0), action_prev=joints(j1=0.5), action_prev2=joints(j1=0.5)), 0.25),
    ("feet_air_time", nominal(first_contact=[True, False], air_time=[0.3, 0.9]), 0.2),
    ("feet_air_time", nominal(first_contact=[True, True], air_time=[0.75, 0.25]), 0.0),
    ("foot_slip", nominal(foot_vel=[[0.3, 0.4, 0.0], [1.0, 0.0, 0.0]], foot_forces=[[0, 0, 10], [0, 0, 4.9]]), 0.5),
    ("foot_impact_acc", nominal(foot_acc_z=[-60.0, 40.0]), 10.0),
    ("foot_impact_vel", nominal(foot_vel=[[0, 0, -0.8], [0, 0, 0.5]]), 0.2),
    ("dof_pos_limits", nominal(q=joints(j0=1.75, j6=-2.0)), 0.75),
    ("dof_vel_limits", nominal(qd=joints(j2=-23.0, j9=19.0)), 3.0),
    ("hip_pos", nominal(q=joints(j1=0.5, j7=-0.5, j0=3.0)), 0.5),
    ("ankle_pos", nominal(q=joints(j5=0.5, j11=0.5, j4=9.0)), 0.5),
    ("stumble", nominal(), 0.0),
    ("stumble", nominal(foot_forces=[[30.0, 40.0, 9.0], [0.0, 0.0, 100.0]]), 1.0),
]


@pytest.mark.parametrize("term, snap, expected", ROWS, ids=[f"{r[0]}-{i}" for i, r in enumerate(ROWS)])
def test_table_rows(term, snap, expected):
    assert evaluate_all(snap).raw(term) == pytest.approx(expected, abs=1e-12)


def test_every_term_covered_by_rows():
    assert {r[0] for r in ROWS} | {"foothold_placement"} == set(TERMS)


def test_default_weights_are_exact():
    assert list(WEIGHTS.items()) == TABLE_WEIGHTS
    assert RewardParams().weights == dict(TABLE_WEIGHTS)


def test_nominal_snapshot_has_no_penalties():
    b = evaluate_all(nominal(), foothold_r=1.0)
    for term, w in TABLE_WEIGHTS:
        assert b.raw(term) == (1.0 if w > 0 else 0.0)
    assert b.total == pytest.approx(sum(w for _, w in TABLE_WEIGHTS if w > 0), abs=1e-12)


def test_foothold_term_is_passed_through():
    b = evaluate_all(nominal(), foothold_r=math.exp(-1))
    assert b.raw("foothold_placement") == math.exp(-1)
    assert b.weighted("foothold_placement") == 2.0 * math.exp(-1)


@pytest.mark.parametrize("tangential, normal, expected", [(50.0, 10.0, 0.0), (50.000001, 10.0, 1.0), (49.999999, 10.0, 0.0)])
def test_stumble_boundary(tangential, normal, expected):
    f = [[tangential * 0.6, tangential * 0.8, normal], [0.0, 0.0, 100.0]]
    assert evaluate_all(nominal(foot_forces=f)).raw("stumble") == expected


def test_slip_threshold_is_strict():
    snap = nominal(foot_vel=[[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]], foot_forces=[[0, 0, 5.0], [0, 0, 100]])
    assert evaluate_all(snap).raw("foot_slip") == 0.0


def test_support_height_mean():
    snap = nominal(foot_height=[0.1, 0.4], foot_forces=[[0, 0, 2], [0, 0, 2]])
    assert support_height(snap) == pytest.approx(0.25)


def test_low_speed_switch_boundary():
    # exactly at v_s the quadratic form applies
    snap = nominal(command=[0.1, 0.0, 0.0], base_lin_vel=[0.0, 0.0, 0.0])
    assert track_lin_vel(snap) == pytest.approx(math.exp(-0.01 / 0.25), abs=1e-15)


def test_custom_weights_and_indices():
    params = RewardParams(weights={"hip_pos": -1.0}, hip_indices=(0,))
    b = evaluate_all(nominal(q=joints(j0=0.5)), params=params)
    assert b.terms["hip_pos"] == (0.25, -1.0, -0.25)
    assert b.terms["ankle_pos"][1] == -10.0


def test_snapshot_validation():
    with pytest.raises(SpecificationError):
        nominal(projected_gravity=[0.0, 0.0, -0.9])
    with pytest.raises(SpecificationError):
        nominal(qd=np.zeros(11))
    with pytest.raises(SpecificationError):
        nominal(foot_vel=np.zeros((3, 3)))
    with pytest.raises(SpecificationError):
        RewardParams(weights={"dance": 1.0})


def test_snapshot_dict_round_trip():
    snap = nominal(q=joints(j3=0.2), first_contact=[True, False])
    back = RobotSnapshot.from_dict(snap.to_dict())
    assert evaluate_all(back).terms == evaluate_all(snap).terms
    with pytest.raises(SpecificationError):
        RobotSnapshot.from_dict({**snap.to_dict(), "extra": 1})


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), foothold=st.floats(0.0, 1.0))
def test_total_is_sum_of_weighted_terms(seed, foothold):
    rng = np.random.default_rng(seed)
    g = rng.normal(size=3)
    snap = nominal(
        base_ang_vel=rng.normal(size=3),
        base_lin_vel=rng.normal(size=3),
        projected_gravity=g / np.linalg.norm(g),
        command=rng.normal(size=3) * rng.choice([0.01, 1.0]),
        q=rng.normal(size=N_JOINTS),
        qd=rng.normal(scale=10, size=N_JOINTS),
        action=rng.normal(size=N_JOINTS),
        action_prev=rng.normal(size=N_JOINTS),
        action_prev2=rng.normal(size=N_JOINTS),
        foot_forces=rng.normal(scale=50, size=(2, 3)),
        foot_vel=rng.normal(size=(2, 3)),
        foot_height=rng.normal(size=2),
        air_time=rng.uniform(0, 1, 2),
        first_contact=rng.integers(0, 2, 2).astype(bool),
        foot_acc_z=rng.normal(scale=60, size=2),
        base_height=rng.uniform(0, 1),
        feet_y_distance=rng.uniform(0, 0.5),
        single_contact_recent=bool(rng.integers(0, 2)),
    )
    b = evaluate_all(snap, foothold)
    assert b.total == pytest.approx(math.fsum(w for _, _, w in b.terms.values()), abs=1e-12)
    for term, (raw, w, weighted) in b.terms.items():
        assert weighted == w * raw
        if w < 0 and term != "feet_air_time":
            assert raw >= 0.0
        if w > 0:
            assert 0.0 <= raw <= 1.0
