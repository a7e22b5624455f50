import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import central_difference, fk_homogeneous
from qpguard.arm_model import (
    ArmLoadError,
    JointState,
    check_joint_limits,
    data_path,
    forward_kinematics,
    jacobian,
    link_frames,
    load_arm,
)

angles = st.lists(st.floats(-2.5, 2.5, allow_nan=False), min_size=3, max_size=3)


def test_home_pose_points_straight_up(arm):
    _, ee = forward_kinematics(arm, np.zeros(3))
    np.testing.assert_allclose(ee.position, [0.0, 0.0, 0.75], atol=1e-15)


def test_yaw_by_pi_mirrors_xy(arm):
    q = np.array([0.0, 0.7, -0.4])
    p0 = forward_kinematics(arm, q)[1].position
    p1 = forward_kinematics(arm, q + [math.pi, 0, 0])[1].position
    np.testing.assert_allclose(p1, [-p0[0], -p0[1], p0[2]], atol=1e-12)


@given(angles)
def test_fk_matches_homogeneous_chain(q):
    from qpguard.arm_model import default_arm

    arm = default_arm()
    np.testing.assert_allclose(forward_kinematics(arm, q)[1].position, fk_homogeneous(arm, q), atol=1e-12)


def test_fk_matches_homogeneous_chain_7dof(arm7, rng):
    for _ in range(50):
        q = rng.uniform(arm7.q_min, arm7.q_max)
        np.testing.assert_allclose(link_frames(arm7, q)[3], fk_homogeneous(arm7, q), atol=1e-12)


def test_fk_is_bitwise_deterministic(arm, rng):
    q = rng.uniform(arm.q_min, arm.q_max)
    a = forward_kinematics(arm, q)
    b = forward_kinematics(arm, q.copy())
    for pa, pb in zip(a[0] + [a[1]], b[0] + [b[1]]):
        assert np.array_equal(pa.position, pb.position) and np.array_equal(pa.orientation, pb.orientation)


def test_fk_quaternions_are_unit(arm, rng):
    poses, ee = forward_kinematics(arm, rng.uniform(arm.q_min, arm.q_max))
    for p in poses + [ee]:
        assert abs(np.linalg.norm(p.orientation) - 1.0) <= 1e-9


def test_chain_locality(arm7, rng):
    q = rng.uniform(arm7.q_min, arm7.q_max)
    for j in range(arm7.dof):
        moved = q.copy()
        moved[j] += 0.3
        a, _ = forward_kinematics(arm7, q)
        b, _ = forward_kinematics(arm7, moved)
        # joint j drives link j + 1; links 0..j stay put exactly
        for k in range(j + 1):
            assert np.array_equal(a[k].position, b[k].position)
            assert np.array_equal(a[k].orientation, b[k].orientation)


def test_dimension_mismatch_raises(arm):
    with pytest.raises(ValueError):
        forward_kinematics(arm, [0.0, 0.0])


def test_jacobian_at_home_matches_finite_differences(arm):
    q = np.zeros(3)
    ee = link_frames(arm, q)[3]
    fd = central_difference(lambda x: link_frames(arm, x)[3], q)
    np.testing.assert_allclose(jacobian(arm, q, ee, arm.dof), fd, atol=1e-5)


def test_jacobian_random_configurations(arm, arm7, rng):
    for model in (arm, arm7):
        for _ in range(100):
            q = rng.uniform(model.q_min, model.q_max)
            ee = link_frames(model, q)[3]
            fd = central_difference(lambda x: link_frames(model, x)[3], q)
            np.testing.assert_allclose(jacobian(model, q, ee, model.dof), fd, atol=1e-5)


def test_jacobian_of_body_point_on_intermediate_link(arm, rng):
    q = rng.uniform(arm.q_min, arm.q_max)
    local = np.array([0.01, -0.02, 0.1])

    def point(x):
        Rs, ps, _, _ = link_frames(arm, x)
        return ps[2] + Rs[2] @ local

    J = jacobian(arm, q, point(q), 2)
    np.testing.assert_allclose(J, central_difference(point, q), atol=1e-6)
    assert np.all(J[:, 2] == 0.0)


def test_base_point_has_zero_jacobian(arm):
    assert np.all(jacobian(arm, np.ones(3), [0.1, 0.2, 0.0], 0) == 0.0)


def test_point_on_joint_axis_gives_zero_column(arm):
    # the yaw axis is the world z axis through the origin
    J = jacobian(arm, [0.3, 0.0, 0.0], [0.0, 0.0, 0.75], arm.dof)
    np.testing.assert_allclose(J[:, 0], 0.0, atol=1e-15)


def test_invalid_link_index(arm):
    with pytest.raises(ValueError):
        jacobian(arm, np.zeros(3), np.zeros(3), 7)


def test_limits_midpoint_is_clean(arm):
    assert check_joint_limits(arm, JointState(arm.q_mid, np.zeros(3))) == []


def test_limits_position_violation_magnitude(arm):
    q = arm.q_mid.copy()
    q[1] = arm.q_max[1] + 0.1
    report = check_joint_limits(arm, JointState(q, np.zeros(3)))
    assert len(report) == 1
    assert report[0].joint == 1 and report[0].kind == "position"
    assert report[0].magnitude == pytest.approx(0.1, abs=1e-12)


def test_limits_are_closed(arm):
    state = JointState(arm.q_max.copy(), arm.qdot_max.copy())
    assert check_joint_limits(arm, state) == []
    state = JointState(arm.q_min.copy(), -arm.qdot_max.copy())
    assert check_joint_limits(arm, state) == []


def test_velocity_violation(arm):
    qd = np.zeros(3)
    qd[2] = -(arm.qdot_max[2] + 0.5)
    report = check_joint_limits(arm, JointState(arm.q_mid, qd))
    assert [(v.joint, v.kind) for v in report] == [(2, "velocity")]
    assert report[0].magnitude == pytest.approx(0.5)


def test_bundled_arms_load(arm, arm7):
    assert arm.dof == 3 and arm7.dof == 7
    assert len(arm.collision_bodies) > 0


def _doc():
    with open(data_path("desk_arm.json")) as fh:
        return json.load(fh)


def test_load_rejects_inverted_limits():
    doc = _doc()
    doc["q_min"][0], doc["q_max"][0] = 1.0, -1.0
    with pytest.raises(ArmLoadError, match="q_min"):
        load_arm(doc)


def test_load_rejects_dangling_link():
    doc = _doc()
    doc["collision_bodies"][0]["link"] = 9
    with pytest.raises(ArmLoadError, match="collision_bodies"):
        load_arm(doc)


def test_load_rejects_missing_field():
    doc = _doc()
    del doc["qdot_max"]
    with pytest.raises(ArmLoadError, match="qdot_max"):
        load_arm(doc)


def test_load_rejects_wrong_length():
    doc = _doc()
    doc["q_max"] = [1.0, 1.0]
    with pytest.raises(ArmLoadError, match="q_max"):
        load_arm(doc)


def test_load_round_trip(arm):
    again = load_arm(json.dumps(arm.to_dict()))
    q = np.array([0.2, -0.4, 1.1])
    np.testing.assert_array_equal(link_frames(arm, q)[3], link_frames(again, q)[3])
