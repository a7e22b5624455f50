import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from oracles import central_difference, sample_surface, sampled_distance
from qpguard.arm_model import ArmModel, CollisionBody, Link, link_frames
from qpguard.geometry import (
    TABLE_LABEL,
    Obstacle,
    Scene,
    SceneLoadError,
    clearance,
    distance_gradient,
    load_scene,
    min_robot_env_distance,
    min_self_distance,
    proximity_pairs,
)
from qpguard.shapes import (
    Box,
    Capsule,
    HalfSpace,
    Pose,
    Sphere,
    UnsupportedPairError,
    primitive_distance,
)

S2 = math.sqrt(0.5)
ALONG_X = Pose([0, 0, 0], [S2, 0, S2, 0])  # capsule local z -> world x


def test_sphere_sphere_separated():
    r = primitive_distance(Sphere(0.1), Pose(), Sphere(0.1), Pose([0.35, 0, 0]))
    assert r.distance == pytest.approx(0.15, abs=1e-15)


def test_sphere_sphere_penetrating():
    r = primitive_distance(Sphere(0.1), Pose(), Sphere(0.1), Pose([0.15, 0, 0]))
    assert r.distance == pytest.approx(-0.05, abs=1e-15)


def test_capsule_sphere_against_sampling():
    cap = Capsule(0.2, 0.05)
    r = primitive_distance(cap, ALONG_X, Sphere(0.05), Pose([0.5, 0, 0]))
    assert r.distance == pytest.approx(0.2, abs=1e-12)
    rng = np.random.default_rng(0)
    pa = sample_surface(cap, ALONG_X, 100_000, rng)
    pb = sample_surface(Sphere(0.05), Pose([0.5, 0, 0]), 100_000, rng)
    assert abs(sampled_distance(pa, pb) - r.distance) <= 1e-3


def test_unsupported_pair_raises():
    with pytest.raises(UnsupportedPairError):
        primitive_distance(Box((0.1, 0.1, 0.1)), Pose(), Box((0.1, 0.1, 0.1)), Pose([1, 0, 0]))
    with pytest.raises(UnsupportedPairError):
        primitive_distance(HalfSpace(), Pose(), HalfSpace(), Pose())


def test_invalid_primitives_rejected():
    for make in (lambda: Sphere(0.0), lambda: Capsule(-0.1, 0.1), lambda: Box((0.1, 0.0, 0.1)),
                 lambda: HalfSpace((0.0, 0.0, 0.0))):
        with pytest.raises(ValueError):
            make()


# --- random pair generators -------------------------------------------------

unit = st.floats(-1.0, 1.0, allow_nan=False)
coord = st.floats(-0.4, 0.4, allow_nan=False)
size = st.floats(0.02, 0.2, allow_nan=False)


@st.composite
def poses(draw):
    q = np.array([draw(unit), draw(unit), draw(unit), draw(unit)])
    assume(np.linalg.norm(q) > 0.1)
    return Pose([draw(coord), draw(coord), draw(coord)], q)


@st.composite
def bounded_shapes(draw):
    kind = draw(st.sampled_from(["sphere", "capsule", "box"]))
    if kind == "sphere":
        return Sphere(draw(size))
    if kind == "capsule":
        return Capsule(draw(size), draw(size))
    return Box((draw(size), draw(size), draw(size)))


def _supported(a, b):
    return not (isinstance(a, Box) and isinstance(b, Box))


@given(bounded_shapes(), poses(), bounded_shapes(), poses())
def test_distance_symmetry(a, pa, b, pb):
    assume(_supported(a, b))
    r1 = primitive_distance(a, pa, b, pb)
    r2 = primitive_distance(b, pb, a, pa)
    assert r1.distance == pytest.approx(r2.distance, abs=1e-12)


@given(bounded_shapes(), poses(), bounded_shapes(), poses(), coord, coord, coord)
def test_translation_invariance(a, pa, b, pb, dx, dy, dz):
    assume(_supported(a, b))
    shift = np.array([dx, dy, dz])
    r1 = primitive_distance(a, pa, b, pb)
    r2 = primitive_distance(a, Pose(pa.position + shift, pa.orientation), b, Pose(pb.position + shift, pb.orientation))
    assert r1.distance == pytest.approx(r2.distance, abs=1e-12)


@given(bounded_shapes(), poses(), bounded_shapes(), poses())
def test_witness_points_realise_the_distance(a, pa, b, pb):
    assume(_supported(a, b))
    r = primitive_distance(a, pa, b, pb)
    if r.distance >= 0.0:
        assert np.linalg.norm(r.witness_a - r.witness_b) == pytest.approx(r.distance, abs=1e-9)
    assert np.linalg.norm(r.normal) == pytest.approx(1.0, abs=1e-9)


def test_distance_never_optimistic_against_sampling():
    """1000 random separated pairs: reported distance <= sampled surface distance."""
    rng = np.random.default_rng(7)
    kinds = [Sphere, Capsule, Box]
    checked = 0
    while checked < 1000:
        shapes = []
        for _ in range(2):
            k = kinds[rng.integers(3)]
            if k is Sphere:
                shapes.append(Sphere(rng.uniform(0.02, 0.15)))
            elif k is Capsule:
                shapes.append(Capsule(rng.uniform(0.02, 0.15), rng.uniform(0.02, 0.1)))
            else:
                shapes.append(Box(tuple(rng.uniform(0.02, 0.15, 3))))
        a, b = shapes
        if not _supported(a, b):
            continue
        pa = Pose(rng.uniform(-0.3, 0.3, 3), rng.normal(size=4))
        pb = Pose(rng.uniform(-0.3, 0.3, 3), rng.normal(size=4))
        r = primitive_distance(a, pa, b, pb)
        if r.distance <= 0.0:
            continue
        sa = sample_surface(a, pa, 2000, rng)
        sb = sample_surface(b, pb, 2000, rng)
        assert r.distance <= sampled_distance(sa, sb) + 1e-12
        checked += 1


def test_capsule_box_exact_against_dense_sampling():
    rng = np.random.default_rng(3)
    for _ in range(20):
        cap = Capsule(rng.uniform(0.05, 0.15), rng.uniform(0.02, 0.06))
        box = Box(tuple(rng.uniform(0.05, 0.12, 3)))
        pa = Pose(rng.uniform(-0.35, 0.35, 3), rng.normal(size=4))
        pb = Pose(np.zeros(3), rng.normal(size=4))
        r = primitive_distance(cap, pa, box, pb)
        if r.distance <= 0.01:
            continue
        sa = sample_surface(cap, pa, 60_000, rng)
        sb = sample_surface(box, pb, 60_000, rng)
        assert sampled_distance(sa, sb) - r.distance <= 5e-3


def test_halfspace_distances():
    table = HalfSpace()
    assert primitive_distance(Sphere(0.05), Pose([0, 0, 0.2]), table, Pose()).distance == pytest.approx(0.15)
    cap = Capsule(0.1, 0.02)
    tilted = Pose([0, 0, 0.3], [S2, S2, 0, 0])  # capsule axis along -y
    assert primitive_distance(cap, tilted, table, Pose()).distance == pytest.approx(0.28)
    box = Box((0.1, 0.1, 0.05))
    assert primitive_distance(box, Pose([0, 0, 0.2]), table, Pose()).distance == pytest.approx(0.15)


# --- robot-level queries ------------------------------------------------------


def test_empty_scene_distance_is_table_height(arm, empty_scene):
    q = np.zeros(3)
    rep = min_robot_env_distance(arm, q, empty_scene)
    assert rep.pair[1] == TABLE_LABEL
    # the lowest non-base body is the link-1 column capsule
    Rs, ps, _, _ = link_frames(arm, q)
    lows = []
    for body in arm.collision_bodies:
        if body.link == 0:
            continue
        c = ps[body.link] + Rs[body.link] @ body.pose.position
        shape = body.shape
        extent = getattr(shape, "half_length", 0.0)
        lows.append(c[2] - extent - shape.radius)
    assert rep.distance == pytest.approx(min(lows), abs=1e-12)


def test_env_distance_matches_pairwise_enumeration(arm, middle_scene, rng):
    for _ in range(30):
        q = rng.uniform(arm.q_min, arm.q_max)
        Rs, ps, _, _ = link_frames(arm, q)
        best = math.inf
        for body in arm.collision_bodies:
            pose = Pose.from_matrix(Rs[body.link] @ body.pose.rotation, ps[body.link] + Rs[body.link] @ body.pose.position)
            for ob in middle_scene.obstacles:
                if ob.label in middle_scene.non_colliding_labels:
                    continue
                best = min(best, primitive_distance(body.shape, pose, ob.shape, ob.pose).distance)
            if body.link != 0:
                best = min(best, primitive_distance(body.shape, pose, middle_scene.table, Pose()).distance)
        assert min_robot_env_distance(arm, q, middle_scene).distance == pytest.approx(best, abs=1e-12)


def test_non_colliding_label_is_excluded(arm):
    q = np.array([0.0, 1.5, 1.2])
    tip = link_frames(arm, q)[3]
    touching = Obstacle(Sphere(0.05), Pose(tip), "yellow")
    plain = Scene((touching,))
    excluded = Scene((touching,), non_colliding_labels={"yellow"})
    assert min_robot_env_distance(arm, q, plain).distance < 0.0
    assert min_robot_env_distance(arm, q, excluded).pair[1] == TABLE_LABEL


def test_self_distance_straight_arm_is_positive(arm):
    assert min_self_distance(arm, np.zeros(3)).distance > 0.1


def test_self_distance_folded_matches_pair(arm):
    q = np.array([0.0, 0.4, 2.55])
    rep = min_self_distance(arm, q)
    i, j = rep.pair
    Rs, ps, _, _ = link_frames(arm, q)
    bodies = arm.collision_bodies

    def placed(k):
        b = bodies[k]
        return Pose.from_matrix(Rs[b.link] @ b.pose.rotation, ps[b.link] + Rs[b.link] @ b.pose.position)

    assert abs(bodies[i].link - bodies[j].link) >= 2
    assert rep.distance == pytest.approx(primitive_distance(bodies[i].shape, placed(i), bodies[j].shape, placed(j)).distance)
    assert rep.distance < min_self_distance(arm, np.zeros(3)).distance


def test_one_link_arm_has_no_self_pairs():
    one = ArmModel((Link(np.array([0, 0, 1.0]), np.zeros(3)),), [-1.0], [1.0], [1.0],
                   (CollisionBody(1, Sphere(0.05)),))
    assert min_self_distance(one, [0.0]).distance == math.inf


def _pair_distance(model, scene, q, pair):
    return next(r.distance for r in proximity_pairs(model, q, scene) if r.pair == pair)


def test_gradients_match_finite_differences(arm, middle_scene, rng):
    checked = 0
    while checked < 200:
        q = rng.uniform(arm.q_min, arm.q_max)
        reports = [r for r in proximity_pairs(arm, q, middle_scene) if r.distance > 1e-4]
        if not reports:
            continue
        rep = reports[rng.integers(len(reports))]
        g = distance_gradient(arm, q, middle_scene, rep)
        fd = central_difference(lambda x: _pair_distance(arm, middle_scene, x, rep.pair), q)
        assert np.max(np.abs(g - fd)) <= 1e-4
        checked += 1


def test_vertical_lift_gradient():
    # one prismatic-like situation: a pitch joint swinging a sphere under an obstacle
    model = ArmModel((Link(np.array([0.0, 1.0, 0.0]), np.zeros(3)),), [-1.0], [1.0], [1.0],
                     (CollisionBody(1, Sphere(0.05), Pose([0.5, 0.0, 0.0])),))
    scene = Scene((Obstacle(Sphere(0.05), Pose([0.5, 0.0, 0.3]), "ob"),), table=None)
    rep = min_robot_env_distance(model, [0.0], scene)
    g = distance_gradient(model, [0.0], scene, rep)
    # rotating about +y moves the sphere along -z at rate 0.5; the normal points down
    assert g[0] == pytest.approx(0.5, abs=1e-12)


def test_base_body_gradient_is_zero(arm):
    model = ArmModel(arm.links, arm.q_min, arm.q_max, arm.qdot_max,
                     arm.collision_bodies + (CollisionBody(0, Sphere(0.05), Pose([0.0, 0.0, 0.05])),))
    scene = Scene((Obstacle(Sphere(0.05), Pose([0.2, 0.0, 0.05]), "near_base"),))
    idx = len(model.collision_bodies) - 1
    rep = next(r for r in proximity_pairs(model, np.zeros(3), scene) if r.pair == (idx, "near_base"))
    assert np.all(distance_gradient(model, np.zeros(3), scene, rep) == 0.0)


def test_degenerate_report_still_has_gradient(arm):
    q = np.array([0.0, 1.5, 1.2])
    Rs, _, _, tip = link_frames(arm, q)
    # obstacle sphere exactly tangent to the tool sphere, straight out along the forearm
    scene = Scene((Obstacle(Sphere(0.02), Pose(tip + Rs[-1][:, 2] * (0.035 + 0.02)), "touch"),), table=None)
    rep = min(proximity_pairs(arm, q, scene, include_self=False), key=lambda r: r.distance)
    assert rep.degenerate
    g = distance_gradient(arm, q, scene, rep)
    assert np.all(np.isfinite(g)) and np.linalg.norm(g) > 0.0


def test_clearance_is_min_of_env_and_self(arm, middle_scene, rng):
    for _ in range(20):
        q = rng.uniform(arm.q_min, arm.q_max)
        expect = min(min_robot_env_distance(arm, q, middle_scene).distance, min_self_distance(arm, q).distance)
        assert clearance(arm, q, middle_scene) == expect


def test_scene_round_trip_and_errors(middle_scene):
    again = load_scene(middle_scene.to_dict())
    assert [o.label for o in again.obstacles] == [o.label for o in middle_scene.obstacles]
    with pytest.raises(SceneLoadError):
        load_scene({"obstacles": []})
    with pytest.raises(SceneLoadError):
        load_scene({"goal_region": {"center": [0, 0, 0], "half_extents": [0, 1, 1]}})
    dup = middle_scene.to_dict()
    dup["obstacles"].append(dup["obstacles"][0])
    with pytest.raises(SceneLoadError):
        load_scene(dup)
