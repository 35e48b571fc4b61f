import math

import numpy as np
import pytest
from scipy import stats
from scipy.spatial.transform import Rotation

from plausigen import shapes
from plausigen.config import DEFAULT_CONFIG
from plausigen.errors import NoCandidates, NotAllowed, TransformFailed
from plausigen.geometry import intersecting_objects, meshes_intersect
from plausigen.perturb import (
    SelectionState,
    TransformRecord,
    candidate_weights,
    commit_transform,
    find_transformation,
    is_transformation_allowed,
    op_cooccurrence_location,
    op_cooccurrence_rotation,
    op_gravity,
    op_intersection,
    op_pose,
    op_size,
    revert_transform,
    select_objects,
)
from plausigen.scene import ImplausibilityType as T
from plausigen.scene import Pose3, SceneObject, SizeCategory, world_aabb

from .conftest import build_scene
from .oracles import reference_weights, voxel_overlap

THIRD = {c: 1 / 3 for c in SizeCategory}


class ScriptedRNG:
    """A Generator whose next few draws per method are fixed in advance."""

    def __init__(self, seed=0, **scripts):
        self._rng = np.random.default_rng(seed)
        self._scripts = {k: list(v) for k, v in scripts.items()}

    def _next(self, name, *args, **kwargs):
        queue = self._scripts.get(name)
        if queue:
            return queue.pop(0)
        return getattr(self._rng, name)(*args, **kwargs)

    def uniform(self, *a, **k):
        return self._next("uniform", *a, **k)

    def random(self, *a, **k):
        return self._next("random", *a, **k)

    def standard_normal(self, *a, **k):
        return self._next("standard_normal", *a, **k)


def min_z(scene, oid):
    return scene.world_vertices(oid)[:, 2].min()


def apply(scene, record):
    out = scene.clone()
    commit_transform(out, record)
    return out


# ------------------------------------------------------------- selection

def test_allowed_membership(rooms):
    cup = SceneObject("cup", "cup", "small", "m", Pose3(), {T.GRAVITY, T.SIZE})
    assert is_transformation_allowed(cup, T.GRAVITY)
    assert not is_transformation_allowed(rooms["dining_room"].get("plate_1"), T.CO_OCCURRENCE_ROTATION)
    bare = SceneObject("x", "x", "small", "m", Pose3())
    assert not any(is_transformation_allowed(bare, t) for t in T)


def test_fresh_state_weights_are_targets(rooms):
    objs, w = candidate_weights(rooms["office"], T.GRAVITY, SelectionState(THIRD))
    assert len(objs) == 13 and all(x == pytest.approx(1 / 3) for x in w)


def test_overrepresented_category_gets_zero(rooms):
    scene = rooms["living_room"]
    state = SelectionState(THIRD, {"small": 10, "medium": 1, "large": 1})
    objs, w = candidate_weights(scene, T.GRAVITY, state)
    for oid, x in zip(objs, w):
        if scene.get(oid).size_category is SizeCategory.SMALL:
            assert x == 0.0
        else:
            assert x > 0
    assert sum(x > 0 for x in w) >= 5


def test_fallback_with_few_candidates():
    box = shapes.box((1, 1, 1))
    scene = build_scene("s", [("a", "x", "small", box, Pose3(), {T.POSE}),
                              ("b", "x", "large", box, Pose3.from_translation([5, 0, 0]), {T.POSE}),
                              ("c", "x", "medium", box, Pose3.from_translation([9, 0, 0]), ())])
    state = SelectionState({"small": 0.5, "medium": 0.2, "large": 0.3}, {"small": 1})
    objs, w = candidate_weights(scene, T.POSE, state, n_c=5)
    assert objs == ["a", "b"] and w == [0.5, 0.3]
    with pytest.raises(NoCandidates):
        candidate_weights(scene, T.GRAVITY, state)


def test_selection_state_validation():
    with pytest.raises(ValueError):
        SelectionState({"small": 0.5, "medium": 0.5, "large": 0.5})
    with pytest.raises(ValueError):
        SelectionState(THIRD, {"small": -1})


def test_select_forced_cases():
    state = SelectionState(THIRD, rng_seed=4)
    assert select_objects(["only"], [0.2], 1, state) == ["only"]
    for seed in range(50):
        assert select_objects(["a", "b", "c"], [1, 0, 0], 1, SelectionState(THIRD, rng_seed=seed)) == ["a"]
    with pytest.raises(ValueError):
        select_objects(["a"], [1.0], 0, state)
    with pytest.raises(NoCandidates):
        select_objects([], [], 1, state)


def test_select_is_seeded():
    state = SelectionState(THIRD, rng_seed=99)
    objs = [f"o{k}" for k in range(8)]
    w = [0.1, 0.5, 0.2, 0.0, 0.3, 0.3, 0.0, 0.9]
    assert select_objects(objs, w, 8, state) == select_objects(objs, w, 8, state)


def test_select_frequencies():
    rng = np.random.default_rng(0)
    state = SelectionState(THIRD)
    n = 100_000
    first = sum(select_objects(["a", "b"], [0.5, 0.5], 1, state, rng)[0] == "a" for _ in range(n))
    assert abs(first / n - 0.5) < 0.01


def test_weights_match_reference_random_states(rooms):
    rng = np.random.default_rng(5)
    scene = rooms["dining_room"]
    for _ in range(200):
        raw = rng.dirichlet([1, 1, 1])
        target = dict(zip(SizeCategory, raw / raw.sum()))
        target[SizeCategory.LARGE] = 1.0 - target[SizeCategory.SMALL] - target[SizeCategory.MEDIUM]
        counts = dict(zip(SizeCategory, rng.integers(0, 6, 3)))
        state = SelectionState(target, counts)
        objs, w = candidate_weights(scene, T.GRAVITY, state)
        cats = [scene.get(o).size_category for o in objs]
        assert w == reference_weights(cats, state.target_dist, state.transformed_counts, 5)


# --------------------------------------------------------------- gravity

def test_gravity_lift(rooms):
    scene = rooms["dining_room"]
    rec = op_gravity(scene, "cup", np.random.default_rng(0))
    maxdim = (world_aabb(scene, "cup")[1] - world_aabb(scene, "cup")[0]).max()
    dz = rec.pose_after.translation[2] - rec.pose_before.translation[2]
    assert maxdim <= dz <= 2 * maxdim
    assert dz == pytest.approx(rec.draw_params["elevation_factor"] * maxdim)
    assert min_z(apply(scene, rec), "cup") > min_z(scene, "cup")


def test_gravity_boundary_and_co_move(rooms):
    scene = rooms["dining_room"]
    rec = op_gravity(scene, "plate_1", ScriptedRNG(uniform=[1.0]))
    maxdim = (world_aabb(scene, "plate_1")[1] - world_aabb(scene, "plate_1")[0]).max()
    assert rec.pose_after.translation[2] - rec.pose_before.translation[2] == pytest.approx(maxdim, abs=1e-12)
    assert set(rec.co_moved) == {"fork"}


def test_gravity_factor_is_uniform(rooms):
    scene = rooms["office"]
    rng = np.random.default_rng(11)
    u = [op_gravity(scene, "mug", rng).draw_params["elevation_factor"] for _ in range(1000)]
    assert stats.kstest(u, stats.uniform(loc=1, scale=1).cdf).pvalue > 0.01


# ---------------------------------------------------------- intersection

def test_intersection_on_tabletop():
    slab = shapes.box((60.0, 60.0, 4.0))
    cube = shapes.box((10.0, 10.0, 10.0))
    scene = build_scene("s", [("table", "table", "large", slab, Pose3()),
                              ("cube", "box", "small", cube, Pose3.from_translation([0, 0, 4.0005]))])
    rng = np.random.default_rng(2)
    for _ in range(20):
        rec = op_intersection(scene, "cube", rng)
        dz = rec.pose_after.translation[2] - rec.pose_before.translation[2]
        assert -20 / 3 - 1e-9 <= dz <= -10 / 3 + 1e-9
        assert abs(rec.draw_params["shift_x"]) <= 5 and abs(rec.draw_params["shift_y"]) <= 5
        after = apply(scene, rec)
        assert meshes_intersect(after, "cube", "table")
        assert voxel_overlap(after.world_triangles("cube"), after.world_triangles("table"))


def test_intersection_alone_in_the_air():
    scene = build_scene("s", [("cube", "box", "small", shapes.box((1, 1, 1)), Pose3.from_translation([0, 0, 50]))])
    with pytest.raises(TransformFailed):
        op_intersection(scene, "cube", np.random.default_rng(0))


# ------------------------------------------------------------------ pose

def test_pose_keeps_lowest_point(rooms):
    rng = np.random.default_rng(8)
    for name, scene in rooms.items():
        for oid in [o.id for o in scene.objects if is_transformation_allowed(o, T.POSE)][:6]:
            rec = op_pose(scene, oid, rng)
            after = apply(scene, rec)
            assert abs(min_z(after, oid) - min_z(scene, oid)) <= 1e-4
            assert rec.co_moved == {}


def test_pose_identity_draw_resampled(rooms):
    scene = rooms["dining_room"]
    rec = op_pose(scene, "cup", ScriptedRNG(3, uniform=[np.zeros(3)]))
    assert rec.pose_after != rec.pose_before
    assert not (rec.draw_params["yaw_deg"] == 0 and rec.draw_params["pitch_deg"] == 0)


def test_upside_down_chair(rooms):
    scene = rooms["dining_room"]
    rec = op_pose(scene, "chair_1", ScriptedRNG(uniform=[np.array([0.0, 0.0, 180.0])]))
    after = apply(scene, rec)
    v0, v1 = scene.world_vertices("chair_1"), after.world_vertices("chair_1")
    assert abs(v1[:, 2].min() - v0[:, 2].min()) <= 1e-4
    # the flip keeps the bounding box, so compare where the mass sits
    assert abs(v1[:, 2].mean() - v0[:, 2].mean()) > 1.0


# ------------------------------------------------------------------ size

def test_size_up_lands_on_support(rooms):
    scene = rooms["dining_room"]
    rec = op_size(scene, "cup", ScriptedRNG(random=[0.0], uniform=[2.5]))
    assert rec.draw_params["scale"] == 2.5 and rec.draw_params["scale_up"] == 1.0
    after = apply(scene, rec)
    table_top = scene.world_vertices("table")[:, 2].max()
    assert 0 < min_z(after, "cup") - table_top <= DEFAULT_CONFIG.contact_tolerance
    assert not intersecting_objects(after, ["cup"])


def test_size_extents_scale_linearly(rooms):
    scene = rooms["office"]
    rec = op_size(scene, "mug", ScriptedRNG(random=[0.99], uniform=[0.3]))
    lo0, hi0 = world_aabb(scene, "mug")
    lo1, hi1 = world_aabb(apply(scene, rec), "mug")
    assert np.allclose(hi1 - lo1, 0.3 * (hi0 - lo0), rtol=1e-12, atol=1e-9)


def test_size_never_in_middle(rooms):
    rng = np.random.default_rng(21)
    scene = rooms["bedroom"]
    for _ in range(200):
        s = op_size(scene, "book", rng).draw_params["scale"]
        assert 0.3 <= s <= 0.5 or 2.0 <= s <= 3.0


# -------------------------------------------------- co-occurrence location

def test_coloc_plate_leaves_table(rooms):
    scene = rooms["dining_room"]
    rng = np.random.default_rng(4)
    for _ in range(10):
        rec = op_cooccurrence_location(scene, "plate_2", rng)
        assert rec.draw_params["radius"] <= 60.0
        after = apply(scene, rec)
        assert abs(rec.pose_after.translation[2] - rec.pose_before.translation[2]) > DEFAULT_CONFIG.epsilon_height
        assert not intersecting_objects(after, ["plate_2"])
        for other in after.ids:
            if other != "plate_2":
                assert not voxel_overlap(after.world_triangles("plate_2"), after.world_triangles(other))


def test_coloc_same_tabletop_rejected(rooms):
    scene = rooms["dining_room"]
    # first draw: 3 units sideways along the table; second: off its edge, between two chairs
    rng = ScriptedRNG(1, standard_normal=[np.array([1.0, 0.0, 0.0]), np.array([0.0, -1.0, 0.0])],
                      random=[(3 / 60) ** 3, (59.9 / 60) ** 3])
    rec = op_cooccurrence_location(scene, "cup", rng)
    assert rec.draw_params["dx"] == pytest.approx(0.0)
    assert rec.draw_params["dy"] == pytest.approx(-59.9)
    assert min_z(apply(scene, rec), "cup") < 1.0


def test_coloc_floor_object_exhausts_budget(rooms):
    with pytest.raises(TransformFailed):
        op_cooccurrence_location(rooms["dining_room"], "plant", np.random.default_rng(0))


# -------------------------------------------------- co-occurrence rotation

def test_corot_monitor(rooms):
    scene = rooms["office"]
    rng = np.random.default_rng(6)
    for _ in range(5):
        rec = op_cooccurrence_rotation(scene, "monitor", rng)
        assert 160 <= rec.draw_params["angle_deg"] <= 200
        assert not intersecting_objects(apply(scene, rec), ["monitor", "keyboard", "mouse", "mug"][:1])


def test_corot_half_turn(rooms):
    scene = rooms["office"]
    rec = op_cooccurrence_rotation(scene, "keyboard", ScriptedRNG(uniform=[180.0, 0.0, 0.0]))
    yaw0 = Rotation.from_matrix(rec.pose_before.rotation).as_euler("ZYX", degrees=True)[0]
    yaw1 = Rotation.from_matrix(rec.pose_after.rotation).as_euler("ZYX", degrees=True)[0]
    assert math.isclose((yaw1 - yaw0) % 360.0, 180.0, abs_tol=1e-9)


def test_corot_chair_walks_clear_of_table(rooms):
    scene = rooms["dining_room"]
    rec = op_cooccurrence_rotation(scene, "chair_1", ScriptedRNG(uniform=[180.0, 0.0, 22.0]))
    assert rec.draw_params["walk"] > 0
    after = apply(scene, rec)
    assert not meshes_intersect(after, "chair_1", "table")
    assert not voxel_overlap(after.world_triangles("chair_1"), after.world_triangles("table"))


# -------------------------------------------------------------- dispatch

def test_dispatch_and_guard(rooms):
    scene = rooms["living_room"]
    rng = np.random.default_rng(0)
    assert find_transformation(scene, T.GRAVITY, "mug", rng).type is T.GRAVITY
    with pytest.raises(NotAllowed):
        find_transformation(scene, T.CO_OCCURRENCE_ROTATION, "mug", rng)


def test_each_type_in_range_on_fixtures(rooms):
    picks = {T.GRAVITY: ("office", "book_1"), T.INTERSECTION: ("office", "keyboard"),
             T.POSE: ("bedroom", "chair"), T.SIZE: ("living_room", "cushion_1"),
             T.CO_OCCURRENCE_LOCATION: ("dining_room", "bowl"),
             T.CO_OCCURRENCE_ROTATION: ("living_room", "armchair")}
    for t, (room_name, oid) in picks.items():
        rec = find_transformation(rooms[room_name], t, oid, np.random.default_rng(1))
        p = rec.draw_params
        if t is T.GRAVITY:
            assert 1 <= p["elevation_factor"] <= 2
        elif t is T.INTERSECTION:
            assert 1 / 3 <= p["depth_fraction"] <= 2 / 3
        elif t is T.SIZE:
            assert 0.3 <= p["scale"] <= 0.5 or 2 <= p["scale"] <= 3
        elif t is T.CO_OCCURRENCE_LOCATION:
            assert p["radius"] <= 60
        elif t is T.CO_OCCURRENCE_ROTATION:
            assert 160 <= p["angle_deg"] <= 200
        else:
            assert all(0 <= p[k] < 360 for k in ("yaw_deg", "pitch_deg", "roll_deg"))


def test_records_are_deterministic(rooms):
    scene = rooms["dining_room"]
    for t in (T.GRAVITY, T.INTERSECTION, T.POSE, T.SIZE, T.CO_OCCURRENCE_LOCATION):
        a = find_transformation(scene, t, "bowl", np.random.default_rng(17))
        b = find_transformation(scene, t, "bowl", np.random.default_rng(17))
        assert a.to_json() == b.to_json()


def test_operations_leave_scene_untouched(rooms):
    scene = rooms["office"]
    before = scene.poses()
    edges = scene.dependency_tree.edge_list()
    for t in T:
        if is_transformation_allowed(scene.get("desk"), t):
            find_transformation(scene, t, "desk", np.random.default_rng(0))
    assert all(scene.get(k).pose is v for k, v in before.items())
    assert scene.dependency_tree.edge_list() == edges


def test_record_json_commit_and_revert(rooms):
    scene = rooms["dining_room"].clone()
    rec = op_gravity(scene, "plate_1", np.random.default_rng(3))
    again = TransformRecord.from_json(rec.to_json())
    assert again.pose_after == rec.pose_after and set(again.co_moved) == {"fork"}
    before = scene.poses()
    commit_transform(scene, rec)
    assert scene.dependency_tree.supporter_of("plate_1") is None
    assert scene.dependency_tree.supporter_of("fork") == "plate_1"
    revert_transform(scene, rec)
    assert all(scene.get(k).pose == v for k, v in before.items())
    with pytest.raises(ValueError):
        TransformRecord(T.GRAVITY, "x", Pose3(), Pose3(), {})
