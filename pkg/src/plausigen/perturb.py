"""The six implausibility operations and size-balanced object selection.

Operations never touch the scene they are given. They work on a scratch
clone and return a :class:`TransformRecord`; :func:`commit_transform`
applies a record once a camera has validated it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from .config import DEFAULT_CONFIG, Config
from .errors import NoCandidates, NotAllowed, TransformFailed
from .geometry import crossing_points, drop_to_support, intersecting_objects, object_bounds
from .scene import (
    ImplausibilityType,
    Pose3,
    Scene,
    SceneObject,
    SizeCategory,
    apply_pose_delta,
    dependents_of,
    translate,
    world_aabb,
)

logger = logging.getLogger(__name__)

__all__ = [
    "ImplausibilityType", "TransformRecord", "SelectionState", "is_transformation_allowed",
    "candidate_weights", "select_objects", "op_gravity", "op_intersection", "op_pose", "op_size",
    "op_cooccurrence_location", "op_cooccurrence_rotation", "find_transformation",
    "commit_transform", "revert_transform",
]


@dataclass
class TransformRecord:
    type: ImplausibilityType
    object_id: str
    pose_before: Pose3
    pose_after: Pose3
    draw_params: Dict[str, float]
    # supported objects carried along: id -> (before, after)
    co_moved: Dict[str, Tuple[Pose3, Pose3]] = field(default_factory=dict)

    def __post_init__(self):
        if self.pose_before == self.pose_after:
            raise ValueError("a transform must change the object's pose")

    def to_json(self) -> dict:
        return {"type": self.type.value, "object_id": self.object_id,
                "pose_before": self.pose_before.to_json(), "pose_after": self.pose_after.to_json(),
                "draw_params": {k: float(v) for k, v in sorted(self.draw_params.items())},
                "co_moved": {k: {"pose_before": b.to_json(), "pose_after": a.to_json()}
                             for k, (b, a) in sorted(self.co_moved.items())}}

    @classmethod
    def from_json(cls, data: dict) -> "TransformRecord":
        return cls(ImplausibilityType(data["type"]), data["object_id"],
                   Pose3.from_json(data["pose_before"]), Pose3.from_json(data["pose_after"]),
                   dict(data["draw_params"]),
                   {k: (Pose3.from_json(v["pose_before"]), Pose3.from_json(v["pose_after"]))
                    for k, v in data.get("co_moved", {}).items()})


def commit_transform(scene: Scene, record: TransformRecord, detach: bool = True) -> None:
    """Apply a record's final poses to ``scene``.

    With ``detach`` the object leaves its supporter's subtree: it no longer
    rests where the tree says, so later moves of that supporter must not
    carry it.
    """
    scene.set_pose(record.object_id, record.pose_after)
    for oid, (_, after) in record.co_moved.items():
        scene.set_pose(oid, after)
    if detach:
        scene.dependency_tree.remove(record.object_id)


def revert_transform(scene: Scene, record: TransformRecord) -> None:
    """Restore the poses a record changed (support edges are left alone)."""
    for oid, (before, _) in record.co_moved.items():
        scene.set_pose(oid, before)
    scene.set_pose(record.object_id, record.pose_before)


# ------------------------------------------------------------------ selection

def is_transformation_allowed(obj: SceneObject, t: ImplausibilityType) -> bool:
    return ImplausibilityType(t) in obj.allowed_transforms


@dataclass
class SelectionState:
    target_dist: Dict[SizeCategory, float]
    transformed_counts: Dict[SizeCategory, int] = field(default_factory=dict)
    rng_seed: int = 0

    def __post_init__(self):
        self.target_dist = {SizeCategory(k): float(v) for k, v in self.target_dist.items()}
        if set(self.target_dist) != set(SizeCategory):
            raise ValueError("target_dist must cover every size category")
        if any(not 0.0 <= v <= 1.0 for v in self.target_dist.values()):
            raise ValueError("target fractions must lie in [0, 1]")
        if abs(sum(self.target_dist.values()) - 1.0) > 1e-9:
            raise ValueError("target fractions must sum to 1")
        counts = {c: 0 for c in SizeCategory}
        counts.update({SizeCategory(k): int(v) for k, v in self.transformed_counts.items()})
        if any(v < 0 for v in counts.values()):
            raise ValueError("transformed counts must be nonnegative")
        self.transformed_counts = counts

    @classmethod
    def from_config(cls, config: Config, seed: int = 0) -> "SelectionState":
        return cls(dict(config.target_distribution), {}, seed)

    @property
    def total(self) -> int:
        return sum(self.transformed_counts.values())

    def current_share(self, category: SizeCategory) -> float:
        total = self.total
        return self.transformed_counts[category] / total if total else 0.0

    def note_transformed(self, category: SizeCategory, amount: int = 1) -> None:
        self.transformed_counts[SizeCategory(category)] += amount


def candidate_weights(scene: Scene, t: ImplausibilityType, state: SelectionState,
                      n_c: int = 5) -> Tuple[List[str], List[float]]:
    """Objects eligible for ``t`` and their selection weights.

    An object's weight is how far its size category lags the target share.
    When fewer than ``n_c`` weights are positive, every object simply gets
    its category's target share.
    """
    objects, weights = [], []
    for obj in scene.objects:
        if is_transformation_allowed(obj, t):
            objects.append(obj.id)
            cat = obj.size_category
            weights.append(max(0.0, state.target_dist[cat] - state.current_share(cat)))
    if not objects:
        raise NoCandidates(f"no object in {scene.name!r} allows {ImplausibilityType(t).value}")
    if sum(w > 0 for w in weights) < n_c:
        weights = [state.target_dist[scene.get(o).size_category] for o in objects]
    return objects, weights


def select_objects(objects: Sequence[str], weights: Sequence[float], count: int,
                   state: SelectionState, rng: Optional[np.random.Generator] = None) -> List[str]:
    """Weighted sampling without replacement (Efraimidis–Spirakis keys).

    Zero-weight objects come only after every positive-weight one, in random
    order among themselves.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    if not objects:
        raise NoCandidates("nothing to select from")
    w = np.asarray(weights, dtype=np.float64)
    if len(w) != len(objects) or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite, nonnegative and match the objects")
    rng = np.random.default_rng(state.rng_seed) if rng is None else rng
    u = rng.random(len(w))
    positive = w > 0
    keys = np.full(len(w), -np.inf)
    with np.errstate(divide="ignore"):
        keys[positive] = np.log(u[positive]) / w[positive]
    # positives by descending key, then zeros by descending u
    order = sorted(range(len(w)), key=lambda i: (not positive[i], -keys[i] if positive[i] else -u[i]))
    return [objects[i] for i in order[:count]]


# ----------------------------------------------------------------- operations

def _extent(scene: Scene, oid: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    lo, hi = world_aabb(scene, oid)
    return hi - lo, lo, hi


def _moving(scene: Scene, oid: str, co_move: bool) -> List[str]:
    return [oid] + (dependents_of(scene, oid) if co_move else [])


def _record(t, scene: Scene, scratch: Scene, oid: str, moving: Sequence[str], params) -> TransformRecord:
    co = {}
    for mid in moving:
        if mid != oid and scene.get(mid).pose != scratch.get(mid).pose:
            co[mid] = (scene.get(mid).pose, scratch.get(mid).pose)
    return TransformRecord(ImplausibilityType(t), oid, scene.get(oid).pose, scratch.get(oid).pose,
                           {k: float(v) for k, v in params.items()}, co)


def op_gravity(scene: Scene, object_id: str, rng: np.random.Generator,
               config: Config = DEFAULT_CONFIG) -> TransformRecord:
    """Lift the object (and what rests on it) by 1-2x its largest dimension."""
    dims, _, _ = _extent(scene, object_id)
    maxdim = float(dims.max())
    u = rng.uniform(1.0, 2.0)
    scratch = scene.clone()
    moving = _moving(scene, object_id, True)
    apply_pose_delta(scratch, object_id, Pose3.from_translation([0.0, 0.0, u * maxdim]), True)
    return _record(ImplausibilityType.GRAVITY, scene, scratch, object_id, moving,
                   {"elevation_factor": u, "max_dim": maxdim, "dz": u * maxdim})


def op_intersection(scene: Scene, object_id: str, rng: np.random.Generator,
                    config: Config = DEFAULT_CONFIG) -> TransformRecord:
    """Jitter in XY by up to half the object's size and sink it by 1/3-2/3
    of its height, until it penetrates some other object."""
    dims, _, _ = _extent(scene, object_id)
    moving = _moving(scene, object_id, True)
    for _ in range(config.retry_budget):
        dx = rng.uniform(-dims[0] / 2, dims[0] / 2)
        dy = rng.uniform(-dims[1] / 2, dims[1] / 2)
        v = rng.uniform(1 / 3, 2 / 3)
        scratch = scene.clone()
        apply_pose_delta(scratch, object_id, Pose3.from_translation([dx, dy, -v * dims[2]]), True)
        hits = intersecting_objects(scratch, moving)
        if hits:
            return _record(ImplausibilityType.INTERSECTION, scene, scratch, object_id, moving,
                           {"shift_x": dx, "shift_y": dy, "depth_fraction": v, "dz": -v * dims[2],
                            "dim_x": dims[0], "dim_y": dims[1], "dim_z": dims[2]})
    raise TransformFailed(f"{object_id}: no intersecting placement in {config.retry_budget} draws")


def op_pose(scene: Scene, object_id: str, rng: np.random.Generator,
            config: Config = DEFAULT_CONFIG) -> TransformRecord:
    """Random Z-Y-X Euler rotation about the centroid, then re-seat the
    lowest point at its old height. Supported objects stay put."""
    _, lo, hi = _extent(scene, object_id)
    centroid = (lo + hi) / 2
    for _ in range(config.retry_budget):
        yaw, pitch, roll = (float(a) for a in rng.uniform(0.0, 360.0, size=3))
        rot = Rotation.from_euler("ZYX", [yaw, pitch, roll], degrees=True)
        if rot.magnitude() < 1e-6:
            continue
        scratch = scene.clone()
        apply_pose_delta(scratch, object_id, Pose3(rotation=rot.as_matrix()), False, pivot=centroid)
        new_lo, _ = world_aabb(scratch, object_id)
        translate(scratch, [object_id], [0.0, 0.0, lo[2] - new_lo[2]])
        if scratch.get(object_id).pose.allclose(scene.get(object_id).pose, atol=1e-9):
            continue
        return _record(ImplausibilityType.POSE, scene, scratch, object_id, [object_id],
                       {"yaw_deg": yaw, "pitch_deg": pitch, "roll_deg": roll})
    raise TransformFailed(f"{object_id}: every rotation draw was the identity")


def op_size(scene: Scene, object_id: str, rng: np.random.Generator,
            config: Config = DEFAULT_CONFIG) -> TransformRecord:
    """Scale by 0.3-0.5 or 2-3 about the centroid, lift by half the new
    height, then drop onto whatever is below."""
    _, lo, hi = _extent(scene, object_id)
    centroid = (lo + hi) / 2
    moving = _moving(scene, object_id, True)
    children = scene.dependency_tree.children(object_id)
    for _ in range(config.retry_budget):
        up = bool(rng.random() < config.size_up_probability)
        s = rng.uniform(2.0, 3.0) if up else rng.uniform(0.3, 0.5)
        scratch = scene.clone()
        apply_pose_delta(scratch, object_id, Pose3(scale=[s, s, s]), False, pivot=centroid)
        # supported subtrees ride on the rescaled surface without rescaling
        for child in children:
            clo, chi = world_aabb(scene, child)
            anchor = np.array([(clo[0] + chi[0]) / 2, (clo[1] + chi[1]) / 2, clo[2]])
            offset = centroid + s * (anchor - centroid) - anchor
            translate(scratch, [child] + dependents_of(scene, child), offset)
        new_lo, new_hi = world_aabb(scratch, object_id)
        lift = (new_hi[2] - new_lo[2]) / 2
        translate(scratch, moving, [0.0, 0.0, lift])
        drop = drop_to_support(scratch, object_id, config, exclude=moving[1:])
        translate(scratch, moving, [0.0, 0.0, drop])
        if intersecting_objects(scratch, [object_id], [i for i in scene.ids if i not in moving]):
            continue
        return _record(ImplausibilityType.SIZE, scene, scratch, object_id, moving,
                       {"scale": s, "scale_up": 1.0 if up else 0.0, "lift": lift, "drop": drop})
    raise TransformFailed(f"{object_id}: every rescale left the object intersecting")


def _ball_sample(rng: np.random.Generator, radius: float) -> np.ndarray:
    direction = rng.standard_normal(3)
    direction /= np.linalg.norm(direction)
    return direction * radius * rng.random() ** (1 / 3)


def op_cooccurrence_location(scene: Scene, object_id: str, rng: np.random.Generator,
                             config: Config = DEFAULT_CONFIG) -> TransformRecord:
    """Move to a random point within ``co_loc_radius`` and drop; retry while
    the object lands at (nearly) its old height or overlaps something."""
    moving = _moving(scene, object_id, True)
    statics = [i for i in scene.ids if i not in moving]
    z_before = float(scene.get(object_id).pose.translation[2])
    for _ in range(config.retry_budget):
        disp = _ball_sample(rng, config.co_loc_radius)
        scratch = scene.clone()
        translate(scratch, moving, disp)
        if world_aabb(scratch, object_id)[0][2] < 0.0:
            continue
        if intersecting_objects(scratch, [object_id], statics):
            continue
        drop = drop_to_support(scratch, object_id, config, exclude=moving[1:])
        translate(scratch, moving, [0.0, 0.0, drop])
        z_after = float(scratch.get(object_id).pose.translation[2])
        if abs(z_after - z_before) <= config.epsilon_height:
            continue
        if intersecting_objects(scratch, moving, statics):
            continue
        return _record(ImplausibilityType.CO_OCCURRENCE_LOCATION, scene, scratch, object_id, moving,
                       {"dx": disp[0], "dy": disp[1], "dz": disp[2],
                        "radius": float(np.linalg.norm(disp)), "drop": drop, "height_change": z_after - z_before})
    raise TransformFailed(f"{object_id}: no relocation accepted in {config.retry_budget} draws")


def _separation_direction(scratch: Scene, moving: Sequence[str], blockers: Sequence[str],
                          centroid: np.ndarray) -> np.ndarray:
    pts = [crossing_points(scratch.world_triangles(m), scratch.world_triangles(b))
           for m in moving for b in blockers]
    pts = np.concatenate(pts) if pts else np.zeros((0, 3))
    if len(pts):
        contact = pts.mean(axis=0)
    else:
        contact = np.mean([sum(object_bounds(scratch, b)) / 2 for b in blockers], axis=0)
    d = (centroid - contact)[:2]
    if np.linalg.norm(d) < 1e-9:
        d = (centroid - np.mean([sum(object_bounds(scratch, b)) / 2 for b in blockers], axis=0))[:2]
    if np.linalg.norm(d) < 1e-9:
        d = np.array([1.0, 0.0])
    d = d / np.linalg.norm(d)
    return np.array([d[0], d[1], 0.0])


def _walk_clear(scratch: Scene, moving: Sequence[str], statics: Sequence[str], direction: np.ndarray,
                step: float, budget: float) -> Optional[int]:
    """First step count at which the moving set no longer intersects.

    Steps are tested in strides of 100, then the last stride is scanned
    backwards to the step just after the final intersecting one.
    """
    base = {m: scratch.get(m).pose for m in moving}

    def clear_at(k: int) -> bool:
        offset = direction * (k * step)
        for m, p in base.items():
            scratch.set_pose(m, Pose3(p.translation + offset, p.rotation, p.scale))
        return not intersecting_objects(scratch, moving, statics)

    limit = int(math.floor(budget / step))
    stride = 100
    found = None
    prev = 0
    k = min(stride, limit)
    while k <= limit and k > prev:
        if clear_at(k):
            found = k
            break
        prev, k = k, min(k + stride, limit)
    if found is None:
        for m, p in base.items():
            scratch.set_pose(m, p)
        return None
    first = found
    for j in range(found - 1, prev, -1):
        if not clear_at(j):
            break
        first = j
    clear_at(first)
    return first


def op_cooccurrence_rotation(scene: Scene, object_id: str, rng: np.random.Generator,
                             config: Config = DEFAULT_CONFIG) -> TransformRecord:
    """Turn 160-200 degrees about Z through the centroid with an XY jitter
    of up to half the object's size, then slide clear of any overlap."""
    dims, lo, hi = _extent(scene, object_id)
    centroid = (lo + hi) / 2
    moving = _moving(scene, object_id, True)
    statics = [i for i in scene.ids if i not in moving]
    budget = config.separation_budget_factor * float(dims.max())
    for _ in range(config.retry_budget):
        theta = rng.uniform(160.0, 200.0)
        dx = rng.uniform(-dims[0] / 2, dims[0] / 2)
        dy = rng.uniform(-dims[1] / 2, dims[1] / 2)
        scratch = scene.clone()
        rot = Rotation.from_euler("z", theta, degrees=True).as_matrix()
        apply_pose_delta(scratch, object_id, Pose3([dx, dy, 0.0], rot), True, pivot=centroid)
        walk = 0.0
        blockers = intersecting_objects(scratch, moving, statics)
        if blockers:
            new_centroid = sum(world_aabb(scratch, object_id)) / 2
            direction = _separation_direction(scratch, moving, blockers, new_centroid)
            steps = _walk_clear(scratch, moving, statics, direction, config.separation_step, budget)
            if steps is None:
                continue
            walk = steps * config.separation_step
        return _record(ImplausibilityType.CO_OCCURRENCE_ROTATION, scene, scratch, object_id, moving,
                       {"angle_deg": theta, "shift_x": dx, "shift_y": dy, "walk": walk,
                        "dim_x": dims[0], "dim_y": dims[1]})
    raise TransformFailed(f"{object_id}: could not separate the rotated object")


OPERATIONS: Dict[ImplausibilityType, Callable[..., TransformRecord]] = {
    ImplausibilityType.GRAVITY: op_gravity,
    ImplausibilityType.INTERSECTION: op_intersection,
    ImplausibilityType.POSE: op_pose,
    ImplausibilityType.SIZE: op_size,
    ImplausibilityType.CO_OCCURRENCE_LOCATION: op_cooccurrence_location,
    ImplausibilityType.CO_OCCURRENCE_ROTATION: op_cooccurrence_rotation,
}


def find_transformation(scene: Scene, t: ImplausibilityType, object_id: str, rng: np.random.Generator,
                        config: Config = DEFAULT_CONFIG) -> TransformRecord:
    t = ImplausibilityType(t)
    if not is_transformation_allowed(scene.get(object_id), t):
        raise NotAllowed(f"{object_id} does not allow {t.value}")
    return OPERATIONS[t](scene, object_id, rng, config)
