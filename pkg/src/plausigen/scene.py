"""Scene graph: meshes, object poses, size categories and the support tree."""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

import jsonschema
import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DegenerateGeometry, MissingMesh, SchemaError, UnknownObject
from .meshio import read_obj, write_obj

logger = logging.getLogger(__name__)

ROTATION_TOL = 1e-6


class SizeCategory(str, Enum):
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"


class ImplausibilityType(str, Enum):
    GRAVITY = "gravity"
    INTERSECTION = "intersection"
    POSE = "pose"
    SIZE = "size"
    CO_OCCURRENCE_LOCATION = "co_occurrence_location"
    CO_OCCURRENCE_ROTATION = "co_occurrence_rotation"

    @classmethod
    def parse(cls, text: str) -> "ImplausibilityType":
        key = text.strip().lower().replace("-", "_")
        aliases = {"co_loc": "co_occurrence_location", "co_rot": "co_occurrence_rotation",
                   "cooccurrence_location": "co_occurrence_location",
                   "cooccurrence_rotation": "co_occurrence_rotation"}
        return cls(aliases.get(key, key))


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3 or t.ndim != 2 or t.shape[1] != 3:
            raise DegenerateGeometry("mesh arrays must be (n, 3)")
        if len(t) == 0:
            raise DegenerateGeometry("mesh has no triangles")
        if t.min() < 0 or t.max() >= len(v):
            raise DegenerateGeometry("triangle index out of range")
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if self.normals is not None:
            n = np.ascontiguousarray(self.normals, dtype=np.float64)
            n.setflags(write=False)
            object.__setattr__(self, "normals", n)

    @classmethod
    def cleaned(cls, vertices, triangles, normals=None, name: str = "mesh") -> "Mesh":
        """Build a mesh, dropping zero-area triangles with a warning."""
        v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        if len(t):
            p = v[t]
            area2 = np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)
            keep = area2 > 0.0
            if not keep.all():
                logger.warning("%s: dropped %d degenerate triangle(s)", name, int((~keep).sum()))
                t = t[keep]
        if len(t) == 0:
            raise DegenerateGeometry(f"{name}: no triangles left after cleanup")
        return cls(v, t, normals)

    @property
    def triangle_vertices(self) -> np.ndarray:
        return self.vertices[self.triangles]


@dataclass(frozen=True, eq=False)
class Pose3:
    """Placement of an object: ``world = rotation @ (scale * local) + translation``."""

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    scale: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        s = np.array(self.scale, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)) or not np.all(np.isfinite(r)) or not np.all(np.isfinite(s)):
            raise ValueError("pose components must be finite")
        if np.abs(r @ r.T - np.eye(3)).max() > ROTATION_TOL or abs(np.linalg.det(r) - 1.0) > ROTATION_TOL:
            raise ValueError("rotation must be a proper orthonormal matrix")
        if np.any(s <= 0):
            raise ValueError("scale components must be positive")
        for a in (t, r, s):
            a.setflags(write=False)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "scale", s)

    @classmethod
    def identity(cls) -> "Pose3":
        return cls()

    @classmethod
    def from_translation(cls, xyz) -> "Pose3":
        return cls(translation=xyz)

    def is_identity(self) -> bool:
        return (not self.translation.any() and np.array_equal(self.rotation, np.eye(3))
                and np.array_equal(self.scale, np.ones(3)))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation * self.scale[None, :]
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return (points * self.scale) @ self.rotation.T + self.translation

    def __eq__(self, other):
        if not isinstance(other, Pose3):
            return NotImplemented
        return (np.array_equal(self.translation, other.translation)
                and np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.scale, other.scale))

    __hash__ = None

    def allclose(self, other: "Pose3", atol: float = 1e-9) -> bool:
        return (np.allclose(self.translation, other.translation, rtol=0, atol=atol)
                and np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
                and np.allclose(self.scale, other.scale, rtol=0, atol=atol))

    def to_json(self) -> dict:
        return {"translation": self.translation.tolist(),
                "rotation_matrix": self.rotation.tolist(),
                "scale": self.scale.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "Pose3":
        if "rotation_matrix" in data:
            rot = np.asarray(data["rotation_matrix"], dtype=np.float64)
        elif "rotation" in data:
            w, x, y, z = data["rotation"]
            if abs(np.sqrt(w * w + x * x + y * y + z * z) - 1.0) > 1e-6:
                raise ValueError("rotation quaternion must be unit length")
            rot = Rotation.from_quat([x, y, z, w]).as_matrix()
        else:
            rot = np.eye(3)
        return cls(data["translation"], rot, data.get("scale", [1.0, 1.0, 1.0]))


@dataclass
class SceneObject:
    id: str
    class_label: str
    size_category: SizeCategory
    mesh_ref: str
    pose: Pose3
    allowed_transforms: FrozenSet[ImplausibilityType] = frozenset()
    structural: bool = False

    def __post_init__(self):
        if not self.id or not self.class_label:
            raise SchemaError("object id and class_label must be non-empty")
        self.size_category = SizeCategory(self.size_category)
        self.allowed_transforms = frozenset(ImplausibilityType(t) for t in self.allowed_transforms)


class DependencyTree:
    """Which object rests on which. Each object has at most one supporter."""

    def __init__(self, edges: Iterable[Tuple[str, str]] = ()):
        self._parent: Dict[str, str] = {}
        self._children: Dict[str, List[str]] = {}
        for supporter, supported in edges:
            self.add(supporter, supported)

    def add(self, supporter: str, supported: str) -> None:
        if supporter == supported:
            raise SchemaError(f"object {supported!r} cannot support itself")
        if supported in self._parent:
            raise SchemaError(f"object {supported!r} has more than one supporter")
        node = supporter
        while node is not None:
            if node == supported:
                raise SchemaError(f"support cycle through {supported!r}")
            node = self._parent.get(node)
        self._parent[supported] = supporter
        kids = self._children.setdefault(supporter, [])
        kids.append(supported)
        kids.sort()

    def remove(self, supported: str) -> Optional[str]:
        """Detach ``supported`` from its supporter; returns the old supporter."""
        supporter = self._parent.pop(supported, None)
        if supporter is not None:
            kids = self._children[supporter]
            kids.remove(supported)
            if not kids:
                del self._children[supporter]
        return supporter

    def supporter_of(self, object_id: str) -> Optional[str]:
        return self._parent.get(object_id)

    def children(self, object_id: str) -> List[str]:
        return list(self._children.get(object_id, ()))

    @property
    def edges(self) -> Dict[str, List[str]]:
        return {k: list(v) for k, v in sorted(self._children.items())}

    def edge_list(self) -> List[Tuple[str, str]]:
        return [(s, c) for s, kids in sorted(self._children.items()) for c in kids]

    def ids(self) -> set:
        return set(self._parent) | set(self._children)

    def __len__(self):
        return len(self._parent)


class Scene:
    """A mutable scene graph; poses change only through :meth:`set_pose`."""

    def __init__(self, name: str, objects: List[SceneObject], meshes: Dict[str, Mesh],
                 dependency_tree: Optional[DependencyTree] = None, units: str = "cm"):
        if not objects:
            raise SchemaError("scene must contain at least one object")
        self.name = name
        self.units = units
        self.objects = list(objects)
        self.meshes = dict(meshes)
        self.dependency_tree = dependency_tree or DependencyTree()
        self._by_id: Dict[str, SceneObject] = {}
        for obj in self.objects:
            if obj.id in self._by_id:
                raise SchemaError(f"duplicate object id {obj.id!r}")
            if obj.mesh_ref not in self.meshes:
                raise MissingMesh(f"object {obj.id!r} references unknown mesh {obj.mesh_ref!r}")
            self._by_id[obj.id] = obj
        unknown = self.dependency_tree.ids() - set(self._by_id)
        if unknown:
            raise SchemaError(f"dependency tree references unknown objects {sorted(unknown)}")
        self.epoch = 0
        self._world_cache: Dict[str, Tuple[Pose3, np.ndarray]] = {}
        self._derived: Dict[str, object] = {}

    up_axis = "+Z"

    def __contains__(self, object_id: str) -> bool:
        return object_id in self._by_id

    def get(self, object_id: str) -> SceneObject:
        try:
            return self._by_id[object_id]
        except KeyError:
            raise UnknownObject(object_id) from None

    @property
    def ids(self) -> List[str]:
        return [o.id for o in self.objects]

    def index_of(self, object_id: str) -> int:
        """1-based index used in object-ID maps (0 is background)."""
        self.get(object_id)
        return self.ids.index(object_id) + 1

    def set_pose(self, object_id: str, pose: Pose3) -> None:
        obj = self.get(object_id)
        if obj.pose is pose:
            return
        obj.pose = pose
        self.epoch += 1
        self._derived.clear()

    def world_vertices(self, object_id: str) -> np.ndarray:
        return self.world_triangles(object_id).reshape(-1, 3)

    def world_triangles(self, object_id: str) -> np.ndarray:
        """(m, 3, 3) world-space triangle corners, cached per pose."""
        return self._world_entry(object_id)[1]

    def world_bounds(self, object_id: str) -> Tuple[np.ndarray, np.ndarray]:
        """``(min, max)`` corners over the object's world-space triangles."""
        return self._world_entry(object_id)[2]

    def _world_entry(self, object_id: str):
        obj = self.get(object_id)
        hit = self._world_cache.get(object_id)
        if hit is not None and hit[0] is obj.pose:
            return hit
        tris = obj.pose.apply(self.meshes[obj.mesh_ref].triangle_vertices.reshape(-1, 3)).reshape(-1, 3, 3)
        tris.setflags(write=False)
        flat = tris.reshape(-1, 3)
        lo, hi = flat.min(axis=0), flat.max(axis=0)
        lo.setflags(write=False)
        hi.setflags(write=False)
        entry = (obj.pose, tris, (lo, hi))
        self._world_cache[object_id] = entry
        return entry

    def derived(self, key: str, build):
        """Memoize a value derived from the current poses until the next mutation."""
        if key not in self._derived:
            self._derived[key] = build()
        return self._derived[key]

    def clone(self) -> "Scene":
        other = copy.copy(self)
        other.objects = [copy.copy(o) for o in self.objects]
        other._by_id = {o.id: o for o in other.objects}
        other.dependency_tree = copy.deepcopy(self.dependency_tree)
        other._world_cache = dict(self._world_cache)
        other._derived = {}
        return other

    def poses(self) -> Dict[str, Pose3]:
        return {o.id: o.pose for o in self.objects}


# ---------------------------------------------------------------- operations

def world_aabb(scene: Scene, object_id: str) -> Tuple[np.ndarray, np.ndarray]:
    """Tight axis-aligned box ``(min, max)`` of the object's transformed mesh."""
    obj = scene.get(object_id)
    verts = obj.pose.apply(scene.meshes[obj.mesh_ref].vertices)
    return verts.min(axis=0), verts.max(axis=0)


def aabb_center(scene: Scene, object_id: str) -> np.ndarray:
    lo, hi = world_aabb(scene, object_id)
    return (lo + hi) / 2.0


def dependents_of(scene: Scene, object_id: str) -> List[str]:
    """Everything resting on ``object_id``, directly or transitively.

    Depth-first with siblings in id order, so a supporter always precedes
    what it supports.
    """
    scene.get(object_id)
    out: List[str] = []
    stack = list(reversed(scene.dependency_tree.children(object_id)))
    while stack:
        node = stack.pop()
        out.append(node)
        stack.extend(reversed(scene.dependency_tree.children(node)))
    return out


def compose_about(pose: Pose3, delta: Pose3, pivot: np.ndarray) -> Pose3:
    """Apply a world-space ``delta`` (rotation/uniform scale about ``pivot``,
    then translation) to ``pose``."""
    s = float(delta.scale[0])
    rot = delta.rotation @ pose.rotation
    trans = pivot + delta.translation + s * (delta.rotation @ (pose.translation - pivot))
    return Pose3(trans, rot, pose.scale * s)


def apply_pose_delta(scene: Scene, object_id: str, delta: Pose3, move_dependents: bool = True,
                     pivot=None) -> Scene:
    """Compose ``delta`` onto an object's pose, in place.

    The delta rotates and scales about ``pivot`` (default: the object's
    origin) and then translates. With ``move_dependents`` every supported
    object gets the same world-space delta about the same pivot, so its pose
    in the supporter's frame is unchanged.
    """
    obj = scene.get(object_id)
    if delta.is_identity():
        return scene
    if not np.allclose(delta.scale, delta.scale[0], rtol=0, atol=0):
        raise ValueError("pose deltas must scale uniformly")
    pivot = obj.pose.translation if pivot is None else np.asarray(pivot, dtype=np.float64)
    targets = [object_id] + (dependents_of(scene, object_id) if move_dependents else [])
    for oid in targets:
        scene.set_pose(oid, compose_about(scene.get(oid).pose, delta, pivot))
    return scene


def translate(scene: Scene, object_ids: Iterable[str], offset) -> None:
    offset = np.asarray(offset, dtype=np.float64)
    for oid in object_ids:
        p = scene.get(oid).pose
        scene.set_pose(oid, Pose3(p.translation + offset, p.rotation, p.scale))


# ---------------------------------------------------------------- file I/O

def load_schema(name: str) -> dict:
    return json.loads(resources.files("plausigen").joinpath("schemas").joinpath(name).read_text("utf-8"))


SCENE_SCHEMA = load_schema("scene.schema.json")


def scene_from_json(data: dict, base_dir: Path) -> Scene:
    if isinstance(data, dict) and "up_axis" in data and data["up_axis"] != "+Z":
        raise SchemaError(f"unsupported up axis {data['up_axis']!r}; only +Z scenes are accepted")
    try:
        jsonschema.validate(data, SCENE_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise SchemaError(f"scene schema violation at {list(exc.absolute_path)}: {exc.message}") from None

    meshes: Dict[str, Mesh] = {}
    objects = []
    for item in data["objects"]:
        ref = item["mesh"]
        if ref not in meshes:
            mesh_path = base_dir / ref
            if not mesh_path.is_file():
                raise MissingMesh(f"mesh file not found: {mesh_path}")
            try:
                v, t, n = read_obj(mesh_path)
            except ValueError as exc:
                raise SchemaError(str(exc)) from None
            meshes[ref] = Mesh.cleaned(v, t, n, name=ref)
        try:
            pose = Pose3.from_json(item["pose"])
        except ValueError as exc:
            raise SchemaError(f"object {item['id']!r}: {exc}") from None
        objects.append(SceneObject(
            id=item["id"], class_label=item["class"], size_category=item["size_category"],
            mesh_ref=ref, pose=pose,
            allowed_transforms=frozenset(item.get("allowed_transforms", ())),
            structural=item.get("structural", False)))
    tree = DependencyTree(tuple(e) for e in data.get("dependencies", ()))
    return Scene(data["name"], objects, meshes, tree, units=data["units"])


def load_scene(path) -> Scene:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"{path}: {exc}") from None
    return scene_from_json(data, path.parent)


def scene_to_json(scene: Scene) -> dict:
    objects = []
    for o in scene.objects:
        item = {"id": o.id, "class": o.class_label, "size_category": o.size_category.value,
                "mesh": o.mesh_ref, "pose": o.pose.to_json(),
                "allowed_transforms": sorted(t.value for t in o.allowed_transforms)}
        if o.structural:
            item["structural"] = True
        objects.append(item)
    return {"schema_version": 1, "name": scene.name, "units": scene.units, "up_axis": "+Z",
            "objects": objects, "dependencies": [list(e) for e in scene.dependency_tree.edge_list()]}


def save_scene(scene: Scene, path) -> None:
    """Write the scene JSON plus any mesh files missing next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    for ref, mesh in scene.meshes.items():
        target = path.parent / ref
        if not target.exists():
            write_obj(target, mesh.vertices, mesh.triangles, mesh.normals)
    path.write_text(json.dumps(scene_to_json(scene), indent=2) + "\n", encoding="utf-8")
