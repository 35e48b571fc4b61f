"""Camera model and the validated camera search over transformed objects."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import DEFAULT_CONFIG, Config
from .errors import DegenerateCamera
from .geometry import RayCaster, object_bounds
from .perturb import TransformRecord, revert_transform
from .scene import Scene

_GOLDEN = (0.7548776662466927, 0.5698402909980532)  # R2 low-discrepancy sequence


@dataclass(frozen=True, eq=False)
class CameraSpec:
    location: np.ndarray
    target: np.ndarray
    vertical_fov: float = 50.0
    image_size: int = 512

    def __post_init__(self):
        loc = np.array(self.location, dtype=np.float64).reshape(3)
        tgt = np.array(self.target, dtype=np.float64).reshape(3)
        if np.array_equal(loc, tgt) or np.linalg.norm(tgt - loc) == 0.0:
            raise DegenerateCamera("camera location equals its target")
        if not 10.0 < self.vertical_fov < 120.0:
            raise ValueError("vertical_fov must lie in (10, 120) degrees")
        if int(self.image_size) < 1:
            raise ValueError("image_size must be positive")
        object.__setattr__(self, "location", loc)
        object.__setattr__(self, "target", tgt)
        object.__setattr__(self, "image_size", int(self.image_size))

    def basis(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(right, up, forward) unit vectors; world +Z is up unless looking along it."""
        fwd = self.target - self.location
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, [0.0, 0.0, 1.0])
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(fwd, [0.0, 1.0, 0.0])
        right = right / np.linalg.norm(right)
        up = np.cross(right, fwd)
        return right, up, fwd

    @property
    def focal(self) -> float:
        return (self.image_size / 2.0) / np.tan(np.radians(self.vertical_fov) / 2.0)

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        right, up, fwd = self.basis()
        rel = np.asarray(points, dtype=np.float64) - self.location
        return np.stack([rel @ right, rel @ up, rel @ fwd], axis=-1)

    def project(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Pixel coordinates (origin top-left) and depth of world points."""
        c = self.to_camera(points)
        half = self.image_size / 2.0
        with np.errstate(divide="ignore", invalid="ignore"):
            px = half + self.focal * c[..., 0] / c[..., 2]
            py = half - self.focal * c[..., 1] / c[..., 2]
        return px, py, c[..., 2]

    def in_frustum(self, points: np.ndarray, near: float = 1.0) -> np.ndarray:
        px, py, depth = self.project(points)
        n = self.image_size
        return (depth > near) & (px >= 0) & (px < n) & (py >= 0) & (py < n)

    def to_json(self) -> dict:
        return {"location": self.location.tolist(), "target": self.target.tolist(),
                "vertical_fov": float(self.vertical_fov), "image_size": self.image_size}

    @classmethod
    def from_json(cls, data: dict) -> "CameraSpec":
        return cls(data["location"], data["target"], data["vertical_fov"], data["image_size"])


@dataclass
class VisibilityReport:
    visible_fraction: Dict[str, float] = field(default_factory=dict)
    objects_in_view: int = 0


def surface_samples(scene: Scene, object_id: str, count: int = 64) -> np.ndarray:
    """Deterministic area-weighted stratified points on an object's surface."""
    def build():
        tris = scene.world_triangles(object_id)
        area = np.linalg.norm(np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]), axis=1)
        cdf = np.cumsum(area)
        k = np.arange(count) + 0.5
        idx = np.minimum(np.searchsorted(cdf, k / count * cdf[-1]), len(tris) - 1)
        r1 = np.modf(k * _GOLDEN[0])[0]
        r2 = np.modf(k * _GOLDEN[1])[0]
        s = np.sqrt(r1)
        a, b, c = 1 - s, s * (1 - r2), s * r2
        t = tris[idx]
        return a[:, None] * t[:, 0] + b[:, None] * t[:, 1] + c[:, None] * t[:, 2]
    return scene.derived(("samples", object_id, count), build)


class ViewEvaluator:
    """Visibility queries for one transformed scene and its untransformed twin.

    ``scene`` holds the records applied; the twin is a scratch clone with
    them reverted. Both ray casters are built once and reused for every
    candidate camera.
    """

    def __init__(self, scene: Scene, records: Sequence[TransformRecord], config: Config = DEFAULT_CONFIG):
        self.config = config
        self.post = scene
        self.pre = scene.clone()
        for rec in reversed(records):
            revert_transform(self.pre, rec)
        self.transformed = list(dict.fromkeys(r.object_id for r in records))
        self.countable = [o.id for o in scene.objects if not o.structural]
        self.post_caster = RayCaster(self.post)
        self.pre_caster = RayCaster(self.pre)

    def _fractions(self, scene: Scene, caster: RayCaster, camera: CameraSpec, ids: Sequence[str]) -> Dict[str, float]:
        n = self.config.visibility_samples
        if not ids:
            return {}
        pts = np.concatenate([surface_samples(scene, i, n) for i in ids])
        owner = np.repeat(np.arange(len(ids)), n)
        inside = camera.in_frustum(pts, self.config.near_plane)
        visible = np.zeros(len(pts), dtype=bool)
        if inside.any():
            p = pts[inside]
            rel = p - camera.location
            dist = np.linalg.norm(rel, axis=1)
            idx, t = caster.cast(np.broadcast_to(camera.location, p.shape), rel / dist[:, None])
            caster_pos = {oid: k for k, oid in enumerate(caster.ids)}
            own = np.array([caster_pos[ids[j]] for j in owner[inside]])
            visible[inside] = (idx < 0) | (idx == own) | (t >= dist * (1 - 1e-9) - 1e-9)
        counts = np.bincount(owner[visible], minlength=len(ids))
        return {oid: counts[j] / n for j, oid in enumerate(ids)}

    def report(self, camera: CameraSpec) -> VisibilityReport:
        fr = self._fractions(self.post, self.post_caster, camera, self.countable)
        in_view = sum(1 for v in fr.values() if v >= self.config.v_min)
        return VisibilityReport(fr, in_view)

    def pre_fractions(self, camera: CameraSpec) -> Dict[str, float]:
        return self._fractions(self.pre, self.pre_caster, camera, self.transformed)

    def visible(self, camera: CameraSpec, report: Optional[VisibilityReport] = None) -> bool:
        v_min = self.config.v_min
        report = report or self.report(camera)
        if any(report.visible_fraction.get(i, 0.0) < v_min for i in self.transformed):
            return False
        if report.objects_in_view < self.config.n_min:
            return False
        pre = self.pre_fractions(camera)
        return all(pre[i] >= v_min for i in self.transformed)

    def obscured(self, camera: CameraSpec, report: Optional[VisibilityReport] = None) -> bool:
        report = report or self.report(camera)
        for oid in self.transformed:
            if report.visible_fraction.get(oid, 0.0) >= self.config.o_max:
                continue
            lo, hi = object_bounds(self.post, oid)
            center = (lo + hi) / 2
            rel = center - camera.location
            dist = float(np.linalg.norm(rel))
            if dist == 0.0:
                continue
            idx, t = self.post_caster.cast(camera.location[None], (rel / dist)[None])
            if idx[0] >= 0 and self.post_caster.ids[idx[0]] != oid and t[0] < dist:
                return True
        return False


def check_visibility(scene: Scene, camera: CameraSpec, records: Sequence[TransformRecord],
                     config: Config = DEFAULT_CONFIG) -> bool:
    """Transformed objects are visible both where they are now and where
    they were, and enough objects are in view. ``scene`` has the records
    applied."""
    return ViewEvaluator(scene, records, config).visible(camera)


def check_obscuration(scene: Scene, camera: CameraSpec, records: Sequence[TransformRecord],
                      config: Config = DEFAULT_CONFIG) -> bool:
    """Some transformed object is hidden behind another object on the line
    from the camera to its center."""
    return ViewEvaluator(scene, records, config).obscured(camera)


def random_initial_camera(rng: np.random.Generator, centroid, config: Config = DEFAULT_CONFIG) -> CameraSpec:
    centroid = np.asarray(centroid, dtype=np.float64)
    h = config.camera_box_half_xy
    offset = np.array([rng.uniform(-h, h), rng.uniform(-h, h),
                       rng.uniform(config.camera_box_z_min, config.camera_box_z_max)])
    return CameraSpec(centroid + offset, centroid, config.camera_fov, config.image_size)


def transform_centroid(pre: Scene, post: Scene, records: Sequence[TransformRecord]) -> np.ndarray:
    centers = []
    for rec in records:
        for s in (pre, post):
            lo, hi = object_bounds(s, rec.object_id)
            centers.append((lo + hi) / 2)
    return np.mean(centers, axis=0)


@dataclass
class SearchStep:
    iteration: int
    direction: int
    location: np.ndarray
    visible: bool
    obscured: bool


def find_camera(scene: Scene, records: Sequence[TransformRecord], rng: np.random.Generator,
                n_iter: Optional[int] = None, step: Optional[float] = None,
                config: Config = DEFAULT_CONFIG, trace: Optional[List[SearchStep]] = None,
                evaluator: Optional[ViewEvaluator] = None) -> Optional[CameraSpec]:
    """Line search both ways along the centroid-to-random-camera axis.

    Candidate ``i`` sits at ``centroid + v * ((i // 2 + 1) * d * step)`` with
    ``d = -1`` for even ``i`` and ``+1`` for odd ``i``. A direction that
    shows occlusion is abandoned for the rest of the search.
    """
    if not records:
        raise ValueError("find_camera needs at least one transform record")
    n_iter = config.n_iter if n_iter is None else n_iter
    if n_iter < 1:
        raise ValueError("n_iter must be at least 1")
    ev = evaluator or ViewEvaluator(scene, records, config)
    centroid = transform_centroid(ev.pre, ev.post, records)
    initial = random_initial_camera(rng, centroid, config)
    offset = initial.location - centroid
    radius = float(np.linalg.norm(offset))
    v = offset / radius
    if step is None:
        step = config.step_fraction * radius
    if step <= 0:
        raise ValueError("step must be positive")
    dead = {-1: False, 1: False}
    for i in range(2 * n_iter + 1):
        d = -1 if i % 2 == 0 else 1
        if dead[d]:
            if dead[-d]:
                break
            continue
        location = centroid + v * ((i // 2 + 1) * d * step)
        cam = CameraSpec(location, centroid, config.camera_fov, config.image_size)
        report = ev.report(cam)
        ok = ev.visible(cam, report)
        blocked = False if ok else ev.obscured(cam, report)
        if trace is not None:
            trace.append(SearchStep(i, d, location, ok, blocked))
        if ok:
            return cam
        if blocked:
            dead[d] = True
    return None
