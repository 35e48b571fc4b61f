"""Geometric predicates and solvers over a :class:`~plausigen.scene.Scene`.

All functions read world-space triangles from the scene's per-pose cache.
The ray caster culls by per-object bounding boxes before testing triangles;
results are defined to match a brute-force scan over every triangle.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .config import DEFAULT_CONFIG, Config
from .scene import Pose3, Scene, dependents_of

TOUCH_TOL = 1e-9
_PARITY_DIR = np.array([0.5772156649, 0.3719111, 0.7263891])
_PARITY_DIR = _PARITY_DIR / np.linalg.norm(_PARITY_DIR)
_CHUNK = 250_000


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.array(self.origin, dtype=np.float64).reshape(3)
        d = np.array(self.direction, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must be a unit vector")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    @classmethod
    def towards(cls, origin, target) -> "Ray":
        origin = np.asarray(origin, dtype=np.float64)
        d = np.asarray(target, dtype=np.float64) - origin
        return cls(origin, d / np.linalg.norm(d))


@dataclass(frozen=True)
class HitRecord:
    object_id: str
    distance: float
    point: np.ndarray


@dataclass(frozen=True, order=True)
class ScreenBox:
    """Half-open pixel rectangle ``[min_x, max_x) x [min_y, max_y)``."""

    min_x: int
    min_y: int
    max_x: int
    max_y: int

    def __post_init__(self):
        for name in ("min_x", "min_y", "max_x", "max_y"):
            object.__setattr__(self, name, int(getattr(self, name)))
        if self.min_x > self.max_x or self.min_y > self.max_y:
            raise ValueError(f"inverted box {self}")

    @property
    def area(self) -> int:
        return (self.max_x - self.min_x) * (self.max_y - self.min_y)

    def within(self, image_size: int) -> bool:
        return 0 <= self.min_x and 0 <= self.min_y and self.max_x <= image_size and self.max_y <= image_size

    def as_list(self) -> List[int]:
        return [self.min_x, self.min_y, self.max_x, self.max_y]


# ------------------------------------------------------------------ kernels

def ray_triangle_distances(origins: np.ndarray, dirs: np.ndarray, tris: np.ndarray,
                           tmin: float = 0.0) -> np.ndarray:
    """Möller–Trumbore over every (ray, triangle) pair; ``inf`` marks a miss.

    Barycentric bounds are inclusive, so rays through shared edges hit.
    """
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    n, m = len(origins), len(tris)
    out = np.full((n, m), np.inf)
    if n == 0 or m == 0:
        return out
    v0 = tris[:, 0]
    e1 = tris[:, 1] - v0
    e2 = tris[:, 2] - v0
    area = np.linalg.norm(np.cross(e1, e2), axis=1)
    rows = max(1, _CHUNK // m)
    for s in range(0, n, rows):
        o = origins[s:s + rows, None, :]
        d = dirs[s:s + rows, None, :]
        pvec = np.cross(d, e2)
        det = np.einsum("ijk,jk->ij", pvec, e1)
        ok = np.abs(det) > 1e-13 * area * np.linalg.norm(d, axis=2)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
            tvec = o - v0
            u = np.einsum("ijk,ijk->ij", tvec, pvec) * inv
            qvec = np.cross(tvec, e1)
            v = np.einsum("ijk,ijk->ij", np.broadcast_to(d, qvec.shape), qvec) * inv
            t = np.einsum("ijk,jk->ij", qvec, e2) * inv
        hit = ok & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t >= tmin)
        out[s:s + rows] = np.where(hit, t, np.inf)
    return out


def _slab_entry(origins, dirs, lo, hi):
    """Entry distance of each ray into a box, ``inf`` when it misses."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
    tnear = np.fmax.reduce(np.fmin(t0, t1), axis=1)
    tfar = np.fmin.reduce(np.fmax(t0, t1), axis=1)
    tnear = np.nan_to_num(tnear, nan=-np.inf)
    tfar = np.nan_to_num(tfar, nan=np.inf)
    hit = (tfar >= np.maximum(tnear, 0.0))
    return np.where(hit, np.maximum(tnear, 0.0), np.inf)


class RayCaster:
    """Nearest-hit queries against a fixed snapshot of scene geometry.

    Objects are visited in id order and a hit replaces the current best only
    when strictly nearer, which yields the (distance, object id) tie-break.
    """

    def __init__(self, scene: Scene, object_ids: Optional[Iterable[str]] = None):
        ids = sorted(scene.ids if object_ids is None else object_ids)
        self.ids: List[str] = ids
        self.tris = [scene.world_triangles(i) for i in ids]
        self.lo = []
        self.hi = []
        for tris in self.tris:
            lo, hi = tris.reshape(-1, 3).min(axis=0), tris.reshape(-1, 3).max(axis=0)
            pad = 1e-9 * (1.0 + np.abs(hi - lo).max())
            self.lo.append(lo - pad)
            self.hi.append(hi + pad)

    def cast(self, origins, dirs, skip: Sequence[str] = (), tmin: float = 0.0):
        """Returns ``(index, distance)``; ``index`` is -1 on a miss, else a
        position in :attr:`ids`."""
        origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
        dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
        best_t = np.full(len(origins), np.inf)
        best_i = np.full(len(origins), -1, dtype=np.int64)
        skip = set(skip)
        for k, oid in enumerate(self.ids):
            if oid in skip:
                continue
            entry = _slab_entry(origins, dirs, self.lo[k], self.hi[k])
            rows = np.nonzero(entry <= best_t)[0]
            if len(rows) == 0:
                continue
            t = ray_triangle_distances(origins[rows], dirs[rows], self.tris[k], tmin).min(axis=1)
            better = t < best_t[rows]
            best_t[rows[better]] = t[better]
            best_i[rows[better]] = k
        return best_i, best_t


def ray_caster(scene: Scene) -> RayCaster:
    return scene.derived("ray_caster", lambda: RayCaster(scene))


def ray_first_hit(scene: Scene, ray: Ray) -> Optional[HitRecord]:
    """Nearest intersection of ``ray`` with any object, or ``None``."""
    caster = ray_caster(scene)
    idx, t = caster.cast(ray.origin[None], ray.direction[None])
    if idx[0] < 0:
        return None
    dist = float(t[0])
    return HitRecord(caster.ids[idx[0]], dist, ray.origin + dist * ray.direction)


def _segments_cross(p0, p1, tris) -> np.ndarray:
    """Pairwise segment/triangle crossing for aligned arrays (K,3),(K,3),(K,3,3)."""
    d = p1 - p0
    v0 = tris[:, 0]
    e1 = tris[:, 1] - v0
    e2 = tris[:, 2] - v0
    pvec = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    scale = np.linalg.norm(np.cross(e1, e2), axis=1) * np.linalg.norm(d, axis=1)
    ok = np.abs(det) > 1e-13 * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = p0 - v0
        u = np.einsum("ij,ij->i", tvec, pvec) * inv
        qvec = np.cross(tvec, e1)
        v = np.einsum("ij,ij->i", d, qvec) * inv
        t = np.einsum("ij,ij->i", e2, qvec) * inv
    return ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t >= 0) & (t <= 1)


def _point_triangle_distance(p, tris) -> np.ndarray:
    """Pairwise distance from points (K,3) to triangles (K,3,3)."""
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    n = np.cross(b - a, c - a)
    nn = np.einsum("ij,ij->i", n, n)
    w = p - a
    with np.errstate(divide="ignore", invalid="ignore"):
        # barycentrics of the projection
        g = np.einsum("ij,ij->i", np.cross(b - a, w), n) / nn
        bb = np.einsum("ij,ij->i", np.cross(w, c - a), n) / nn
    inside = (bb >= 0) & (g >= 0) & (bb + g <= 1)
    plane = np.abs(np.einsum("ij,ij->i", w, n)) / np.sqrt(nn)
    edge = np.minimum(np.minimum(_point_segment_distance(p, a, b), _point_segment_distance(p, b, c)),
                      _point_segment_distance(p, c, a))
    return np.where(inside, plane, edge)


def _point_segment_distance(p, a, b) -> np.ndarray:
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.clip(np.einsum("ij,ij->i", p - a, ab) / denom, 0.0, 1.0)
    t = np.nan_to_num(t)
    return np.linalg.norm(p - (a + t[:, None] * ab), axis=1)


def _segment_segment_distance(p1, q1, p2, q2) -> np.ndarray:
    """Pairwise closest distance between segments (Ericson, 5.1.9)."""
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = np.einsum("ij,ij->i", d1, d1)
    e = np.einsum("ij,ij->i", d2, d2)
    f = np.einsum("ij,ij->i", d2, r)
    c = np.einsum("ij,ij->i", d1, r)
    b = np.einsum("ij,ij->i", d1, d2)
    denom = a * e - b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > 1e-30 * a * e, np.clip((b * f - c * e) / denom, 0, 1), 0.0)
        t = (b * s + f) / e
        s = np.where(t < 0, np.clip(-c / a, 0, 1), np.where(t > 1, np.clip((b - c) / a, 0, 1), s))
        t = np.clip(t, 0, 1)
    s = np.nan_to_num(s)
    t = np.nan_to_num(t)
    return np.linalg.norm((p1 + d1 * s[:, None]) - (p2 + d2 * t[:, None]), axis=1)


def _tri_boxes(tris):
    return tris.min(axis=1), tris.max(axis=1)


def _point_inside(point: np.ndarray, tris: np.ndarray) -> bool:
    t = ray_triangle_distances(point[None], _PARITY_DIR[None], tris, tmin=0.0)[0]
    return bool(np.isfinite(t).sum() % 2 == 1)


def _candidate_pairs(ta, tb, tol=TOUCH_TOL):
    alo, ahi = _tri_boxes(ta)
    blo, bhi = _tri_boxes(tb)
    ov = np.all((alo[:, None, :] <= bhi[None, :, :] + tol) & (blo[None, :, :] <= ahi[:, None, :] + tol), axis=2)
    return np.nonzero(ov)


def triangles_intersect(ta: np.ndarray, tb: np.ndarray, tol: float = TOUCH_TOL) -> bool:
    """True iff two closed triangle meshes cross, touch within ``tol``, or
    one lies inside the other."""
    alo, ahi = ta.reshape(-1, 3).min(0), ta.reshape(-1, 3).max(0)
    blo, bhi = tb.reshape(-1, 3).min(0), tb.reshape(-1, 3).max(0)
    if np.any(alo > bhi + tol) or np.any(blo > ahi + tol):
        return False
    ia, ib = _candidate_pairs(ta, tb, tol)
    if len(ia):
        A, B = ta[ia], tb[ib]
        for k in range(3):
            if _segments_cross(A[:, k], A[:, (k + 1) % 3], B).any():
                return True
            if _segments_cross(B[:, k], B[:, (k + 1) % 3], A).any():
                return True
        for k in range(3):
            if (_point_triangle_distance(A[:, k], B) <= tol).any():
                return True
            if (_point_triangle_distance(B[:, k], A) <= tol).any():
                return True
        for i in range(3):
            for j in range(3):
                if (_segment_segment_distance(A[:, i], A[:, (i + 1) % 3], B[:, j], B[:, (j + 1) % 3]) <= tol).any():
                    return True
    if np.all(alo >= blo) and np.all(ahi <= bhi) and _point_inside(ta[0, 0], tb):
        return True
    if np.all(blo >= alo) and np.all(bhi <= ahi) and _point_inside(tb[0, 0], ta):
        return True
    return False


def crossing_points(ta: np.ndarray, tb: np.ndarray) -> np.ndarray:
    """Points where edges of either mesh pass through the other's faces."""
    ia, ib = _candidate_pairs(ta, tb)
    pts = []
    if len(ia):
        A, B = ta[ia], tb[ib]
        for X, Y in ((A, B), (B, A)):
            for k in range(3):
                p0, p1 = X[:, k], X[:, (k + 1) % 3]
                hit = _segments_cross(p0, p1, Y)
                if hit.any():
                    pts.append(_segment_plane_points(p0[hit], p1[hit], Y[hit]))
    return np.concatenate(pts) if pts else np.zeros((0, 3))


def _segment_plane_points(p0, p1, tris):
    n = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    d = p1 - p0
    t = np.einsum("ij,ij->i", tris[:, 0] - p0, n) / np.einsum("ij,ij->i", d, n)
    return p0 + t[:, None] * d


# --------------------------------------------------------------- public API

def object_bounds(scene: Scene, object_id: str) -> Tuple[np.ndarray, np.ndarray]:
    return scene.world_bounds(object_id)


def meshes_intersect(scene: Scene, id_a: str, id_b: str) -> bool:
    """Whether two objects' meshes cross, touch, or nest. Symmetric."""
    ta = scene.world_triangles(id_a)
    tb = scene.world_triangles(id_b)
    if id_a == id_b:
        raise ValueError("meshes_intersect needs two distinct objects")
    if id_a > id_b:
        ta, tb = tb, ta
    return triangles_intersect(ta, tb)


def intersecting_objects(scene: Scene, moving: Sequence[str], others: Optional[Sequence[str]] = None) -> List[str]:
    """Ids from ``others`` (default: everything not in ``moving``) that
    intersect at least one object in ``moving``."""
    moving_set = set(moving)
    others = [i for i in (scene.ids if others is None else others) if i not in moving_set]
    boxes = {i: object_bounds(scene, i) for i in list(moving_set) + others}
    hits = []
    for oid in sorted(others):
        lo, hi = boxes[oid]
        for mid in sorted(moving_set):
            mlo, mhi = boxes[mid]
            if np.any(mlo > hi + TOUCH_TOL) or np.any(lo > mhi + TOUCH_TOL):
                continue
            if meshes_intersect(scene, mid, oid):
                hits.append(oid)
                break
    return hits


def _lowest_face_samples(tris: np.ndarray, grid: int) -> np.ndarray:
    """Bottom surface points of a mesh under a ``grid`` x ``grid`` footprint lattice."""
    v = tris.reshape(-1, 3)
    lo, hi = v.min(axis=0), v.max(axis=0)
    frac = (np.arange(grid) + 0.5) / grid
    gx, gy = np.meshgrid(lo[0] + frac * (hi[0] - lo[0]), lo[1] + frac * (hi[1] - lo[1]), indexing="ij")
    origins = np.stack([gx.ravel(), gy.ravel(), np.full(gx.size, lo[2] - 1.0)], axis=1)
    up = np.tile([0.0, 0.0, 1.0], (len(origins), 1))
    t = ray_triangle_distances(origins, up, tris).min(axis=1)
    ok = np.isfinite(t)
    return origins[ok] + t[ok, None] * up[ok]


def support_gap(scene: Scene, object_id: str, exclude: Sequence[str] = (), grid: int = 8) -> float:
    """Free vertical distance below the object before it meets another
    object or the floor plane ``z = 0``."""
    tris = scene.world_triangles(object_id)
    verts = tris.reshape(-1, 3)
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    gap = max(float(lo[2]), 0.0)
    skip = set(exclude) | {object_id}
    others = []
    for oid in scene.ids:
        if oid in skip:
            continue
        olo, ohi = object_bounds(scene, oid)
        if np.any(olo[:2] > hi[:2]) or np.any(lo[:2] > ohi[:2]) or olo[2] > hi[2]:
            continue
        others.append(oid)
    if not others:
        return gap
    down_origins = np.concatenate([verts, _lowest_face_samples(tris, grid)])
    down = np.tile([0.0, 0.0, -1.0], (len(down_origins), 1))
    caster = RayCaster(scene, others)
    _, t = caster.cast(down_origins, down)
    gap = min(gap, float(t.min()))
    # features of the supports that poke up into the object's underside
    other_verts = np.concatenate([scene.world_vertices(o) for o in others])
    inside = ((other_verts[:, 0] >= lo[0]) & (other_verts[:, 0] <= hi[0])
              & (other_verts[:, 1] >= lo[1]) & (other_verts[:, 1] <= hi[1]) & (other_verts[:, 2] <= hi[2]))
    if inside.any():
        pts = other_verts[inside]
        up = np.tile([0.0, 0.0, 1.0], (len(pts), 1))
        t_up = ray_triangle_distances(pts, up, tris).min(axis=1)
        gap = min(gap, float(t_up.min()))
    return gap


def drop_to_support(scene: Scene, object_id: str, config: Config = DEFAULT_CONFIG,
                    exclude: Optional[Sequence[str]] = None) -> float:
    """Downward Z displacement (<= 0) that brings the object to rest.

    The object ends within ``config.contact_tolerance`` above the first
    surface below it: another object or the floor plane. Objects in
    ``exclude`` (default: the object's dependents) are ignored as supports.
    An object already within tolerance of its support gets 0.0.
    """
    if exclude is None:
        exclude = dependents_of(scene, object_id)
    tol = config.contact_tolerance
    gap = support_gap(scene, object_id, exclude, config.drop_grid)
    if gap <= tol:
        return 0.0
    rest = tol / 2.0
    disp = -(gap - rest)
    # Edge-on-edge first contact can slip between the ray samples; back off
    # until clear (0.0 is clear by assumption).
    probe = scene.clone()
    others = [i for i in scene.ids if i not in set(exclude) | {object_id}]
    base = probe.get(object_id).pose
    if _clear_after(probe, object_id, base, disp, others):
        return float(disp)
    lo_d, hi_d = disp, 0.0
    while hi_d - lo_d > rest:
        mid = (lo_d + hi_d) / 2.0
        if _clear_after(probe, object_id, base, mid, others):
            hi_d = mid
        else:
            lo_d = mid
    return float(hi_d)


def _clear_after(probe: Scene, object_id: str, base: Pose3, dz: float, others) -> bool:
    probe.set_pose(object_id, Pose3(base.translation + np.array([0.0, 0.0, dz]), base.rotation, base.scale))
    clear = not intersecting_objects(probe, [object_id], others)
    probe.set_pose(object_id, base)
    return clear


def box_union_area(boxes: Sequence[ScreenBox], image_size: int) -> int:
    """Exact pixel area covered by the union of half-open boxes."""
    boxes = [b for b in boxes]
    for b in boxes:
        if not b.within(image_size):
            raise ValueError(f"{b} lies outside a {image_size}x{image_size} image")
    boxes = [b for b in boxes if b.area > 0]
    if not boxes:
        return 0
    xs = sorted({b.min_x for b in boxes} | {b.max_x for b in boxes})
    total = 0
    for xa, xb in zip(xs[:-1], xs[1:]):
        spans = sorted((b.min_y, b.max_y) for b in boxes if b.min_x <= xa and b.max_x >= xb)
        covered = 0
        cur_lo = cur_hi = None
        for lo, hi in spans:
            if cur_hi is None or lo > cur_hi:
                if cur_hi is not None:
                    covered += cur_hi - cur_lo
                cur_lo, cur_hi = lo, hi
            else:
                cur_hi = max(cur_hi, hi)
        if cur_hi is not None:
            covered += cur_hi - cur_lo
        total += covered * (xb - xa)
    return total
