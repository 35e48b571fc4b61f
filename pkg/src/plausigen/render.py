"""Headless flat-shaded z-buffer rasterizer with an object-ID pass."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence

import numpy as np
from PIL import Image

from .camera import CameraSpec
from .config import DEFAULT_CONFIG, Config
from .geometry import ScreenBox, box_union_area
from .scene import Scene

logger = logging.getLogger(__name__)

AMBIENT = 0.35
DIFFUSE = 0.65
LIGHT_DIR = np.array([0.3, -0.5, 0.81]) / np.linalg.norm([0.3, -0.5, 0.81])


@dataclass
class ObjectView:
    box: Optional[ScreenBox]
    pixel_count: int
    visible_fraction: float

    def to_json(self) -> dict:
        return {"box": self.box.as_list() if self.box else None,
                "pixel_count": self.pixel_count, "visible_fraction": self.visible_fraction}


@dataclass
class RenderOutput:
    color_image: np.ndarray  # (H, W, 3) uint8
    id_map: np.ndarray  # (H, W) uint16, scene object index, 0 = background
    per_object: Dict[str, ObjectView] = field(default_factory=dict)
    index_to_id: Dict[int, str] = field(default_factory=dict)

    @property
    def image_size(self) -> int:
        return int(self.id_map.shape[0])


@dataclass(frozen=True)
class PlausibilityScore:
    value: float

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"score {self.value} outside [0, 1]")

    def __float__(self) -> float:
        return self.value


def class_color(label: str) -> np.ndarray:
    """Stable per-class RGB in [60, 230] derived from a hash of the label."""
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return np.array([60 + digest[i] * 170 // 255 for i in range(3)], dtype=np.float64)


def _clip_near(tri: np.ndarray, near: float) -> list:
    """Clip a camera-space triangle against ``z >= near``; 0, 1 or 2 triangles."""
    inside = tri[:, 2] >= near
    if inside.all():
        return [tri]
    if not inside.any():
        return []
    poly = []
    for k in range(3):
        a, b = tri[k], tri[(k + 1) % 3]
        ina, inb = a[2] >= near, b[2] >= near
        if ina:
            poly.append(a)
        if ina != inb:
            s = (near - a[2]) / (b[2] - a[2])
            p = a + s * (b - a)
            p[2] = near
            poly.append(p)
    return [np.array([poly[0], poly[j], poly[j + 1]]) for j in range(1, len(poly) - 1)]


def _raster_triangle(cam_tri: np.ndarray, focal: float, size: int, depth: np.ndarray) -> Optional[tuple]:
    """Fill ``depth`` (1/z buffer, larger is nearer) for one camera-space
    triangle. Returns the written mask and its top-left corner."""
    half = size / 2.0
    inv_z = 1.0 / cam_tri[:, 2]
    sx = half + focal * cam_tri[:, 0] * inv_z
    sy = half - focal * cam_tri[:, 1] * inv_z
    area = (sx[1] - sx[0]) * (sy[2] - sy[0]) - (sx[2] - sx[0]) * (sy[1] - sy[0])
    if area == 0.0 or not np.isfinite(area):
        return None
    x0 = max(int(np.floor(sx.min() - 0.5)), 0)
    x1 = min(int(np.ceil(sx.max() - 0.5)), size - 1)
    y0 = max(int(np.floor(sy.min() - 0.5)), 0)
    y1 = min(int(np.ceil(sy.max() - 0.5)), size - 1)
    if x0 > x1 or y0 > y1:
        return None
    px = np.arange(x0, x1 + 1) + 0.5
    py = (np.arange(y0, y1 + 1) + 0.5)[:, None]
    # barycentric weights via edge functions; pixel centers on an edge are covered
    w0 = ((sx[2] - sx[1]) * (py - sy[1]) - (sy[2] - sy[1]) * (px - sx[1])) / area
    w1 = ((sx[0] - sx[2]) * (py - sy[2]) - (sy[0] - sy[2]) * (px - sx[2])) / area
    w2 = 1.0 - w0 - w1
    cover = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
    if not cover.any():
        return None
    iz = w0 * inv_z[0] + w1 * inv_z[1] + w2 * inv_z[2]
    region = depth[y0:y1 + 1, x0:x1 + 1]
    write = cover & (iz > region)
    region[write] = iz[write]
    return write, y0, x0


def render(scene: Scene, camera: CameraSpec, config: Config = DEFAULT_CONFIG) -> RenderOutput:
    """Rasterize ``scene`` from ``camera``.

    Every object is drawn into its own 1/z buffer first, which yields the
    alone-render pixel counts; the frame is then the per-pixel nearest
    object, with ties going to the lower object index.
    """
    size = camera.image_size
    focal = camera.focal
    right, up, fwd = camera.basis()
    near = config.near_plane
    frame_depth = np.zeros((size, size))
    id_map = np.zeros((size, size), dtype=np.uint16)
    shade = np.zeros((size, size))
    color = np.zeros((size, size, 3))
    alone: Dict[str, int] = {}
    index_to_id: Dict[int, str] = {}

    for idx, oid in enumerate(scene.ids, start=1):
        index_to_id[idx] = oid
        tris = scene.world_triangles(oid)
        normals = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
        lens = np.linalg.norm(normals, axis=1)
        lens[lens == 0] = 1.0
        lambert = AMBIENT + DIFFUSE * np.abs((normals / lens[:, None]) @ LIGHT_DIR)
        rel = tris - camera.location
        cam_tris = np.stack([rel @ right, rel @ up, rel @ fwd], axis=-1)
        keep = cam_tris[:, :, 2].max(axis=1) >= near
        depth = np.zeros((size, size))
        obj_shade = np.zeros((size, size))
        for k in np.flatnonzero(keep):
            for piece in _clip_near(cam_tris[k], near):
                hit = _raster_triangle(piece, focal, size, depth)
                if hit is not None:
                    write, y0, x0 = hit
                    h, w = write.shape
                    obj_shade[y0:y0 + h, x0:x0 + w][write] = lambert[k]
        covered = depth > 0
        alone[oid] = int(covered.sum())
        wins = covered & (depth > frame_depth)
        frame_depth[wins] = depth[wins]
        id_map[wins] = idx
        shade[wins] = obj_shade[wins]
        color[wins] = class_color(scene.get(oid).class_label)

    image = np.clip(np.rint(color * shade[..., None]), 0, 255).astype(np.uint8)
    per_object = _object_views(id_map, index_to_id, alone)
    return RenderOutput(image, id_map, per_object, index_to_id)


def _object_views(id_map: np.ndarray, index_to_id: Dict[int, str], alone: Dict[str, int]) -> Dict[str, ObjectView]:
    views = {}
    counts = np.bincount(id_map.ravel(), minlength=max(index_to_id, default=0) + 1)
    for idx, oid in index_to_id.items():
        n = int(counts[idx])
        box = None
        if n:
            ys, xs = np.nonzero(id_map == idx)
            box = ScreenBox(xs.min(), ys.min(), xs.max() + 1, ys.max() + 1)
        frac = n / alone[oid] if alone[oid] else 0.0
        views[oid] = ObjectView(box, n, frac)
    return views


def plausibility_score(output: RenderOutput, transformed_ids: Iterable[str]) -> PlausibilityScore:
    """One minus the image fraction covered by the union of the screen boxes
    of the visible transformed objects."""
    boxes = []
    for oid in transformed_ids:
        view = output.per_object.get(oid)
        if view is None:
            raise KeyError(oid)
        if view.box is not None:
            boxes.append(view.box)
    size = output.image_size
    return PlausibilityScore(1.0 - box_union_area(boxes, size) / float(size * size))


def score_boxes(boxes: Sequence[ScreenBox], image_size: int) -> PlausibilityScore:
    return PlausibilityScore(1.0 - box_union_area(list(boxes), image_size) / float(image_size * image_size))


def write_color_png(output: RenderOutput, path) -> None:
    Image.fromarray(output.color_image).save(Path(path), format="PNG", optimize=False)


def write_id_png(output: RenderOutput, path) -> None:
    Image.fromarray(output.id_map.astype(np.uint16)).save(Path(path), format="PNG")


def read_id_png(path) -> np.ndarray:
    with Image.open(Path(path)) as im:
        return np.array(im, dtype=np.uint16)
