"""Closed low-poly mesh primitives for building synthetic rooms."""

from __future__ import annotations

from typing import Iterable, Sequence, Tuple

import numpy as np

from .scene import Mesh

_BOX_TRIS = np.array([
    [0, 2, 1], [0, 3, 2],  # bottom (z = lo)
    [4, 5, 6], [4, 6, 7],  # top
    [0, 1, 5], [0, 5, 4],  # y = lo
    [2, 3, 7], [2, 7, 6],  # y = hi
    [1, 2, 6], [1, 6, 5],  # x = hi
    [3, 0, 4], [3, 4, 7],  # x = lo
])


def box_parts(lo: Sequence[float], hi: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    (x0, y0, z0), (x1, y1, z1) = lo, hi
    v = np.array([
        [x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
        [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1],
    ], dtype=np.float64)
    return v, _BOX_TRIS.copy()


def prism_parts(center_xy, radius: float, z0: float, z1: float, sides: int = 8):
    """A closed n-gon prism (a cheap cylinder)."""
    ang = 2 * np.pi * (np.arange(sides) + 0.5) / sides
    ring = np.stack([center_xy[0] + radius * np.cos(ang), center_xy[1] + radius * np.sin(ang)], axis=1)
    bottom = np.column_stack([ring, np.full(sides, z0)])
    top = np.column_stack([ring, np.full(sides, z1)])
    cb = [center_xy[0], center_xy[1], z0]
    ct = [center_xy[0], center_xy[1], z1]
    v = np.vstack([bottom, top, cb, ct])
    ib, it = 2 * sides, 2 * sides + 1
    tris = []
    for i in range(sides):
        j = (i + 1) % sides
        tris += [[ib, j, i], [it, sides + i, sides + j], [i, j, sides + j], [i, sides + j, sides + i]]
    return v, np.array(tris)


def merge(parts: Iterable[Tuple[np.ndarray, np.ndarray]]) -> Mesh:
    verts, tris, offset = [], [], 0
    for v, t in parts:
        verts.append(v)
        tris.append(t + offset)
        offset += len(v)
    return Mesh(np.vstack(verts), np.vstack(tris))


def box(size: Sequence[float], centered: bool = False) -> Mesh:
    """Box of ``size``; base-centered (bottom face at z = 0) unless ``centered``."""
    sx, sy, sz = size
    z0 = -sz / 2 if centered else 0.0
    return merge([box_parts((-sx / 2, -sy / 2, z0), (sx / 2, sy / 2, z0 + sz))])


def cylinder(radius: float, height: float, sides: int = 8) -> Mesh:
    return merge([prism_parts((0.0, 0.0), radius, 0.0, height, sides)])


def table(width: float, depth: float, height: float, top: float = 4.0, leg: float = 5.0) -> Mesh:
    """Tabletop on four legs; the legs touch the top's underside."""
    parts = [box_parts((-width / 2, -depth / 2, height - top), (width / 2, depth / 2, height))]
    for sx in (-1, 1):
        for sy in (-1, 1):
            x0 = sx * (width / 2 - leg) if sx > 0 else -width / 2
            y0 = sy * (depth / 2 - leg) if sy > 0 else -depth / 2
            parts.append(box_parts((x0, y0, 0.0), (x0 + leg, y0 + leg, height - top)))
    return merge(parts)


def chair(width: float = 45.0, depth: float = 45.0, seat: float = 45.0, back: float = 90.0) -> Mesh:
    """Seat on four legs with a backrest along -y."""
    leg, slab = 4.0, 4.0
    parts = [box_parts((-width / 2, -depth / 2, seat - slab), (width / 2, depth / 2, seat)),
             box_parts((-width / 2, -depth / 2, seat), (width / 2, -depth / 2 + 4.0, back))]
    for x0 in (-width / 2, width / 2 - leg):
        for y0 in (-depth / 2, depth / 2 - leg):
            parts.append(box_parts((x0, y0, 0.0), (x0 + leg, y0 + leg, seat - slab)))
    return merge(parts)


def monitor(width: float = 55.0, height: float = 35.0) -> Mesh:
    """Foot, neck and a screen facing +y."""
    return merge([
        box_parts((-10.0, -8.0, 0.0), (10.0, 8.0, 2.0)),
        box_parts((-2.0, -2.0, 2.0), (2.0, 2.0, 12.0)),
        box_parts((-width / 2, -2.0, 12.0), (width / 2, 2.0, 12.0 + height)),
    ])


def sofa(width: float = 200.0, depth: float = 90.0, seat: float = 42.0, back: float = 85.0) -> Mesh:
    arm = 18.0
    return merge([
        box_parts((-width / 2 + arm, -depth / 2 + 20.0, 0.0), (width / 2 - arm, depth / 2, seat)),
        box_parts((-width / 2 + arm, -depth / 2, 0.0), (width / 2 - arm, -depth / 2 + 20.0, back)),
        box_parts((-width / 2, -depth / 2, 0.0), (-width / 2 + arm, depth / 2, 60.0)),
        box_parts((width / 2 - arm, -depth / 2, 0.0), (width / 2, depth / 2, 60.0)),
    ])


def lamp(base: float = 8.0, height: float = 40.0, shade: float = 14.0) -> Mesh:
    return merge([
        prism_parts((0.0, 0.0), base, 0.0, 2.0),
        prism_parts((0.0, 0.0), 1.5, 2.0, height - 15.0),
        prism_parts((0.0, 0.0), shade, height - 15.0, height),
    ])
