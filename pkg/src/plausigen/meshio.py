"""Minimal Wavefront OBJ reading and writing (positions, normals, faces)."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _index(token: str, count: int) -> int:
    i = int(token)
    return i - 1 if i > 0 else count + i


def read_obj(path):
    """Parse an OBJ file and fan-triangulate its polygons.

    Returns ``(vertices, triangles, normals)``. ``normals`` is a per-vertex
    array only when every face corner references a normal and each vertex is
    always paired with the same one; otherwise it is ``None``.
    """
    verts, norms, tris = [], [], []
    corner_normals = {}
    normals_ok = True
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif tag == "vn":
                norms.append([float(x) for x in parts[1:4]])
            elif tag == "f":
                if len(parts) < 4:
                    raise ValueError(f"{path}:{lineno}: face with fewer than 3 corners")
                corner = []
                for tok in parts[1:]:
                    fields = tok.split("/")
                    vi = _index(fields[0], len(verts))
                    corner.append(vi)
                    if len(fields) >= 3 and fields[2]:
                        ni = _index(fields[2], len(norms))
                        if corner_normals.setdefault(vi, ni) != ni:
                            normals_ok = False
                    else:
                        normals_ok = False
                for k in range(1, len(corner) - 1):
                    tris.append([corner[0], corner[k], corner[k + 1]])
    vertices = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    triangles = np.asarray(tris, dtype=np.int64).reshape(-1, 3)
    if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
        raise ValueError(f"{path}: face index out of range")
    normals = None
    if normals_ok and norms and len(corner_normals) == len(vertices):
        table = np.asarray(norms, dtype=np.float64)
        normals = table[[corner_normals[i] for i in range(len(vertices))]]
    return vertices, triangles, normals


def write_obj(path, vertices, triangles, normals=None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in np.asarray(vertices, dtype=np.float64).tolist()]
    if normals is not None:
        lines += [f"vn {x!r} {y!r} {z!r}" for x, y, z in np.asarray(normals).tolist()]
        lines += [f"f {a+1}//{a+1} {b+1}//{b+1} {c+1}//{c+1}" for a, b, c in np.asarray(triangles).tolist()]
    else:
        lines += [f"f {a+1} {b+1} {c+1}" for a, b, c in np.asarray(triangles).tolist()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
