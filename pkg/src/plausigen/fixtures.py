"""Hand-built synthetic room corpus used by the test-suite and examples.

Run ``python -m plausigen.fixtures OUT_DIR`` to (re)write the scene files.
Units are centimeters. Everything that rests on something sits ``GAP``
above it, inside the contact tolerance, so the plausible rooms contain no
touching meshes.
"""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path
from typing import Dict, List, Optional

from . import shapes
from .meshio import write_obj
from .scene import Mesh

GAP = 5e-4

ALL_TYPES = ["gravity", "intersection", "pose", "size", "co_occurrence_location", "co_occurrence_rotation"]
ROUND = {"plate", "bowl", "cup", "mug", "vase", "trash_bin", "plant", "lamp", "floor_lamp"}
TINY = {"fork", "remote", "mouse", "magazine"}


def allowed_for(class_label: str) -> List[str]:
    out = list(ALL_TYPES)
    if class_label in ROUND:
        out.remove("co_occurrence_rotation")
    if class_label in TINY:
        out.remove("co_occurrence_location")
    return out


class RoomBuilder:
    def __init__(self, name: str):
        self.name = name
        self.meshes: Dict[str, Mesh] = {}
        self.objects: List[dict] = []
        self.deps: List[List[str]] = []
        self.tops: Dict[str, float] = {}
        self.bases: Dict[str, float] = {}
        self._shell()

    def _mesh(self, key: str, mesh: Mesh) -> str:
        ref = f"meshes/{self.name}_{key}.obj"
        self.meshes[ref] = mesh
        return ref

    def _shell(self):
        floor = self._mesh("floor", shapes.box((500.0, 500.0, 10.0)))
        self._emit("floor", "floor", "large", floor, (0.0, 0.0, -10.0), 0.0, [], True)
        wall_x = self._mesh("wall_x", shapes.box((522.0, 10.0, 260.0)))
        wall_y = self._mesh("wall_y", shapes.box((10.0, 500.0, 260.0)))
        self._emit("wall_back", "wall", "large", wall_x, (0.0, 256.0, -10.0), 0.0, [], True)
        self._emit("wall_left", "wall", "large", wall_y, (-256.0, 0.0, -10.0), 0.0, [], True)

    def _emit(self, oid, cls, size, ref, xyz, yaw_deg, allowed, structural=False):
        half = math.radians(yaw_deg) / 2.0
        item = {"id": oid, "class": cls, "size_category": size, "mesh": ref,
                "pose": {"translation": [float(v) for v in xyz],
                         "rotation": [math.cos(half), 0.0, 0.0, math.sin(half)],
                         "scale": [1.0, 1.0, 1.0]},
                "allowed_transforms": allowed}
        if structural:
            item["structural"] = True
        self.objects.append(item)

    def add(self, oid: str, cls: str, size: str, mesh_key: str, mesh: Mesh, xy, yaw: float = 0.0,
            on: Optional[str] = None, allowed: Optional[List[str]] = None, surface: Optional[float] = None):
        """Place an object at ``xy`` on the floor or on ``on``. ``surface`` is
        the supporting height above the supporter's base when that is not
        its top (a sofa seat below the backrest)."""
        if on and surface is not None:
            z = self.bases[on] + surface + GAP
        else:
            z = (self.tops[on] if on else 0.0) + GAP
        ref = self._mesh(mesh_key, mesh)
        self._emit(oid, cls, size, ref, (xy[0], xy[1], z), yaw,
                   allowed_for(cls) if allowed is None else allowed)
        self.bases[oid] = z
        self.tops[oid] = z + float(mesh.vertices[:, 2].max())
        if on:
            self.deps.append([on, oid])
        return oid

    def write(self, out_dir: Path) -> Path:
        out_dir = Path(out_dir)
        for ref, mesh in self.meshes.items():
            write_obj(out_dir / ref, mesh.vertices, mesh.triangles)
        doc = {"schema_version": 1, "name": self.name, "units": "cm", "up_axis": "+Z",
               "objects": self.objects, "dependencies": self.deps}
        path = out_dir / f"{self.name}.json"
        path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        return path


def dining_room() -> RoomBuilder:
    r = RoomBuilder("dining_room")
    r.add("table", "table", "large", "table", shapes.table(160.0, 90.0, 75.0), (0.0, 0.0))
    chair = shapes.chair()
    r.add("chair_1", "chair", "medium", "chair", chair, (-45.0, -82.0))
    r.add("chair_2", "chair", "medium", "chair", chair, (45.0, -82.0))
    r.add("chair_3", "chair", "medium", "chair", chair, (-45.0, 82.0), yaw=180.0)
    r.add("chair_4", "chair", "medium", "chair", chair, (45.0, 82.0), yaw=180.0)
    plate = shapes.cylinder(12.0, 2.0, sides=10)
    r.add("plate_1", "plate", "small", "plate", plate, (-40.0, -20.0), on="table")
    r.add("plate_2", "plate", "small", "plate", plate, (40.0, 20.0), on="table")
    r.add("fork", "fork", "small", "fork", shapes.box((18.0, 2.5, 1.0)), (-40.0, -20.0), on="plate_1")
    r.add("cup", "cup", "small", "cup", shapes.cylinder(4.0, 10.0), (0.0, 10.0), on="table")
    r.add("bowl", "bowl", "small", "bowl", shapes.cylinder(9.0, 7.0, sides=10), (62.0, -25.0), on="table")
    r.add("sideboard", "sideboard", "large", "sideboard", shapes.box((150.0, 45.0, 80.0)), (0.0, 205.0))
    r.add("vase", "vase", "small", "vase", shapes.cylinder(6.0, 25.0), (40.0, 205.0), on="sideboard")
    r.add("lamp", "lamp", "medium", "lamp", shapes.lamp(), (-40.0, 205.0), on="sideboard")
    r.add("plant", "plant", "medium", "plant", shapes.cylinder(20.0, 80.0), (-200.0, -190.0))
    return r


def office() -> RoomBuilder:
    r = RoomBuilder("office")
    r.add("desk", "desk", "large", "desk", shapes.table(140.0, 70.0, 75.0), (0.0, 150.0))
    r.add("monitor", "monitor", "medium", "monitor", shapes.monitor(), (0.0, 165.0), yaw=180.0, on="desk")
    r.add("keyboard", "keyboard", "small", "keyboard", shapes.box((45.0, 15.0, 3.0)), (0.0, 132.0), on="desk")
    r.add("mouse", "mouse", "small", "mouse", shapes.box((6.0, 10.0, 3.5)), (35.0, 132.0), on="desk")
    r.add("mug", "mug", "small", "mug", shapes.cylinder(4.5, 10.0), (-50.0, 140.0), on="desk")
    r.add("office_chair", "chair", "medium", "chair", shapes.chair(), (0.0, 80.0))
    r.add("bookshelf", "bookshelf", "large", "bookshelf", shapes.box((90.0, 35.0, 180.0)), (-200.0, 0.0), yaw=90.0)
    book = shapes.box((22.0, 16.0, 4.0))
    r.add("book_1", "book", "small", "book", book, (-200.0, -20.0), on="bookshelf")
    r.add("book_2", "book", "small", "book", book, (-200.0, 20.0), on="bookshelf")
    r.add("trash_bin", "trash_bin", "medium", "trash_bin", shapes.cylinder(15.0, 35.0), (90.0, 90.0))
    r.add("side_table", "side_table", "medium", "side_table", shapes.table(50.0, 50.0, 55.0), (150.0, -100.0))
    r.add("lamp", "lamp", "medium", "lamp", shapes.lamp(), (150.0, -100.0), on="side_table")
    r.add("plant", "plant", "medium", "plant", shapes.cylinder(20.0, 80.0), (200.0, 200.0))
    return r


def bedroom() -> RoomBuilder:
    r = RoomBuilder("bedroom")
    r.add("bed", "bed", "large", "bed", shapes.box((160.0, 200.0, 50.0)), (0.0, 140.0))
    pillow = shapes.box((50.0, 30.0, 12.0))
    r.add("pillow_1", "pillow", "small", "pillow", pillow, (-40.0, 215.0), on="bed")
    r.add("pillow_2", "pillow", "small", "pillow", pillow, (40.0, 215.0), on="bed")
    stand = shapes.box((45.0, 40.0, 55.0))
    r.add("nightstand_1", "nightstand", "medium", "nightstand", stand, (-125.0, 220.0))
    r.add("nightstand_2", "nightstand", "medium", "nightstand", stand, (125.0, 220.0))
    r.add("lamp", "lamp", "medium", "lamp", shapes.lamp(), (-125.0, 220.0), on="nightstand_1")
    r.add("book", "book", "small", "book", shapes.box((22.0, 16.0, 4.0)), (118.0, 215.0), on="nightstand_2")
    r.add("clock", "clock", "small", "clock", shapes.box((12.0, 6.0, 8.0)), (135.0, 228.0), on="nightstand_2")
    r.add("wardrobe", "wardrobe", "large", "wardrobe", shapes.box((120.0, 60.0, 200.0)), (-180.0, -150.0), yaw=90.0)
    r.add("chair", "chair", "medium", "chair", shapes.chair(), (150.0, -100.0), yaw=90.0)
    r.add("plant", "plant", "medium", "plant", shapes.cylinder(20.0, 80.0), (200.0, -200.0))
    return r


def living_room() -> RoomBuilder:
    r = RoomBuilder("living_room")
    r.add("sofa", "sofa", "large", "sofa", shapes.sofa(), (0.0, 180.0), yaw=180.0)
    cushion = shapes.box((40.0, 40.0, 12.0))
    r.add("cushion_1", "cushion", "small", "cushion", cushion, (-45.0, 168.0), on="sofa", surface=42.0)
    r.add("cushion_2", "cushion", "small", "cushion", cushion, (45.0, 168.0), on="sofa", surface=42.0)
    r.add("coffee_table", "coffee_table", "large", "coffee_table", shapes.table(110.0, 60.0, 45.0), (0.0, 60.0))
    r.add("mug", "mug", "small", "mug", shapes.cylinder(4.5, 10.0), (-30.0, 60.0), on="coffee_table")
    r.add("remote", "remote", "small", "remote", shapes.box((18.0, 5.0, 2.0)), (10.0, 50.0), on="coffee_table")
    r.add("magazine", "magazine", "small", "magazine", shapes.box((30.0, 22.0, 1.0)), (30.0, 70.0), on="coffee_table")
    r.add("tv_stand", "tv_stand", "large", "tv_stand", shapes.box((140.0, 45.0, 50.0)), (0.0, -200.0))
    r.add("tv", "tv", "medium", "tv", shapes.monitor(100.0, 60.0), (0.0, -200.0), on="tv_stand")
    r.add("armchair", "armchair", "medium", "armchair", shapes.chair(70.0, 70.0, 40.0, 80.0), (-170.0, 40.0), yaw=-90.0)
    r.add("floor_lamp", "floor_lamp", "medium", "floor_lamp", shapes.lamp(15.0, 160.0, 22.0), (190.0, 200.0))
    r.add("side_table", "side_table", "medium", "side_table", shapes.table(45.0, 45.0, 55.0), (170.0, 60.0))
    r.add("vase", "vase", "small", "vase", shapes.cylinder(6.0, 25.0), (170.0, 60.0), on="side_table")
    return r


ROOMS = [dining_room, office, bedroom, living_room]


def write_corpus(out_dir) -> List[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return [room().write(out_dir) for room in ROOMS]


if __name__ == "__main__":
    for p in write_corpus(sys.argv[1] if len(sys.argv) > 1 else "fixtures/scenes"):
        print(p)
