from __future__ import annotations

import time
from pathlib import Path

import numpy as np
import pytest

from plausigen import shapes
from plausigen.scene import (
    DependencyTree,
    ImplausibilityType,
    Pose3,
    Scene,
    SceneObject,
    SizeCategory,
    load_scene,
)

ROOT = Path(__file__).resolve().parents[1]
CORPUS = ROOT / "fixtures" / "scenes"
ROOMS = ["dining_room", "office", "bedroom", "living_room"]
ALL_TYPES = frozenset(ImplausibilityType)


def yaw_pose(xyz, yaw_deg=0.0, scale=1.0):
    a = np.radians(yaw_deg)
    rot = np.array([[np.cos(a), -np.sin(a), 0.0], [np.sin(a), np.cos(a), 0.0], [0.0, 0.0, 1.0]])
    return Pose3(np.asarray(xyz, float), rot, np.full(3, float(scale)))


def build_scene(name, items, deps=(), meshes=None):
    """items: (id, class, size, mesh, pose[, allowed[, structural]])."""
    objects, mesh_map = [], dict(meshes or {})
    for item in items:
        oid, cls, size, mesh, pose = item[:5]
        allowed = item[5] if len(item) > 5 else ALL_TYPES
        structural = item[6] if len(item) > 6 else False
        ref = f"{oid}.obj"
        mesh_map[ref] = mesh
        objects.append(SceneObject(oid, cls, SizeCategory(size), ref, pose, frozenset(allowed), structural))
    return Scene(name, objects, mesh_map, DependencyTree(deps))


@pytest.fixture(scope="session")
def corpus_dir():
    return CORPUS


@pytest.fixture(scope="session")
def rooms():
    return {r: load_scene(CORPUS / f"{r}.json") for r in ROOMS}


@pytest.fixture
def room(rooms):
    """Fresh clones so tests may mutate freely."""
    return {k: v.clone() for k, v in rooms.items()}


def open_scene():
    """A slab floor and six spread-out blocks, nothing in the way of an overhead view."""
    items = [("floor", "floor", "large", shapes.box((400.0, 400.0, 10.0)), yaw_pose((0, 0, -10)), (), True)]
    spots = [(-60, -40), (0, -40), (60, -40), (-60, 40), (0, 40), (60, 40)]
    for k, (x, y) in enumerate(spots):
        items.append((f"block_{k}", "block", "medium", shapes.box((20.0, 20.0, 20.0)), yaw_pose((x, y, 5e-4))))
    return build_scene("open", items)


def caged_scene():
    """A block under a closed opaque box: nothing inside is visible from outside."""
    scene = open_scene()
    cage = shapes.box((80.0, 80.0, 130.0))
    items = [(o.id, o.class_label, o.size_category.value, scene.meshes[o.mesh_ref], o.pose,
              o.allowed_transforms, o.structural) for o in scene.objects]
    items.append(("cage", "cage", "large", cage, yaw_pose((-60, -40, -5.0)), (), True))
    return build_scene("caged", items)


@pytest.fixture(scope="session")
def generated(tmp_path_factory):
    """One full generation run over the corpus, shared by the slower tests."""
    from plausigen.dataset import run_generation

    out = tmp_path_factory.mktemp("corpus_run")
    start = time.perf_counter()
    manifest, results = run_generation(sorted(CORPUS.glob("*.json")), out, list(ImplausibilityType),
                                       per_scene=1, master_seed=0, workers=1)
    GENERATION_SECONDS.append(time.perf_counter() - start)
    return out, manifest, results


# acceptance bookkeeping: one line per criterion in the terminal summary

ACCEPTANCE_LINES = {}
GENERATION_SECONDS = []


class _Criterion:
    def __init__(self, number, title):
        self.number, self.title, self.detail = number, title, ""

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        status = "PASS" if exc_type is None else "FAIL"
        note = self.detail if exc_type is None else f"{self.detail} {exc_type.__name__}: {exc}".strip()
        ACCEPTANCE_LINES[self.number] = f"[{status}] {self.number}. {self.title} ({elapsed:.1f} s) {note}".rstrip()
        return False


@pytest.fixture
def criterion():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number].splitlines()[0][:400])
