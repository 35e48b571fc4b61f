"""Dataset orchestration: camera sequences, scene splits, manifests and stats."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import jsonschema
import numpy as np

from .camera import CameraSpec, ViewEvaluator, find_camera
from .config import DEFAULT_CONFIG, Config
from .errors import (
    CorruptMetadata,
    GenerationFailed,
    InsufficientScenes,
    PlausigenError,
    TransformFailed,
)
from .geometry import ScreenBox
from .perturb import (
    SelectionState,
    TransformRecord,
    candidate_weights,
    commit_transform,
    find_transformation,
    select_objects,
)
from .render import (
    RenderOutput,
    plausibility_score,
    render,
    score_boxes,
    write_color_png,
    write_id_png,
)
from .scene import ImplausibilityType, Scene, SizeCategory, load_schema, load_scene

logger = logging.getLogger(__name__)

METADATA_SCHEMA = load_schema("metadata.schema.json")
MANIFEST_SCHEMA = load_schema("manifest.schema.json")
WORKERS_ENV = "PLAUSIGEN_WORKERS"
MAX_TRANSFORMS = 5


def derive_seed(master_seed: int, scene_name: str, t: ImplausibilityType, camera_index: int) -> int:
    """Stable 64-bit seed for one (scene, type, camera) sequence."""
    key = f"{int(master_seed)}\x1f{scene_name}\x1f{ImplausibilityType(t).value}\x1f{int(camera_index)}"
    return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "big")


@dataclass
class ImageMetadata:
    scene_name: str
    camera: CameraSpec
    implausibility_type: Optional[ImplausibilityType]
    transforms: List[TransformRecord]
    objects: List[Dict[str, Any]]
    plausibility_score: float
    seed: int
    camera_index: int = 0
    sequence_index: int = 0
    image: str = ""
    id_map: str = ""

    def __post_init__(self):
        if len(self.transforms) > MAX_TRANSFORMS:
            raise ValueError("at most five transforms per image")
        if (not self.transforms) != (self.implausibility_type is None):
            raise ValueError("implausibility_type is set exactly when transforms are present")

    @property
    def transform_count(self) -> int:
        return len(self.transforms)

    def to_json(self) -> dict:
        doc = {"schema_version": 1, "scene_name": self.scene_name, "camera": self.camera.to_json(),
               "camera_index": self.camera_index, "sequence_index": self.sequence_index,
               "transform_count": self.transform_count,
               "transforms": [r.to_json() for r in self.transforms],
               "objects": self.objects, "plausibility_score": float(self.plausibility_score),
               "seed": int(self.seed), "image": self.image, "id_map": self.id_map}
        if self.implausibility_type is not None:
            doc["implausibility_type"] = self.implausibility_type.value
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "ImageMetadata":
        validate_metadata(doc)
        t = doc.get("implausibility_type")
        return cls(doc["scene_name"], CameraSpec.from_json(doc["camera"]),
                   ImplausibilityType(t) if t else None,
                   [TransformRecord.from_json(r) for r in doc["transforms"]],
                   doc["objects"], doc["plausibility_score"], doc["seed"],
                   doc["camera_index"], doc["sequence_index"], doc["image"], doc["id_map"])


def validate_metadata(doc: dict) -> None:
    try:
        jsonschema.validate(doc, METADATA_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise CorruptMetadata(f"metadata fails schema: {exc.message}") from exc
    if doc["transform_count"] != len(doc["transforms"]):
        raise CorruptMetadata("transform_count disagrees with transforms")
    if (doc["transform_count"] == 0) != ("implausibility_type" not in doc):
        raise CorruptMetadata("implausibility_type must be present exactly when transforms are")
    ids = [r["object_id"] for r in doc["transforms"]]
    if len(set(ids)) != len(ids):
        raise CorruptMetadata("transformed object ids must be distinct")


def _object_entries(scene: Scene, output: RenderOutput) -> List[Dict[str, Any]]:
    out = []
    for idx, obj in enumerate(scene.objects, start=1):
        view = output.per_object[obj.id]
        out.append({"id": obj.id, "index": idx, "class_label": obj.class_label,
                    "size_category": obj.size_category.value,
                    "box": view.box.as_list() if view.box else None,
                    "pixel_count": view.pixel_count,
                    "visible_fraction": float(view.visible_fraction)})
    return out


def score_from_metadata(doc: dict) -> float:
    """Recompute an image's plausibility score from its stored boxes."""
    validate_metadata(doc)
    boxes_by_id = {o["id"]: o["box"] for o in doc["objects"]}
    boxes = []
    for rec in doc["transforms"]:
        if rec["object_id"] not in boxes_by_id:
            raise CorruptMetadata(f"transformed object {rec['object_id']!r} missing from objects")
        box = boxes_by_id[rec["object_id"]]
        if box is not None:
            boxes.append(ScreenBox(*box))
    return score_boxes(boxes, doc["camera"]["image_size"]).value


# ---------------------------------------------------------------- sequences

def find_implausible_transforms(scene: Scene, t: ImplausibilityType, rng: np.random.Generator,
                                state: SelectionState, config: Config = DEFAULT_CONFIG
                                ) -> Tuple[Optional[CameraSpec], List[TransformRecord]]:
    """Accumulate up to five camera-validated transforms of type ``t``.

    Returns the camera found for the last accepted transform (it validates
    every accepted one) and the accepted records in order.
    """
    t = ImplausibilityType(t)
    objects, weights = candidate_weights(scene, t, state, config.n_c)
    ordered = select_objects(objects, weights, len(objects), state, rng)
    work = scene.clone()
    camera: Optional[CameraSpec] = None
    accepted: List[TransformRecord] = []
    for oid in ordered:
        if any(r.object_id == oid for r in accepted):
            continue
        try:
            record = find_transformation(work, t, oid, rng, config)
        except TransformFailed as exc:
            logger.debug("%s/%s: %s", scene.name, oid, exc)
            continue
        trial = work.clone()
        commit_transform(trial, record)
        records = accepted + [record]
        evaluator = ViewEvaluator(trial, records, config)
        found = find_camera(trial, records, rng, config=config, evaluator=evaluator)
        if found is None or not evaluator.visible(found):
            continue
        camera = found
        accepted.append(record)
        work = trial
        state.note_transformed(scene.get(oid).size_category)
        if len(accepted) >= min(config.max_transforms, MAX_TRANSFORMS):
            break
    return camera, accepted


def generate_scene_images(scene: Scene, t: ImplausibilityType, rng: np.random.Generator,
                          state: Optional[SelectionState] = None, config: Config = DEFAULT_CONFIG,
                          seed: int = 0, camera_index: int = 0) -> List[Tuple[RenderOutput, ImageMetadata]]:
    """One plausible render plus one render per accepted transform, all from
    the same camera. The sequence is cut where the score would rise."""
    t = ImplausibilityType(t)
    state = state if state is not None else SelectionState.from_config(config, seed)
    camera, records = find_implausible_transforms(scene, t, rng, state, config)
    if camera is None or not records:
        raise GenerationFailed(f"no camera validates a {t.value} transform in {scene.name!r}")

    frame = scene.clone()
    results: List[Tuple[RenderOutput, ImageMetadata]] = []
    previous = None
    for k in range(len(records) + 1):
        if k:
            commit_transform(frame, records[k - 1])
        output = render(frame, camera, config)
        applied = records[:k]
        score = plausibility_score(output, [r.object_id for r in applied]).value
        if previous is not None and score > previous:
            dropped = records[k - 1:]
            logger.warning("%s/%s camera %d: score rises at image %d; keeping %d transforms",
                           scene.name, t.value, camera_index, k, k - 1)
            for r in dropped:
                state.note_transformed(scene.get(r.object_id).size_category, -1)
            break
        previous = score
        meta = ImageMetadata(scene.name, camera, t if k else None, list(applied),
                             _object_entries(frame, output), score, seed, camera_index, k)
        results.append((output, meta))
    return results


# ------------------------------------------------------------------- splits

def default_split_counts(n: int) -> Tuple[int, int]:
    """Test share mirrors a 55/10 split; at least one test scene when n > 1."""
    if n < 2:
        return n, 0
    test = max(1, round(n * 10 / 65))
    return n - test, test


def split_scenes(scenes: Sequence[str], train_count: int, test_count: int, seed: int) -> Dict[str, List[str]]:
    """Seeded scene-level partition; scenes beyond the two counts stay unassigned."""
    names = sorted(set(scenes))
    if len(names) != len(scenes):
        raise InsufficientScenes("scene names must be unique")
    if train_count < 0 or test_count < 0:
        raise InsufficientScenes("split counts must be nonnegative")
    if train_count + test_count > len(names):
        raise InsufficientScenes(f"{train_count}+{test_count} scenes requested, {len(names)} available")
    order = np.random.default_rng(seed).permutation(len(names))
    picked = [names[i] for i in order]
    return {"train": sorted(picked[:train_count]),
            "test": sorted(picked[train_count:train_count + test_count])}


def split_of(splits: Dict[str, List[str]], scene_name: str) -> str:
    for key in ("train", "test"):
        if scene_name in splits[key]:
            return key
    return "unassigned"


# --------------------------------------------------------------- batch runs

def resolve_types(text: str) -> List[ImplausibilityType]:
    if text == "all":
        return list(ImplausibilityType)
    return [ImplausibilityType.parse(text)]


@dataclass
class SceneJob:
    scene_path: str
    out_dir: str
    types: List[str]
    per_scene: int
    master_seed: int
    config: Dict[str, Any]


@dataclass
class JobResult:
    scene: str
    images: List[Dict[str, Any]] = field(default_factory=list)
    failures: List[Dict[str, Any]] = field(default_factory=list)
    attempted: int = 0


def _write_json(path: Path, doc: Any) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_scene_job(job: SceneJob) -> JobResult:
    """Every (type, camera index) sequence for one scene, written to disk.

    The size-balancing state is shared by all sequences of the scene and
    advanced in a fixed order, so the result does not depend on scheduling.
    """
    config = Config.from_mapping(job.config)
    try:
        scene = load_scene(job.scene_path)
    except PlausigenError as exc:
        name = Path(job.scene_path).stem
        return JobResult(name, [], [{"scene": name, "kind": exc.kind, "message": str(exc)}], 1)
    result = JobResult(scene.name)
    state = SelectionState.from_config(config, job.master_seed)
    out = Path(job.out_dir)
    for tname in job.types:
        t = ImplausibilityType(tname)
        for cam in range(job.per_scene):
            result.attempted += 1
            seed = derive_seed(job.master_seed, scene.name, t, cam)
            rng = np.random.default_rng(seed)
            try:
                sequence = generate_scene_images(scene, t, rng, state, config, seed, cam)
            except PlausigenError as exc:
                logger.info("%s/%s camera %d failed: %s", scene.name, t.value, cam, exc)
                result.failures.append({"scene": scene.name, "type": t.value, "camera_index": cam,
                                        "kind": exc.kind, "message": str(exc)})
                continue
            rel_dir = Path(scene.name) / t.value / str(cam)
            (out / rel_dir).mkdir(parents=True, exist_ok=True)
            for output, meta in sequence:
                k = meta.sequence_index
                meta.image = (rel_dir / f"img_{k}.png").as_posix()
                meta.id_map = (rel_dir / f"id_{k}.png").as_posix()
                meta_rel = (rel_dir / f"img_{k}.json").as_posix()
                write_color_png(output, out / meta.image)
                write_id_png(output, out / meta.id_map)
                doc = meta.to_json()
                validate_metadata(doc)
                _write_json(out / meta_rel, doc)
                result.images.append({"scene": scene.name, "type": t.value, "camera_index": cam,
                                      "sequence_index": k, "image": meta.image,
                                      "id_map": meta.id_map, "metadata": meta_rel})
    return result


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        logger.warning("ignoring non-integer %s=%r", WORKERS_ENV, raw)
        return 1
    return max(1, n)


def run_generation(scene_paths: Sequence[Path], out_dir: Path, types: Sequence[ImplausibilityType],
                   per_scene: int = 1, master_seed: int = 0, config: Config = DEFAULT_CONFIG,
                   train_count: Optional[int] = None, test_count: Optional[int] = None,
                   workers: Optional[int] = None) -> Tuple[dict, List[JobResult]]:
    """Generate every scene in a worker pool and write ``manifest.json``."""
    if per_scene < 1:
        raise ValueError("per_scene must be at least 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [SceneJob(str(p), str(out_dir), [t.value for t in types], per_scene, master_seed, config.as_dict())
            for p in sorted(scene_paths)]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(run_scene_job, jobs))
    else:
        results = [run_scene_job(j) for j in jobs]

    names = [r.scene for r in results]
    if train_count is None and test_count is None:
        train_count, test_count = default_split_counts(len(names))
    elif train_count is None:
        train_count = len(names) - test_count
    elif test_count is None:
        test_count = len(names) - train_count
    splits = split_scenes(names, train_count, test_count, master_seed)
    images, failures = [], []
    for r in sorted(results, key=lambda r: r.scene):
        for img in r.images:
            images.append({**img, "split": split_of(splits, r.scene)})
        failures.extend(r.failures)
    manifest = {"schema_version": 1, "master_seed": int(master_seed), "config": config.as_dict(),
                "splits": splits, "images": images, "failures": failures}
    jsonschema.validate(manifest, MANIFEST_SCHEMA)
    _write_json(out_dir / "manifest.json", manifest)
    return manifest, results


# -------------------------------------------------------------------- stats

def load_manifest(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        jsonschema.validate(doc, MANIFEST_SCHEMA)
    except (OSError, json.JSONDecodeError, jsonschema.ValidationError) as exc:
        raise CorruptMetadata(f"{path}: {exc}") from exc
    overlap = set(doc["splits"]["train"]) & set(doc["splits"]["test"])
    if overlap:
        raise CorruptMetadata(f"scenes in both splits: {sorted(overlap)}")
    return doc


def resplit_manifest(manifest: dict, train_count: int, test_count: int, seed: int) -> dict:
    scenes = sorted({img["scene"] for img in manifest["images"]} | set(manifest["splits"]["train"])
                    | set(manifest["splits"]["test"]))
    splits = split_scenes(scenes, train_count, test_count, seed)
    out = dict(manifest)
    out["splits"] = splits
    out["images"] = [{**img, "split": split_of(splits, img["scene"])} for img in manifest["images"]]
    return out


def dataset_stats(manifest, root=None) -> dict:
    """Image and transform counts recomputed from the metadata files."""
    if not isinstance(manifest, dict):
        root = Path(manifest).parent if root is None else root
        manifest = load_manifest(manifest)
    root = Path(root or ".")
    per_type = {t.value: 0 for t in ImplausibilityType}
    per_scene: Dict[str, int] = {}
    per_split = {"train": 0, "test": 0, "unassigned": 0}
    size_counts = {c.value: 0 for c in SizeCategory}
    label_plausible: Dict[str, int] = {}
    label_implausible: Dict[str, int] = {}
    label_transforms: Dict[str, int] = {}
    plausible = 0
    for entry in manifest["images"]:
        path = root / entry["metadata"]
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CorruptMetadata(f"{path}: {exc}") from exc
        validate_metadata(doc)
        per_scene[doc["scene_name"]] = per_scene.get(doc["scene_name"], 0) + 1
        per_split[entry["split"]] += 1
        seen = {o["class_label"] for o in doc["objects"] if o["pixel_count"] > 0}
        if doc["transform_count"] == 0:
            plausible += 1
            for label in seen:
                label_plausible[label] = label_plausible.get(label, 0) + 1
            continue
        per_type[doc["implausibility_type"]] += 1
        for label in seen:
            label_implausible[label] = label_implausible.get(label, 0) + 1
        # the last image of a sequence carries every transform of that camera
        by_id = {o["id"]: o for o in doc["objects"]}
        newest = doc["transforms"][-1]["object_id"]
        size_counts[by_id[newest]["size_category"]] += 1
        label = by_id[newest]["class_label"]
        label_transforms[label] = label_transforms.get(label, 0) + 1

    implausible = sum(per_type.values())
    n_transforms = sum(size_counts.values())
    target = manifest["config"].get("target_distribution", dict(DEFAULT_CONFIG.target_distribution))
    labels = sorted(set(label_plausible) | set(label_implausible) | set(label_transforms))

    def share(num, den):
        return num / den if den else 0.0

    return {
        "images": plausible + implausible,
        "plausible": plausible,
        "implausible": implausible,
        "per_type": per_type,
        "per_split": per_split,
        "per_scene": dict(sorted(per_scene.items())),
        "size_categories": {c: {"count": size_counts[c], "share": share(size_counts[c], n_transforms),
                                "target": float(target[c])} for c in size_counts},
        "class_labels": {label: {"plausible_pct": 100 * share(label_plausible.get(label, 0), plausible),
                                 "implausible_pct": 100 * share(label_implausible.get(label, 0), implausible),
                                 "transformations_pct": 100 * share(label_transforms.get(label, 0), n_transforms)}
                         for label in labels},
    }
