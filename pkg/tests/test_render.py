import math

import numpy as np
import pytest

from plausigen import shapes
from plausigen.camera import CameraSpec
from plausigen.errors import DegenerateCamera
from plausigen.geometry import ScreenBox
from plausigen.render import (
    PlausibilityScore,
    RenderOutput,
    plausibility_score,
    read_id_png,
    render,
    score_boxes,
    write_color_png,
    write_id_png,
)
from plausigen.scene import Pose3

from .conftest import build_scene, open_scene
from .oracles import brute_first_hit

CUBE = shapes.box((10.0, 10.0, 10.0), centered=True)


def pixel_rays(cam, stride):
    """Rays through the centers of every ``stride``-th pixel."""
    right, up, fwd = cam.basis()
    half = cam.image_size / 2
    ys, xs = np.mgrid[0:cam.image_size:stride, 0:cam.image_size:stride]
    d = (cam.focal * fwd + (xs.ravel() + 0.5 - half)[:, None] * right
         - (ys.ravel() + 0.5 - half)[:, None] * up)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return ys.ravel(), xs.ravel(), np.broadcast_to(cam.location, d.shape), d


def ray_agreement(scene, cam, out, stride):
    """Share of sampled non-edge pixels whose id matches the first ray hit."""
    ys, xs, origins, dirs = pixel_rays(cam, stride)
    hit_ids, _ = brute_first_hit(scene, origins, dirs)
    ids = out.id_map
    n = cam.image_size
    agree = total = 0
    for y, x, h in zip(ys, xs, hit_ids):
        nb = ids[max(y - 1, 0):min(y + 2, n), max(x - 1, 0):min(x + 2, n)]
        if (nb != ids[y, x]).any():
            continue  # silhouette pixels are sensitive to the sampling rule
        total += 1
        expect = 0 if h is None else scene.ids.index(h) + 1
        agree += int(ids[y, x] == expect)
    return agree / total, total


def test_everything_behind_camera_is_background():
    scene = build_scene("s", [("cube", "box", "small", CUBE, Pose3.from_translation([0, -50, 0]))])
    out = render(scene, CameraSpec([0, 0, 0], [0, 10, 0], 50.0, 64))
    assert not out.id_map.any() and not out.color_image.any()
    assert out.per_object["cube"].box is None and out.per_object["cube"].pixel_count == 0
    assert float(plausibility_score(out, ["cube"])) == 1.0


def test_cube_box_matches_projection():
    scene = build_scene("s", [("cube", "box", "small", CUBE, Pose3())])
    cam = CameraSpec([0, -40, 0], [0, 0, 0], 50.0, 128)
    out = render(scene, cam)
    # the near face at y=-5 spans the silhouette of an axis-aligned cube
    f, half = cam.focal, 64
    edge = half + f * 5 / 35
    lo, hi = math.ceil(2 * half - edge - 0.5), math.floor(edge - 0.5) + 1
    assert out.per_object["cube"].box == ScreenBox(lo, lo, hi, hi)
    ys, xs = np.nonzero(out.id_map)
    assert out.per_object["cube"].box.as_list() == [xs.min(), ys.min(), xs.max() + 1, ys.max() + 1]
    assert out.per_object["cube"].pixel_count == (hi - lo) ** 2
    assert out.per_object["cube"].visible_fraction == 1.0


@pytest.mark.parametrize("frame", range(4))
def test_id_map_matches_ray_oracle(frame):
    scene = open_scene()
    rng = np.random.default_rng(frame)
    loc = np.array([rng.uniform(-150, 150), rng.uniform(-250, -150), rng.uniform(5, 200)])
    cam = CameraSpec(loc, [rng.uniform(-40, 40), rng.uniform(-30, 30), 10.0], 50.0, 128)
    share, total = ray_agreement(scene, cam, render(scene, cam), 4)
    assert total > 500 and share >= 0.99


def test_near_clipping_over_floor():
    # camera a hair above the floor: floor triangles pass behind it
    scene = open_scene()
    cam = CameraSpec([0, -100, 2.0], [0, 0, 2.0], 50.0, 64)
    out = render(scene, cam)
    assert (out.id_map[-1] == 1).all()  # floor fills the bottom row
    share, _ = ray_agreement(scene, cam, out, 2)
    assert share >= 0.99


def test_occlusion_and_alone_counts():
    scene = build_scene("s", [("front", "box", "small", CUBE, Pose3.from_translation([3, -10, 0])),
                              ("back", "box", "small", CUBE, Pose3.from_translation([0, 10, 0]))])
    out = render(scene, CameraSpec([0, -60, 0], [0, 0, 0], 50.0, 96))
    back = out.per_object["back"]
    assert out.per_object["front"].visible_fraction == 1.0
    assert 0.0 < back.visible_fraction < 1.0
    assert back.pixel_count == int((out.id_map == 2).sum())


def test_coincident_objects_go_to_lower_index():
    scene = build_scene("s", [("a", "box", "small", CUBE, Pose3()), ("b", "box", "small", CUBE, Pose3())])
    out = render(scene, CameraSpec([0, -40, 0], [0, 0, 0], 50.0, 64))
    assert set(np.unique(out.id_map)) == {0, 1}
    assert out.per_object["b"].visible_fraction == 0.0


def test_color_matches_id_map():
    scene = open_scene()
    out = render(scene, CameraSpec([0, -200, 150], [0, 0, 0], 50.0, 96))
    bg = out.id_map == 0
    assert not out.color_image[bg].any()
    assert (out.color_image[~bg].max(axis=1) > 0).all()
    # all blocks share a class: one shade per visible face orientation
    tops = out.color_image[out.id_map >= 2]
    assert len(np.unique(tops, axis=0)) <= 3


def test_render_is_deterministic():
    scene = open_scene()
    cam = CameraSpec([30, -180, 120], [0, 0, 0], 50.0, 96)
    a, b = render(scene, cam), render(scene, cam)
    assert a.color_image.tobytes() == b.color_image.tobytes()
    assert a.id_map.tobytes() == b.id_map.tobytes()


def test_degenerate_camera():
    with pytest.raises(DegenerateCamera):
        render(open_scene(), CameraSpec([0, 0, 0], [0, 0, 0]))


def test_png_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    ids = rng.integers(0, 70000, (16, 16)).clip(0, 65535).astype(np.uint16)
    color = rng.integers(0, 256, (16, 16, 3)).astype(np.uint8)
    out = RenderOutput(color, ids)
    write_id_png(out, tmp_path / "id.png")
    write_color_png(out, tmp_path / "img.png")
    assert np.array_equal(read_id_png(tmp_path / "id.png"), ids)
    from PIL import Image
    with Image.open(tmp_path / "img.png") as im:
        assert np.array_equal(np.array(im), color)


# ----------------------------------------------------------------- score

def test_score_examples():
    assert float(score_boxes([], 100)) == 1.0
    assert float(score_boxes([ScreenBox(0, 0, 10, 10), ScreenBox(5, 5, 15, 15)], 100)) == pytest.approx(0.9825)
    assert float(score_boxes([ScreenBox(0, 0, 100, 100)], 100)) == 0.0
    with pytest.raises(ValueError):
        PlausibilityScore(1.5)


def test_score_from_render_is_monotone():
    scene = open_scene()
    out = render(scene, CameraSpec([0, -200, 150], [0, 0, 0], 50.0, 96))
    blocks = [f"block_{k}" for k in range(6)]
    scores = [float(plausibility_score(out, blocks[:k])) for k in range(7)]
    assert scores[0] == 1.0
    assert all(b <= a for a, b in zip(scores, scores[1:]))
    assert float(plausibility_score(out, blocks + blocks)) == scores[-1]
    with pytest.raises(KeyError):
        plausibility_score(out, ["ghost"])
