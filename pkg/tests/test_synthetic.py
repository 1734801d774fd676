import math
import os

import numpy as np
import pytest

from osi.geometry import Pose
from osi.synthetic import (
    GenerateConfig,
    PointLight,
    SceneSpec,
    box_over_floor_scene,
    export_dataset,
    generate_scene,
    psnr,
    ray_trace,
    ssim,
)


# --- independent scalar reimplementations used as metric oracles ---

def psnr_loop(a, b, peak=1.0):
    a = np.asarray(a).reshape(-1)
    b = np.asarray(b).reshape(-1)
    acc = 0.0
    for x, y in zip(a, b):
        acc += (x - y) ** 2
    mse = acc / len(a)
    return float("inf") if mse == 0 else 10.0 * math.log10(peak * peak / mse)


def ssim_loop(a, b, peak=1.0):
    half = 5
    x = np.arange(11) - 5.0
    g = np.exp(-(x * x) / (2 * 1.5 * 1.5))
    kernel = np.outer(g, g)
    kernel /= kernel.sum()
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    h, w = a.shape
    vals = []
    for i in range(half, h - half):
        for j in range(half, w - half):
            wa = a[i - half:i + half + 1, j - half:j + half + 1]
            wb = b[i - half:i + half + 1, j - half:j + half + 1]
            mu_a = (wa * kernel).sum()
            mu_b = (wb * kernel).sum()
            va = (wa * wa * kernel).sum() - mu_a ** 2
            vb = (wb * wb * kernel).sum() - mu_b ** 2
            cov = (wa * wb * kernel).sum() - mu_a * mu_b
            vals.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                        / ((mu_a ** 2 + mu_b ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def test_psnr_identical_and_uniform_offset():
    img = np.random.default_rng(0).uniform(0, 1, (16, 16, 3))
    assert psnr(img, img) == float("inf")
    assert ssim(img[..., 0], img[..., 0]) == pytest.approx(1.0)
    shifted = np.clip(img + 1.0 / 255.0, 0, 2)  # keep the offset exactly uniform
    assert psnr(img, shifted) == pytest.approx(20 * math.log10(255.0), abs=1e-9)


def test_metrics_match_scalar_reimplementation():
    rng = np.random.default_rng(11)
    for _ in range(5):
        a = rng.uniform(0, 1, (20, 20))
        b = np.clip(a + rng.normal(0, 0.08, a.shape), 0, 1)
        assert psnr(a, b) == pytest.approx(psnr_loop(a, b), abs=1e-9)
        assert ssim(a, b) == pytest.approx(ssim_loop(a, b), abs=1e-9)


def test_generate_scene_deterministic(tmp_path):
    a = generate_scene(5)
    b = generate_scene(5)
    assert a.to_json() == b.to_json()
    export_dataset(a, tmp_path / "da", write_gt=False)
    export_dataset(b, tmp_path / "db", write_gt=False)
    for sub in ("images", "masks"):
        for name in sorted(os.listdir(tmp_path / "da" / sub)):
            pa = (tmp_path / "da" / sub / name).read_bytes()
            pb = (tmp_path / "db" / sub / name).read_bytes()
            assert pa == pb, f"{sub}/{name} differs between identical seeds"


@pytest.mark.parametrize("count", [1, 2, 3, 4])
def test_object_count_honored(count):
    scene = generate_scene(3, GenerateConfig(n_objects=count, n_views=2))
    assert len(scene.objects) == count


def test_exported_boxes_contain_object_surfaces():
    scene = generate_scene(9, GenerateConfig(n_objects=4, n_views=1))
    rng = np.random.default_rng(0)
    for prim in scene.objects:
        box = prim.bounding_obb()
        if prim.kind == "sphere":
            d = rng.normal(size=(10_000, 3))
            d /= np.linalg.norm(d, axis=1, keepdims=True)
            pts = prim.center + prim.radius * d
        else:
            # random points on the box faces
            u = rng.uniform(-1, 1, (10_000, 3))
            axis = rng.integers(0, 3, 10_000)
            sign = rng.choice([-1.0, 1.0], 10_000)
            u[np.arange(10_000), axis] = sign
            pts = prim.box.center + (u * prim.box.half_extents) @ prim.box.rotation.T
        inside = box.contains(pts * (1 - 1e-12) + box.center * 1e-12)
        assert inside.all()


def test_shading_anchor_head_on_wall():
    # camera at room center looking at the +x wall, light on the ray so n.l = 1
    scene = box_over_floor_scene(width=16, height=16)
    scene = SceneSpec(
        scene.room_lo, scene.room_hi, scene.wall_albedos, [],  # no objects
        PointLight([1.0, 1.2, 0.0], 1.0), 0.2, scene.intrinsics,
        [Pose.look_at([0.0, 1.2, 0.0], [2.0, 1.2, 0.0])], near=0.05, far=7.0)
    view = ray_trace(scene, scene.intrinsics, scene.poses[0])
    cy, cx = scene.intrinsics.height // 2, scene.intrinsics.width // 2
    assert view.shading[cy, cx] == pytest.approx(1.0)  # 0.2 + 0.8 * 1 * cos(0)


def test_shadowed_floor_point_is_ambient_and_masked():
    scene = box_over_floor_scene(width=48, height=48)
    view = ray_trace(scene, scene.intrinsics, scene.poses[0])
    assert view.shadow.any(), "expected a cast shadow in the test view"
    shadow_px = view.shadow & (view.instance == 0)
    assert shadow_px.any()
    assert np.allclose(view.shading[shadow_px], scene.ambient)


def test_color_equals_albedo_times_shading_bit_exact():
    scene = generate_scene(2, GenerateConfig(n_views=1, width=32, height=32))
    view = ray_trace(scene, scene.intrinsics, scene.poses[0])
    assert np.array_equal(view.color, view.albedo * view.shading[..., None])


def test_depth_positive_and_instances_labeled():
    scene = generate_scene(4, GenerateConfig(n_objects=3, n_views=1, width=32, height=32))
    view = ray_trace(scene, scene.intrinsics, scene.poses[0])
    assert np.all(view.depth > 0)
    seen = set(np.unique(view.instance)) - {0}
    assert seen, "expected at least one object visible"
    for oid in seen:
        assert 1 <= oid <= len(scene.objects)


def test_scene_json_roundtrip():
    scene = generate_scene(6, GenerateConfig(n_objects=2, n_views=3))
    doc = scene.to_json()
    back = SceneSpec.from_json(doc)
    assert back.to_json() == doc
