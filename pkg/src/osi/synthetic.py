"""Procedural room scenes and an analytic lambertian ray-tracing oracle.

The oracle renders exact ground-truth layers (color, albedo, shading, depth,
instance ids, hard-shadow mask) for verification; by construction
color = albedo * shading with zero residual, and
shading = ambient + (1 - ambient) * visibility * max(0, n . l).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import dataset as ds
from .geometry import CameraIntrinsics, Obb, Pose, ray_box_intersection_batch, ray_grid

_EPS = 1e-9
_SHADOW_EPS = 1e-6


@dataclass(frozen=True)
class PointLight:
    position: np.ndarray
    power: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64).reshape(3))
        if not np.all(np.isfinite(self.position)):
            raise ValueError("light position must be finite")


@dataclass(frozen=True)
class Primitive:
    """Lambertian scene object: an oriented box or a sphere."""

    kind: str              # "box" | "sphere"
    albedo: np.ndarray     # flat RGB in [0,1]
    box: Obb | None = None
    center: np.ndarray | None = None
    radius: float = 0.0
    editable: bool = True

    def __post_init__(self):
        object.__setattr__(self, "albedo", np.asarray(self.albedo, dtype=np.float64).reshape(3))
        if self.kind not in ("box", "sphere"):
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        if self.kind == "sphere":
            object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))
            if self.radius <= 0:
                raise ValueError("sphere radius must be positive")

    def bounding_obb(self) -> Obb:
        """Tight oriented-box label for this primitive."""
        if self.kind == "box":
            return self.box
        return Obb(self.center, np.full(3, self.radius), np.eye(3))

    def transformed(self, xf) -> "Primitive":
        if self.kind == "box":
            return replace(self, box=xf.apply_obb(self.box))
        return replace(self, center=xf.apply_points(self.center))


@dataclass
class SceneSpec:
    room_lo: np.ndarray
    room_hi: np.ndarray
    wall_albedos: np.ndarray        # 6 RGB rows: x-,x+,y-(floor),y+(ceiling),z-,z+
    objects: list                   # Primitive, ids are 1-based list order
    light: PointLight
    ambient: float
    intrinsics: CameraIntrinsics
    poses: list
    near: float = 0.05
    far: float = 12.0
    seed: int = 0

    def __post_init__(self):
        self.room_lo = np.asarray(self.room_lo, dtype=np.float64).reshape(3)
        self.room_hi = np.asarray(self.room_hi, dtype=np.float64).reshape(3)
        self.wall_albedos = np.asarray(self.wall_albedos, dtype=np.float64).reshape(6, 3)
        if not (0 <= self.ambient <= 1):
            raise ValueError("ambient must be in [0,1]")

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.room_hi - self.room_lo))

    def to_json(self) -> dict:
        objs = []
        for p in self.objects:
            rec = {"kind": p.kind, "albedo": p.albedo.tolist(), "editable": p.editable}
            if p.kind == "box":
                rec["box"] = ds.obb_to_json(p.box)
            else:
                rec["center"] = p.center.tolist()
                rec["radius"] = p.radius
            objs.append(rec)
        return {
            "room_lo": self.room_lo.tolist(), "room_hi": self.room_hi.tolist(),
            "wall_albedos": self.wall_albedos.tolist(), "objects": objs,
            "light": {"position": self.light.position.tolist(), "power": self.light.power},
            "ambient": self.ambient,
            "intrinsics": ds.intrinsics_to_json(self.intrinsics),
            "poses": [p.to_matrix().reshape(-1).tolist() for p in self.poses],
            "near": self.near, "far": self.far, "seed": self.seed,
        }

    @staticmethod
    def from_json(doc) -> "SceneSpec":
        objs = []
        for rec in doc["objects"]:
            if rec["kind"] == "box":
                objs.append(Primitive("box", rec["albedo"], box=ds.obb_from_json(rec["box"]),
                                      editable=rec.get("editable", True)))
            else:
                objs.append(Primitive("sphere", rec["albedo"], center=rec["center"],
                                      radius=rec["radius"], editable=rec.get("editable", True)))
        return SceneSpec(
            doc["room_lo"], doc["room_hi"], doc["wall_albedos"], objs,
            PointLight(doc["light"]["position"], doc["light"].get("power", 1.0)),
            doc["ambient"], ds.intrinsics_from_json(doc["intrinsics"]),
            [Pose.from_matrix(np.asarray(m).reshape(4, 4)) for m in doc["poses"]],
            near=doc.get("near", 0.05), far=doc.get("far", 12.0), seed=doc.get("seed", 0),
        )


@dataclass
class GroundTruthView:
    color: np.ndarray      # (H, W, 3)
    albedo: np.ndarray     # (H, W, 3)
    shading: np.ndarray    # (H, W)
    depth: np.ndarray      # (H, W)
    instance: np.ndarray   # (H, W) int, 0 = room
    shadow: np.ndarray     # (H, W) bool

    def mask(self, object_id: int) -> np.ndarray:
        return self.instance == object_id


@dataclass
class GenerateConfig:
    n_objects: int = 2
    n_views: int = 20
    width: int = 64
    height: int = 64
    fov_deg: float = 70.0
    room_half_width: float = 2.0
    room_height: float = 2.4
    ambient: float = 0.2
    holdout_every: int = 10
    sphere_fraction: float = 0.35
    max_placement_retries: int = 200


# --- intersection kernels (vectorized over N rays) ---

def _hit_room_inside(origins, dirs, lo, hi):
    """Exit point of rays starting inside an AABB; returns (t, normal, wall_id)."""
    with np.errstate(divide="ignore"):
        inv = np.where(np.abs(dirs) < 1e-300, 1e300, 1.0 / dirs)
    t0 = (lo - origins) * inv
    t1 = (hi - origins) * inv
    thi = np.maximum(t0, t1)
    t_exit = thi.min(axis=-1)
    axis = thi.argmin(axis=-1)
    side = np.take_along_axis(dirs, axis[:, None], axis=1)[:, 0] > 0  # True -> hi face
    normals = np.zeros_like(origins)
    normals[np.arange(len(axis)), axis] = np.where(side, -1.0, 1.0)  # inward
    wall_id = axis * 2 + side.astype(np.int64)  # 0:x-,1:x+,2:y-,3:y+,4:z-,5:z+
    return t_exit, normals, wall_id


def _hit_sphere(origins, dirs, center, radius):
    oc = origins - center
    b = np.sum(oc * dirs, axis=-1)
    c = np.sum(oc * oc, axis=-1) - radius * radius
    disc = b * b - c
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t_small = -b - sq
    t_big = -b + sq
    t = np.where(t_small > _EPS, t_small, t_big)
    ok &= t > _EPS
    return ok, np.where(ok, t, np.inf)


def _hit_box(origins, dirs, box: Obb):
    hit, te, tx = ray_box_intersection_batch(origins, dirs, box, _EPS, np.inf)
    t = np.where(te > _EPS, te, tx)  # origin inside the box -> exit face
    ok = hit & (t > _EPS)
    return ok, np.where(ok, t, np.inf)


def _box_normal(points, box: Obb):
    local = (points - box.center) @ box.rotation
    rel = np.abs(local) / box.half_extents
    axis = rel.argmax(axis=-1)
    sign = np.sign(np.take_along_axis(local, axis[:, None], axis=1)[:, 0])
    n_local = np.zeros_like(points)
    n_local[np.arange(len(axis)), axis] = np.where(sign == 0, 1.0, sign)
    return n_local @ box.rotation.T


def _trace_rays(scene: SceneSpec, origins, dirs):
    """Nearest-hit trace; returns t, normals, albedo, instance ids."""
    n = len(origins)
    t_room, n_room, wall_id = _hit_room_inside(origins, dirs, scene.room_lo, scene.room_hi)
    best_t = t_room
    instance = np.zeros(n, dtype=np.int64)
    normals = n_room
    albedo = scene.wall_albedos[wall_id]

    for oid, prim in enumerate(scene.objects, start=1):
        if prim.kind == "sphere":
            ok, t = _hit_sphere(origins, dirs, prim.center, prim.radius)
        else:
            ok, t = _hit_box(origins, dirs, prim.box)
        closer = ok & (t < best_t)
        if not closer.any():
            continue
        pts = origins[closer] + t[closer, None] * dirs[closer]
        if prim.kind == "sphere":
            nrm = (pts - prim.center) / prim.radius
        else:
            nrm = _box_normal(pts, prim.box)
        best_t = np.where(closer, t, best_t)
        instance[closer] = oid
        normals[closer] = nrm
        albedo[closer] = prim.albedo
    return best_t, normals, albedo, instance


def _light_blocked(scene: SceneSpec, points):
    """True where the shadow ray from point to the light hits any object."""
    to_light = scene.light.position - points
    dist = np.linalg.norm(to_light, axis=-1)
    ldir = to_light / np.maximum(dist, _EPS)[:, None]
    blocked = np.zeros(len(points), dtype=bool)
    for prim in scene.objects:
        if prim.kind == "sphere":
            ok, t = _hit_sphere(points, ldir, prim.center, prim.radius)
        else:
            ok, t = _hit_box(points, ldir, prim.box)
        blocked |= ok & (t > _SHADOW_EPS) & (t < dist - _SHADOW_EPS)
    return blocked, ldir, dist


def ray_trace(scene: SceneSpec, intrinsics: CameraIntrinsics, pose: Pose) -> GroundTruthView:
    """Render exact ground-truth layers for one view."""
    h, w = intrinsics.height, intrinsics.width
    origins, dirs = ray_grid(intrinsics, pose)
    t, normals, albedo, instance = _trace_rays(scene, origins, dirs)

    pts = origins + t[:, None] * dirs
    offset = pts + normals * 1e-6
    blocked, ldir, _ = _light_blocked(scene, offset)
    ndotl = np.maximum(0.0, np.sum(normals * ldir, axis=-1))
    visibility = (~blocked).astype(np.float64)
    shading = scene.ambient + (1.0 - scene.ambient) * visibility * np.minimum(
        1.0, scene.light.power * ndotl)
    color = albedo * shading[:, None]
    shadow = blocked & (ndotl > 0)

    return GroundTruthView(
        color=color.reshape(h, w, 3),
        albedo=albedo.reshape(h, w, 3),
        shading=shading.reshape(h, w),
        depth=t.reshape(h, w),
        instance=instance.reshape(h, w),
        shadow=shadow.reshape(h, w),
    )


def shadow_mask_for_light(scene: SceneSpec, intrinsics: CameraIntrinsics, pose: Pose,
                          light_position) -> np.ndarray:
    """Hard-shadow mask re-traced with the light moved to `light_position`."""
    moved = replace(scene, light=PointLight(light_position, scene.light.power))
    return ray_trace(moved, intrinsics, pose).shadow


# --- procedural generation ---

def generate_scene(seed: int, config: GenerateConfig | None = None) -> SceneSpec:
    cfg = config or GenerateConfig()
    if not (1 <= cfg.n_objects <= 4):
        raise ValueError("n_objects must be in 1..4")
    rng = np.random.default_rng(seed)

    hw = cfg.room_half_width
    room_lo = np.array([-hw, 0.0, -hw])
    room_hi = np.array([hw, cfg.room_height, hw])
    wall_albedos = rng.uniform(0.25, 0.85, (6, 3))

    objects = []
    placed = []  # (center xz, bounding radius)
    for _ in range(cfg.n_objects):
        for attempt in range(cfg.max_placement_retries):
            kind = "sphere" if rng.uniform() < cfg.sphere_fraction else "box"
            albedo = rng.uniform(0.15, 0.9, 3)
            cx, cz = rng.uniform(-0.55 * hw, 0.55 * hw, 2)
            if kind == "sphere":
                radius = rng.uniform(0.18, 0.3)
                bound = radius
                prim = Primitive("sphere", albedo, center=[cx, radius, cz], radius=radius)
            else:
                he = rng.uniform(0.16, 0.32, 3)
                yaw = rng.uniform(0, 2 * np.pi)
                c, s = np.cos(yaw), np.sin(yaw)
                rot = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
                bound = float(np.linalg.norm(he))
                prim = Primitive("box", albedo, box=Obb([cx, he[1], cz], he, rot))
            if all(np.hypot(cx - px, cz - pz) > bound + pb + 0.08 for px, pz, pb in placed):
                objects.append(prim)
                placed.append((cx, cz, bound))
                break
        else:
            raise RuntimeError("could not place objects without overlap")

    light = PointLight(rng.uniform(-0.4, 0.4, 3) * [hw, 0, hw]
                       + [0, cfg.room_height * 0.82, 0], 1.0)

    fx = (cfg.width / 2) / np.tan(np.radians(cfg.fov_deg) / 2)
    intr = CameraIntrinsics(fx, fx, cfg.width / 2, cfg.height / 2, cfg.width, cfg.height)

    target = np.array([0.0, 0.32, 0.0])
    ring_r = 0.62 * hw
    cam_h = cfg.room_height * 0.62
    poses = []
    for i in range(cfg.n_views):
        ang = 2 * np.pi * i / cfg.n_views
        eye = np.array([ring_r * np.cos(ang), cam_h, ring_r * np.sin(ang)])
        poses.append(Pose.look_at(eye, target))

    far = float(np.linalg.norm(room_hi - room_lo)) * 1.05
    return SceneSpec(room_lo, room_hi, wall_albedos, objects, light, cfg.ambient,
                     intr, poses, near=0.05, far=far, seed=seed)


def box_over_floor_scene(width: int = 64, height: int = 64) -> SceneSpec:
    """Canonical single-box scene used for shadow verification."""
    room_lo = np.array([-2.0, 0.0, -2.0])
    room_hi = np.array([2.0, 2.4, 2.0])
    walls = np.array([
        [0.65, 0.6, 0.55], [0.6, 0.65, 0.55], [0.55, 0.55, 0.6],
        [0.7, 0.7, 0.7], [0.6, 0.55, 0.65], [0.55, 0.6, 0.65]])
    box = Primitive("box", [0.75, 0.25, 0.2],
                    box=Obb([0.0, 0.28, 0.0], [0.22, 0.28, 0.18], np.eye(3)))
    light = PointLight([0.8, 1.9, 0.6], 1.0)
    fx = (width / 2) / np.tan(np.radians(70.0) / 2)
    intr = CameraIntrinsics(fx, fx, width / 2, height / 2, width, height)
    poses = [Pose.look_at([1.25, 1.5, -1.25], [0.0, 0.2, 0.0]),
             Pose.look_at([-1.3, 1.45, 1.2], [0.0, 0.2, 0.0]),
             Pose.look_at([1.2, 1.6, 1.2], [0.0, 0.2, 0.0])]
    return SceneSpec(room_lo, room_hi, walls, [box], light, 0.2, intr, poses,
                     near=0.05, far=7.0, seed=0)


def export_dataset(scene: SceneSpec, out_dir: str, write_gt: bool = True,
                   holdout_every: int = 10) -> None:
    """Write the training-dataset layout plus gt/ oracle layers.

    The top-level albedo/shading/residual supervision is the oracle's exact
    decomposition; `osi decompose` can regenerate it from images alone.
    """
    os.makedirs(out_dir, exist_ok=True)
    subdirs = ["images", "albedo", "shading", "residual", "masks"]
    if write_gt:
        subdirs += [os.path.join("gt", s) for s in
                    ["albedo", "shading", "depth", "shadow", "instances"]]
    for sub in subdirs:
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)

    names = [f"{i:03d}" for i in range(len(scene.poses))]
    for name, pose in zip(names, scene.poses):
        view = ray_trace(scene, scene.intrinsics, pose)
        ds.save_png(os.path.join(out_dir, "images", name + ".png"), view.color)
        ds.save_png(os.path.join(out_dir, "albedo", name + ".png"), view.albedo)
        ds.save_png(os.path.join(out_dir, "shading", name + ".png"), view.shading)
        # oracle color is exactly albedo*shading, so the exact residual is zero
        ds.save_f32(os.path.join(out_dir, "residual", name + ".f32"),
                    np.zeros_like(view.color))
        for oid in range(1, len(scene.objects) + 1):
            ds.save_png(os.path.join(out_dir, "masks", f"{name}_obj{oid}.png"),
                        view.mask(oid).astype(np.float64))
        if write_gt:
            ds.save_png(os.path.join(out_dir, "gt", "albedo", name + ".png"), view.albedo)
            ds.save_png(os.path.join(out_dir, "gt", "shading", name + ".png"), view.shading)
            ds.save_f32(os.path.join(out_dir, "gt", "depth", name + ".f32"), view.depth)
            ds.save_png(os.path.join(out_dir, "gt", "shadow", name + ".png"),
                        view.shadow.astype(np.float64))
            ds.save_png_ids(os.path.join(out_dir, "gt", "instances", name + ".png"),
                            view.instance)

    with open(os.path.join(out_dir, "poses.json"), "w") as f:
        json.dump({
            "intrinsics": ds.intrinsics_to_json(scene.intrinsics),
            "frames": [{"file": n, "c2w": p.to_matrix().reshape(-1).tolist()}
                       for n, p in zip(names, scene.poses)],
            "near": scene.near, "far": scene.far,
        }, f, indent=1)

    with open(os.path.join(out_dir, "boxes.json"), "w") as f:
        json.dump({"objects": [
            dict(id=i + 1, **ds.obb_to_json(p.bounding_obb()))
            for i, p in enumerate(scene.objects)]}, f, indent=1)

    with open(os.path.join(out_dir, "scene.json"), "w") as f:
        json.dump(scene.to_json(), f, indent=1)

    test_idx = [i for i in range(len(names)) if holdout_every and i % holdout_every == holdout_every - 1]
    train_idx = [i for i in range(len(names)) if i not in test_idx]
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump({
            "conventions": {
                "camera": "right-handed, camera looks down -z, image rows increase downward",
                "pose": "camera-to-world, 4x4 row-major",
                "brightness": "arithmetic mean of RGB channels",
                "units": "world units; depth is distance along the unit ray direction",
            },
            "assumptions": [
                "no object occludes the segment from the camera center to a box entry",
            ],
            "split": {"train": train_idx, "test": test_idx},
            "seed": scene.seed,
            "ambient": scene.ambient,
        }, f, indent=1)


# --- image quality metrics ---

PSNR_INF = float("inf")


def psnr(a, b, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE); +inf sentinel for identical images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("psnr: image shapes differ")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_INF
    return float(10.0 * np.log10(peak * peak / mse))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2
    x = np.arange(size) - half
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def _windowed(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Valid-mode weighted window sum via stride tricks."""
    kh, kw = kernel.shape
    win = np.lib.stride_tricks.sliding_window_view(img, (kh, kw))
    return np.tensordot(win, kernel, axes=([2, 3], [0, 1]))


def ssim(a, b, peak: float = 1.0) -> float:
    """Structural similarity: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03.

    Multi-channel inputs average the per-channel index. Windows are valid-mode
    (no padding), matching the original formulation.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("ssim: image shapes differ")
    if a.ndim == 3:
        return float(np.mean([ssim(a[..., c], b[..., c], peak) for c in range(a.shape[-1])]))
    if min(a.shape) < 11:
        raise ValueError("ssim needs images of at least 11x11")

    kernel = _gaussian_window()
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    mu_a = _windowed(a, kernel)
    mu_b = _windowed(b, kernel)
    var_a = _windowed(a * a, kernel) - mu_a * mu_a
    var_b = _windowed(b * b, kernel) - mu_b * mu_b
    cov = _windowed(a * b, kernel) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
