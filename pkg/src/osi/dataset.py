"""Dataset directory format shared by generation, training and evaluation.

Layout:
    images/NNN.png        source views, 8-bit RGB
    albedo/NNN.png        albedo supervision, 8-bit RGB
    shading/NNN.png       shading supervision, 8-bit grayscale
    residual/NNN.f32      exact residual sidecar, little-endian row-major float32
    masks/NNN_objK.png    binary instance mask for object id K
    poses.json            intrinsics + per-view camera-to-world (4x4 row-major)
    boxes.json            per-object oriented box labels
    manifest.json         conventions, units, split, generation parameters
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .geometry import CameraIntrinsics, Obb, Pose


def save_png(path, array):
    """Write a float image in [0,1] (HxW or HxWx3) as 8-bit PNG."""
    a = np.asarray(array)
    a = np.clip(np.round(a * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(a).save(path)


def load_png(path) -> np.ndarray:
    """Read a PNG as float64 in [0,1]; keeps channel count."""
    a = np.asarray(Image.open(path), dtype=np.float64) / 255.0
    return a


def save_png_ids(path, ids):
    Image.fromarray(np.asarray(ids, dtype=np.uint8), mode="L").save(path)


def load_png_ids(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L"), dtype=np.int64)


def save_f32(path, array):
    np.asarray(array, dtype="<f4").tofile(path)


def load_f32(path, shape) -> np.ndarray:
    return np.fromfile(path, dtype="<f4").reshape(shape).astype(np.float64)


def intrinsics_to_json(intr: CameraIntrinsics) -> dict:
    return {"fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
            "width": intr.width, "height": intr.height}


def intrinsics_from_json(d) -> CameraIntrinsics:
    return CameraIntrinsics(d["fx"], d["fy"], d["cx"], d["cy"], d["width"], d["height"])


def obb_to_json(box: Obb) -> dict:
    return {"center": box.center.tolist(),
            "half_extents": box.half_extents.tolist(),
            "rotation": box.rotation.reshape(-1).tolist()}


def obb_from_json(d) -> Obb:
    return Obb(d["center"], d["half_extents"],
               np.asarray(d["rotation"], dtype=np.float64).reshape(3, 3))


@dataclass
class SceneDataset:
    """In-memory view of a dataset directory."""

    root: str
    intrinsics: CameraIntrinsics
    poses: list            # Pose per view
    names: list            # zero-padded view names
    images: np.ndarray     # (V, H, W, 3)
    albedos: np.ndarray | None
    shadings: np.ndarray | None
    masks: dict            # object id -> (V, H, W) binary
    boxes: dict            # object id -> Obb
    near: float
    far: float
    manifest: dict = field(default_factory=dict)

    @property
    def train_indices(self):
        split = self.manifest.get("split", {})
        return split.get("train", list(range(len(self.poses))))

    @property
    def test_indices(self):
        return self.manifest.get("split", {}).get("test", [])


def load_dataset(root: str) -> SceneDataset:
    if not os.path.isdir(root):
        raise FileNotFoundError(f"dataset directory not found: {root}")
    with open(os.path.join(root, "poses.json")) as f:
        poses_doc = json.load(f)
    intr = intrinsics_from_json(poses_doc["intrinsics"])
    names = [fr["file"] for fr in poses_doc["frames"]]
    poses = [Pose.from_matrix(np.asarray(fr["c2w"]).reshape(4, 4)) for fr in poses_doc["frames"]]

    manifest = {}
    man_path = os.path.join(root, "manifest.json")
    if os.path.exists(man_path):
        with open(man_path) as f:
            manifest = json.load(f)

    images = np.stack([load_png(os.path.join(root, "images", n + ".png")) for n in names])

    def _optional_stack(sub):
        d = os.path.join(root, sub)
        if not os.path.isdir(d):
            return None
        return np.stack([load_png(os.path.join(d, n + ".png")) for n in names])

    albedos = _optional_stack("albedo")
    shadings = _optional_stack("shading")

    boxes = {}
    boxes_path = os.path.join(root, "boxes.json")
    if os.path.exists(boxes_path):
        with open(boxes_path) as f:
            for obj in json.load(f)["objects"]:
                boxes[int(obj["id"])] = obb_from_json(obj)

    masks = {}
    mask_dir = os.path.join(root, "masks")
    if os.path.isdir(mask_dir):
        for oid in boxes:
            stack = []
            for n in names:
                p = os.path.join(mask_dir, f"{n}_obj{oid}.png")
                stack.append((load_png(p) > 0.5).astype(np.float64) if os.path.exists(p)
                             else np.zeros(images.shape[1:3]))
            masks[oid] = np.stack(stack)

    return SceneDataset(
        root=root, intrinsics=intr, poses=poses, names=names, images=images,
        albedos=albedos, shadings=shadings, masks=masks, boxes=boxes,
        near=float(poses_doc.get("near", 0.05)), far=float(poses_doc.get("far", 10.0)),
        manifest=manifest,
    )
