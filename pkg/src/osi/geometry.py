"""Cameras, rays, oriented boxes and the rigid transforms used for editing.

Conventions (recorded in every dataset manifest): right-handed world, the
camera looks down -z, image rows increase downward, poses are camera-to-world.
All operations are pure and safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORTHO_TOL = 1e-6


def _as_vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64).reshape(3)
    return a


def _check_rotation(r: np.ndarray, name: str = "rotation") -> np.ndarray:
    r = np.asarray(r, dtype=np.float64).reshape(3, 3)
    if not np.allclose(r.T @ r, np.eye(3), atol=ORTHO_TOL):
        raise ValueError(f"{name} is not orthonormal within {ORTHO_TOL}")
    if np.linalg.det(r) < 0:
        raise ValueError(f"{name} is not proper (det must be +1)")
    return r


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")


@dataclass(frozen=True)
class Pose:
    """Camera-to-world transform (orthonormal rotation, +1 determinant)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _check_rotation(self.rotation, "pose rotation"))
        object.__setattr__(self, "translation", _as_vec3(self.translation))

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> "Pose":
        eye = _as_vec3(eye)
        forward = _as_vec3(target) - eye
        forward = forward / np.linalg.norm(forward)
        right = np.cross(forward, _as_vec3(up))
        right = right / np.linalg.norm(right)
        cam_up = np.cross(right, forward)
        # columns: x right, y up, z backward (camera looks down -z)
        rot = np.stack([right, cam_up, -forward], axis=1)
        return Pose(rot, eye)

    def to_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @staticmethod
    def from_matrix(m) -> "Pose":
        m = np.asarray(m, dtype=np.float64).reshape(4, 4)
        return Pose(m[:3, :3], m[:3, 3])


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float

    def __post_init__(self):
        object.__setattr__(self, "origin", _as_vec3(self.origin))
        d = _as_vec3(self.direction)
        n = np.linalg.norm(d)
        if abs(n - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        object.__setattr__(self, "direction", d)
        if not (0 <= self.t_near < self.t_far):
            raise ValueError("require 0 <= t_near < t_far")

    def at(self, t):
        return self.origin + np.multiply.outer(np.asarray(t, dtype=np.float64), self.direction)


@dataclass(frozen=True)
class Obb:
    """Oriented box: center, positive half extents, orthonormal rotation."""

    center: np.ndarray
    half_extents: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", _as_vec3(self.center))
        he = _as_vec3(self.half_extents)
        if np.any(he <= 0):
            raise ValueError("half_extents must be positive")
        object.__setattr__(self, "half_extents", he)
        object.__setattr__(self, "rotation", _check_rotation(self.rotation, "box rotation"))

    def contains(self, points) -> np.ndarray:
        """Boolean in-box test; broadcasts over (..., 3) points."""
        p = np.asarray(points, dtype=np.float64)
        local = (p - self.center) @ self.rotation  # R^T per row
        return np.all(np.abs(local) <= self.half_extents, axis=-1)

    def corners(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=np.float64)
        return self.center + (signs * self.half_extents) @ self.rotation.T


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _check_rotation(self.rotation))
        object.__setattr__(self, "translation", _as_vec3(self.translation))

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_axis_angle(axis, angle: float, pivot=(0.0, 0.0, 0.0)) -> "RigidTransform":
        """Rotation by `angle` (radians) about an axis through `pivot`."""
        axis = _as_vec3(axis)
        axis = axis / np.linalg.norm(axis)
        x, y, z = axis
        c, s = np.cos(angle), np.sin(angle)
        cross = np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])
        rot = c * np.eye(3) + s * cross + (1 - c) * np.outer(axis, axis)
        pivot = _as_vec3(pivot)
        return RigidTransform(rot, pivot - rot @ pivot)

    @staticmethod
    def translation_only(offset) -> "RigidTransform":
        return RigidTransform(np.eye(3), offset)

    def apply_points(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def apply_direction(self, d) -> np.ndarray:
        return np.asarray(d, dtype=np.float64) @ self.rotation.T

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Returns self o other (apply `other` first)."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def apply_obb(self, box: Obb) -> Obb:
        return Obb(self.apply_points(box.center), box.half_extents, self.rotation @ box.rotation)

    def to_json(self) -> dict:
        return {"rotation": self.rotation.reshape(-1).tolist(),
                "translation": self.translation.tolist()}

    @staticmethod
    def from_json(d) -> "RigidTransform":
        return RigidTransform(np.asarray(d["rotation"], dtype=np.float64).reshape(3, 3),
                              d["translation"])


def generate_rays(intrinsics: CameraIntrinsics, pose: Pose, pixels, near: float, far: float):
    """Cast one ray per (row, col) pixel center through a pinhole camera.

    Returns a list of Ray with normalized world directions; every origin is
    the camera center (pose translation).
    """
    if not (0 <= near < far):
        raise ValueError("require 0 <= near < far")
    pix = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    rows, cols = pix[:, 0], pix[:, 1]
    if np.any(rows < 0) or np.any(rows >= intrinsics.height) or np.any(cols < 0) or np.any(cols >= intrinsics.width):
        raise ValueError("pixel outside image bounds")
    dirs_cam = np.stack([
        (cols - intrinsics.cx) / intrinsics.fx,
        -(rows - intrinsics.cy) / intrinsics.fy,
        -np.ones_like(cols),
    ], axis=-1)
    dirs_world = dirs_cam @ pose.rotation.T
    dirs_world /= np.linalg.norm(dirs_world, axis=-1, keepdims=True)
    return [Ray(pose.translation, d, near, far) for d in dirs_world]


def ray_grid(intrinsics: CameraIntrinsics, pose: Pose):
    """Vectorized origins/directions for every pixel, row-major (H*W, 3)."""
    rr, cc = np.meshgrid(np.arange(intrinsics.height, dtype=np.float64),
                         np.arange(intrinsics.width, dtype=np.float64), indexing="ij")
    dirs_cam = np.stack([
        (cc - intrinsics.cx) / intrinsics.fx,
        -(rr - intrinsics.cy) / intrinsics.fy,
        -np.ones_like(cc),
    ], axis=-1).reshape(-1, 3)
    dirs = dirs_cam @ pose.rotation.T
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(pose.translation, dirs.shape).copy()
    return origins, dirs


def ray_box_intersection(ray: Ray, box: Obb):
    """Slab test in the box frame, clipped to [t_near, t_far]; None on miss."""
    res = ray_box_intersection_batch(ray.origin[None], ray.direction[None],
                                     box, ray.t_near, ray.t_far)
    hit, te, tx = res[0][0], res[1][0], res[2][0]
    if not hit:
        return None
    return float(te), float(tx)


def ray_box_intersection_batch(origins, directions, box: Obb, t_near, t_far):
    """Vectorized slab intersection; returns (hit mask, t_enter, t_exit)."""
    o = (np.asarray(origins, dtype=np.float64) - box.center) @ box.rotation
    d = np.asarray(directions, dtype=np.float64) @ box.rotation
    he = box.half_extents

    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t0 = (-he - o) * inv
        t1 = (he - o) * inv
    lo = np.minimum(t0, t1)
    hi = np.maximum(t0, t1)
    # parallel-to-slab rays: inside slab -> unbounded, outside -> empty
    parallel = np.abs(d) < 1e-15
    inside = np.abs(o) <= he
    lo = np.where(parallel, np.where(inside, -np.inf, np.inf), lo)
    hi = np.where(parallel, np.where(inside, np.inf, -np.inf), hi)

    t_enter = np.maximum(lo.max(axis=-1), t_near)
    t_exit = np.minimum(hi.min(axis=-1), t_far)
    hit = t_enter <= t_exit
    return hit, np.where(hit, t_enter, 0.0), np.where(hit, t_exit, 0.0)


def soft_mask_near(t, t_n, lambda1: float):
    """Sigmoid gate selecting samples before the box entry: 0.5 at t = t_n."""
    if lambda1 <= 0:
        raise ValueError("lambda1 must be positive")
    t = np.asarray(t, dtype=np.float64)
    return _stable_sigmoid(-lambda1 * (t - t_n))


def soft_mask_far(t, t_f, lambda1: float):
    """Sigmoid gate approaching 1 beyond the box exit: 0.5 at t = t_f."""
    if lambda1 <= 0:
        raise ValueError("lambda1 must be positive")
    t = np.asarray(t, dtype=np.float64)
    return 1.0 - _stable_sigmoid(lambda1 * (t_f - t))


def _stable_sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def transform_ray(ray: Ray, xf: RigidTransform) -> Ray:
    """Rigidly move a ray; unit direction and [t_near, t_far] are preserved."""
    d = xf.apply_direction(ray.direction)
    d = d / np.linalg.norm(d)
    return Ray(xf.apply_points(ray.origin), d, ray.t_near, ray.t_far)


def compose_w2w(src_c2w: Pose, dst_c2w: Pose) -> RigidTransform:
    """World-to-world map dst_c2w o inverse(src_c2w).

    Re-expresses a point in the source scene's world frame in the destination
    field's world frame, assuming the two poses image the same camera view.
    """
    rot = dst_c2w.rotation @ src_c2w.rotation.T
    trans = dst_c2w.translation - rot @ src_c2w.translation
    return RigidTransform(rot, trans)
