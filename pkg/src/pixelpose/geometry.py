"""Rigid-body poses, quaternion conventions, and the pinhole camera model.

Quaternions are numpy arrays laid out as (x, y, z, w), w being the scalar
part. A canonical quaternion has unit norm and w >= 0; when w == 0 exactly,
the sign is flipped so the first nonzero of (x, y, z) is positive.

Pixel coordinates are (x, y) = (column, row) with the origin at the top-left
of the image. A pixel with integer indices (row i, column j) samples the ray
through continuous image coordinates (u, v) = (j, i).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DegenerateQuaternionError(ValueError):
    """Raised when a quaternion with (near-)zero norm is normalized."""


def canonicalize(q: np.ndarray) -> np.ndarray:
    """Normalize a quaternion and fix its sign so w >= 0.

    q and -q encode the same rotation; canonicalization picks one
    representative. When w == 0 exactly, the sign of the first nonzero
    vector component breaks the tie.
    """
    q = np.asarray(q, dtype=np.float64)
    norm = float(np.linalg.norm(q))
    if norm <= 1e-12:
        raise DegenerateQuaternionError(f"quaternion norm {norm} is too small")
    if abs(norm - 1.0) > 1e-12:  # keep exact idempotence for unit inputs
        q = q / norm
    if q[3] < 0.0:
        q = -q
    elif q[3] == 0.0:
        for c in q[:3]:
            if c != 0.0:
                if c < 0.0:
                    q = -q
                break
    return q


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a * b in (x, y, z, w) layout."""
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([-q[0], -q[1], -q[2], q[3]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """3x3 rotation matrix of a unit quaternion."""
    x, y, z, w = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector v by unit quaternion q."""
    return quat_to_matrix(q) @ np.asarray(v, dtype=np.float64)


def quat_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Absolute rotation angle (radians) between two unit quaternions."""
    dot = abs(float(np.dot(a, b)))
    return 2.0 * float(np.arccos(min(1.0, dot)))


def quat_slerp(a: np.ndarray, b: np.ndarray, t: float) -> np.ndarray:
    """Shortest-arc spherical interpolation between unit quaternions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    dot = float(np.dot(a, b))
    if dot < 0.0:
        b = -b
        dot = -dot
    if dot > 1.0 - 1e-10:
        out = a + t * (b - a)
        return out / np.linalg.norm(out)
    theta = np.arccos(dot)
    s = np.sin(theta)
    return (np.sin((1.0 - t) * theta) * a + np.sin(t * theta) * b) / s


IDENTITY_QUAT = np.array([0.0, 0.0, 0.0, 1.0])


@dataclass(frozen=True)
class Pose:
    """Rigid transform: world-frame translation plus a unit quaternion."""

    translation: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())

    def __post_init__(self):
        object.__setattr__(
            self, "translation", np.asarray(self.translation, dtype=np.float64)
        )
        object.__setattr__(self, "rotation", canonicalize(self.rotation))

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), IDENTITY_QUAT)


def compose(a: Pose, b: Pose) -> Pose:
    """Pose a followed by b expressed in a's frame: a * b."""
    return Pose(
        a.translation + quat_rotate(a.rotation, b.translation),
        quat_multiply(a.rotation, b.rotation),
    )


def inverse(p: Pose) -> Pose:
    q_inv = quat_conjugate(p.rotation)
    return Pose(-quat_rotate(q_inv, p.translation), q_inv)


def relative_pose(a: Pose, b: Pose) -> Pose:
    """The transform r with compose(a, r) == b."""
    return compose(inverse(a), b)


def pose_distance(a: Pose, b: Pose) -> tuple[float, float]:
    """(translation distance, rotation angle) between two poses."""
    return (
        float(np.linalg.norm(a.translation - b.translation)),
        quat_angle(a.rotation, b.rotation),
    )


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera: 3x3 intrinsics and a 4x4 world-from-camera transform.

    The camera frame is the usual computer-vision one: +z looks into the
    scene, +x right, +y down, so image v grows downward.
    """

    intrinsics: np.ndarray
    extrinsics: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(
            self, "intrinsics", np.asarray(self.intrinsics, dtype=np.float64)
        )
        object.__setattr__(
            self, "extrinsics", np.asarray(self.extrinsics, dtype=np.float64)
        )
        k, e = self.intrinsics, self.extrinsics
        if k.shape != (3, 3) or e.shape != (4, 4):
            raise ValueError("intrinsics must be 3x3 and extrinsics 4x4")
        fx, fy = k[0, 0], k[1, 1]
        cx, cy = k[0, 2], k[1, 2]
        if fx <= 0 or fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= cx < self.width and 0 <= cy < self.height):
            raise ValueError("principal point must lie inside the image")
        r = e[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-7):
            raise ValueError("extrinsics rotation block is not orthonormal")
        if not np.isclose(np.linalg.det(r), 1.0, atol=1e-7):
            raise ValueError("extrinsics rotation block must have det +1")

    @property
    def fx(self) -> float:
        return float(self.intrinsics[0, 0])

    @property
    def fy(self) -> float:
        return float(self.intrinsics[1, 1])

    @property
    def cx(self) -> float:
        return float(self.intrinsics[0, 2])

    @property
    def cy(self) -> float:
        return float(self.intrinsics[1, 2])


def camera_from_lookat(
    position: np.ndarray,
    target: np.ndarray,
    width: int,
    height: int,
    fov_deg: float,
    up: np.ndarray = (0.0, 0.0, 1.0),
) -> CameraModel:
    """Build a CameraModel looking from `position` toward `target`.

    fov_deg is the horizontal field of view; the principal point sits at the
    image center and fx == fy.
    """
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    forward = forward / np.linalg.norm(forward)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up)
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    r = np.stack([right, down, forward], axis=1)  # world-from-camera rotation
    extrinsics = np.eye(4)
    extrinsics[:3, :3] = r
    extrinsics[:3, 3] = position
    f = (width / 2.0) / np.tan(np.deg2rad(fov_deg) / 2.0)
    intrinsics = np.array(
        [[f, 0.0, width / 2.0], [0.0, f, height / 2.0], [0.0, 0.0, 1.0]]
    )
    return CameraModel(intrinsics, extrinsics, width, height)


def world_to_camera(p_world: np.ndarray, cam: CameraModel) -> np.ndarray:
    r = cam.extrinsics[:3, :3]
    t = cam.extrinsics[:3, 3]
    return r.T @ (np.asarray(p_world, dtype=np.float64) - t)


def project_to_pixel(
    p_world: np.ndarray, cam: CameraModel
) -> tuple[float, float, bool]:
    """Pinhole projection of a world point to continuous pixel coordinates.

    Returns (u, v, in_front). in_front is False for points at or behind the
    camera plane, in which case (u, v) is (0, 0) and meaningless. u and v may
    lie outside the image bounds; callers clamp.
    """
    pc = world_to_camera(p_world, cam)
    z = pc[2]
    if z <= 1e-12:
        return 0.0, 0.0, False
    u = cam.fx * pc[0] / z + cam.cx
    v = cam.fy * pc[1] / z + cam.cy
    return float(u), float(v), True


def clamp_pixel(u: float, v: float, width: int, height: int) -> tuple[int, int]:
    """Round continuous image coordinates and clamp into the image."""
    x = int(np.floor(u + 0.5))
    y = int(np.floor(v + 0.5))
    return min(max(x, 0), width - 1), min(max(y, 0), height - 1)


def depth_to_organized_cloud(
    depth: np.ndarray, cam: CameraModel
) -> tuple[np.ndarray, np.ndarray]:
    """Deproject a depth map into a world-frame organized point cloud.

    depth is (H, W) in meters; entries <= 0 mark invalid pixels. Returns
    (points, valid) where points is (H, W, 3) float and invalid entries are
    all-zero, and valid is an (H, W) boolean mask. Element (i, j) is the
    world point whose projection is pixel (x=j, y=i).
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (cam.height, cam.width):
        raise ValueError(
            f"depth shape {depth.shape} does not match camera "
            f"({cam.height}, {cam.width})"
        )
    valid = depth > 0.0
    z = np.where(valid, depth, 1.0)
    u = np.arange(cam.width, dtype=np.float64)[None, :]
    v = np.arange(cam.height, dtype=np.float64)[:, None]
    x = (u - cam.cx) / cam.fx * z
    y = (v - cam.cy) / cam.fy * z
    pc = np.stack([x, y, z], axis=-1)
    r = cam.extrinsics[:3, :3]
    t = cam.extrinsics[:3, 3]
    points = pc @ r.T + t
    points[~valid] = 0.0
    return points, valid
