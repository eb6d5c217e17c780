"""Domain types for the tabletop world: scene objects, states, observations,
pose actions, and the simulator configuration shared by env, planner, and
teacher.

Conventions: world units are meters, the table surface is the z=0 plane,
+z is up. The end-effector is a floating gripper (no arm kinematics); the
observation's gripper scalar is 1.0 when open, 0.0 when closed, while a
PoseAction's gripper command closes when >= 0.5.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .geometry import CameraModel, Pose, camera_from_lookat, quat_to_matrix


@dataclass
class SceneObject:
    oid: str
    half_extents: np.ndarray
    color: np.ndarray
    pose: Pose
    graspable: bool = True

    def __post_init__(self):
        self.half_extents = np.asarray(self.half_extents, dtype=np.float64)
        self.color = np.asarray(self.color, dtype=np.uint8)

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        """World-frame axis-aligned bounding box of the oriented box."""
        r = np.abs(quat_to_matrix(self.pose.rotation))
        extent = r @ self.half_extents
        return self.pose.translation - extent, self.pose.translation + extent


@dataclass
class WorldState:
    objects: list[SceneObject]
    ee_pose: Pose
    gripper_open: bool = True
    held_object: str | None = None
    held_rel: Pose | None = None  # grasped object's pose in the gripper frame
    step_count: int = 0

    def object(self, oid: str) -> SceneObject:
        for o in self.objects:
            if o.oid == oid:
                return o
        raise KeyError(oid)

    def snapshot(self) -> "WorldState":
        return copy.deepcopy(self)


@dataclass
class Observation:
    """RGB image, organized world-frame point cloud, and proprioception."""

    rgb: np.ndarray  # (H, W, 3) uint8
    cloud: np.ndarray  # (H, W, 3) float32, world frame, zeros where invalid
    cloud_valid: np.ndarray  # (H, W) bool
    ee_pose: Pose
    gripper_open: float  # 1.0 open, 0.0 closed

    def proprio(self) -> np.ndarray:
        """8-vector: translation (3), quaternion xyzw (4), gripper open flag."""
        return np.concatenate(
            [
                self.ee_pose.translation,
                self.ee_pose.rotation,
                [self.gripper_open],
            ]
        ).astype(np.float64)


@dataclass
class PoseAction:
    """Absolute next-best pose target plus a gripper command in [0, 1]."""

    target: Pose
    gripper: float

    def __post_init__(self):
        self.gripper = float(self.gripper)
        if not 0.0 <= self.gripper <= 1.0:
            raise ValueError(f"gripper command {self.gripper} outside [0, 1]")

    @property
    def closes(self) -> bool:
        return self.gripper >= 0.5


@dataclass(frozen=True)
class SimConfig:
    image_size: int = 64
    workspace_lo: tuple[float, float, float] = (-0.22, -0.18, 0.0)
    workspace_hi: tuple[float, float, float] = (0.22, 0.18, 0.30)
    placement_lo: tuple[float, float] = (-0.15, -0.11)
    placement_hi: tuple[float, float] = (0.15, 0.11)
    step_length: float = 0.02
    clearance: float = 0.01  # obstacle inflation when collision-checking
    detour_clearance: float = 0.03  # height margin of the lift-over detour
    gripper_half_width: float = 0.04
    grasp_radius_factor: float = 1.5
    episode_step_budget: int = 10
    home_position: tuple[float, float, float] = (0.0, 0.0, 0.22)
    lift_height: float = 0.12
    camera_position: tuple[float, float, float] = (0.0, -0.62, 0.42)
    camera_target: tuple[float, float, float] = (0.0, 0.02, 0.03)
    camera_fov_deg: float = 57.0
    table_half: float = 0.30
    table_color: tuple[int, int, int] = (168, 158, 136)
    background_color: tuple[int, int, int] = (24, 28, 44)
    gripper_color: tuple[int, int, int] = (235, 225, 60)  # open
    gripper_closed_color: tuple[int, int, int] = (250, 120, 30)
    gripper_half_extents: tuple[float, float, float] = (0.016, 0.016, 0.022)

    @property
    def grasp_radius(self) -> float:
        return self.grasp_radius_factor * self.gripper_half_width

    @cached_property
    def camera(self) -> CameraModel:
        return camera_from_lookat(
            np.array(self.camera_position),
            np.array(self.camera_target),
            self.image_size,
            self.image_size,
            self.camera_fov_deg,
        )

    @property
    def workspace(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.workspace_lo), np.array(self.workspace_hi)

    @property
    def workspace_center(self) -> np.ndarray:
        lo, hi = self.workspace
        return (lo + hi) / 2.0

    @property
    def workspace_half_extent(self) -> np.ndarray:
        lo, hi = self.workspace
        return (hi - lo) / 2.0

    def home_pose(self) -> Pose:
        return Pose(np.array(self.home_position))


def aabb_contains(lo: np.ndarray, hi: np.ndarray, p: np.ndarray) -> bool:
    return bool(np.all(p >= lo) and np.all(p <= hi))


def segment_intersects_aabb(
    p0: np.ndarray, p1: np.ndarray, lo: np.ndarray, hi: np.ndarray
) -> bool:
    """Slab test: does the closed segment p0->p1 touch the AABB?"""
    d = p1 - p0
    tmin, tmax = 0.0, 1.0
    for axis in range(3):
        if abs(d[axis]) < 1e-12:
            if p0[axis] < lo[axis] or p0[axis] > hi[axis]:
                return False
        else:
            t1 = (lo[axis] - p0[axis]) / d[axis]
            t2 = (hi[axis] - p0[axis]) / d[axis]
            if t1 > t2:
                t1, t2 = t2, t1
            tmin = max(tmin, t1)
            tmax = min(tmax, t2)
            if tmin > tmax:
                return False
    return True
