"""Goal-conditioned control: drive the end-effector to a target pose.

The planner interpolates straight-line position waypoints (spherical
interpolation for orientation) at a fixed resolution. When the straight
segment would pass through a non-held object, a single vertical lift-over
detour is inserted. Goals outside the workspace box, or paths that remain
blocked even after the detour, are reported as failures — failure is data,
not an exception.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pose, quat_slerp
from .world import (
    SimConfig,
    WorldState,
    aabb_contains,
    segment_intersects_aabb,
)

OUT_OF_WORKSPACE = "out_of_workspace"
BLOCKED = "blocked"


@dataclass
class MotionResult:
    waypoints: list[Pose]
    reached: bool
    failure_reason: str | None = None


def _obstacles(state: WorldState, start: np.ndarray, goal: np.ndarray, cfg: SimConfig):
    """Inflated AABBs of objects that can block motion.

    The held object travels with the gripper, and objects whose box already
    contains the start or goal point (e.g. the object being grasped) cannot
    be avoided, so both are excluded.
    """
    out = []
    for obj in state.objects:
        if obj.oid == state.held_object:
            continue
        lo, hi = obj.aabb()
        lo = lo - cfg.clearance
        hi = hi + cfg.clearance
        if aabb_contains(lo, hi, start) or aabb_contains(lo, hi, goal):
            continue
        out.append((lo, hi))
    return out


def _segment_blocked(p0, p1, obstacles) -> bool:
    return any(segment_intersects_aabb(p0, p1, lo, hi) for lo, hi in obstacles)


def _polyline_blocked(points, obstacles) -> bool:
    return any(
        _segment_blocked(points[i], points[i + 1], obstacles)
        for i in range(len(points) - 1)
    )


def _interpolate(points, q0, q1, step_length) -> list[Pose]:
    """Waypoints along a polyline; orientation slerped by arc-length fraction."""
    lengths = [np.linalg.norm(points[i + 1] - points[i]) for i in range(len(points) - 1)]
    total = sum(lengths)
    waypoints = []
    travelled = 0.0
    for seg, seg_len in enumerate(lengths):
        if seg_len < 1e-12:
            continue
        n = max(1, int(np.ceil(seg_len / step_length)))
        for k in range(1, n + 1):
            s = travelled + seg_len * k / n
            frac = s / total if total > 1e-12 else 1.0
            p = points[seg] + (points[seg + 1] - points[seg]) * (k / n)
            waypoints.append(Pose(p, quat_slerp(q0, q1, frac)))
        travelled += seg_len
    return waypoints


def plan_to_pose(state: WorldState, goal: Pose, cfg: SimConfig) -> MotionResult:
    lo, hi = cfg.workspace
    if not aabb_contains(lo, hi, goal.translation):
        return MotionResult([], False, OUT_OF_WORKSPACE)

    start = state.ee_pose.translation
    q0, q1 = state.ee_pose.rotation, goal.rotation
    dist = float(np.linalg.norm(goal.translation - start))
    if dist < 1e-12 and abs(float(np.dot(q0, q1))) > 1.0 - 1e-12:
        return MotionResult([goal], True)

    obstacles = _obstacles(state, start, goal.translation, cfg)
    route = [start, goal.translation]
    if _polyline_blocked(route, obstacles):
        tops = [
            hi_box[2]
            for lo_box, hi_box in obstacles
            if segment_intersects_aabb(start, goal.translation, lo_box, hi_box)
        ]
        lift_z = max([start[2], goal.translation[2]] + tops) + cfg.detour_clearance
        lift_z = min(lift_z, hi[2])
        route = [
            start,
            np.array([start[0], start[1], lift_z]),
            np.array([goal.translation[0], goal.translation[1], lift_z]),
            goal.translation,
        ]
        if _polyline_blocked(route, obstacles):
            return MotionResult([], False, BLOCKED)

    waypoints = _interpolate(route, q0, q1, cfg.step_length)
    if not waypoints:
        waypoints = [goal]
    else:
        # land exactly on the goal pose, immune to interpolation rounding
        waypoints[-1] = goal
    return MotionResult(waypoints, True)
