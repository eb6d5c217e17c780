"""Deterministic tabletop-manipulation environment with sparse rewards.

One macro-step: plan a path to the requested pose (module control), sweep
the end-effector along it (a held object rides along rigidly), then apply
the discretized gripper command — closing attaches the nearest graspable
object within the grasp radius, opening releases it and lets it settle
straight down onto the highest support under its footprint.

Rewards are sparse: +1 on first satisfaction of the task's success
predicate, -1 when the planner reports the target unreachable, else 0; the
episode ends on any nonzero reward or when the step budget runs out.
"""

from __future__ import annotations

import numpy as np

from . import control
from .geometry import Pose, compose, depth_to_organized_cloud, relative_pose
from .render import box_triangles, quad_triangles, rasterize
from .tasks import PlacementError, TaskSpec, get_task
from .world import Observation, PoseAction, SceneObject, SimConfig, WorldState

__all__ = ["SimEnv", "EpisodeFinishedError", "PlacementError", "render_observation"]


class EpisodeFinishedError(RuntimeError):
    """step() was called after the episode terminated."""


def render_observation(
    state: WorldState, cfg: SimConfig, camera=None
) -> Observation:
    """Rasterize the scene and deproject depth into an organized cloud."""
    cam = camera if camera is not None else cfg.camera
    tris = []
    colors = []

    th = cfg.table_half
    table = quad_triangles(
        np.array([[-th, -th, 0.0], [th, -th, 0.0], [th, th, 0.0], [-th, th, 0.0]])
    )
    tris.append(table)
    colors.append(np.tile(cfg.table_color, (2, 1)))

    for obj in state.objects:
        tris.append(box_triangles(obj.pose, obj.half_extents))
        colors.append(np.tile(obj.color, (12, 1)))

    gripper_color = cfg.gripper_color if state.gripper_open else cfg.gripper_closed_color
    tris.append(box_triangles(state.ee_pose, np.array(cfg.gripper_half_extents)))
    colors.append(np.tile(gripper_color, (12, 1)))

    rgb, depth = rasterize(
        np.concatenate(tris), np.concatenate(colors), cam, cfg.background_color
    )
    cloud, valid = depth_to_organized_cloud(depth, cam)
    return Observation(
        rgb=rgb,
        cloud=cloud.astype(np.float32),
        cloud_valid=valid,
        ee_pose=state.ee_pose,
        gripper_open=1.0 if state.gripper_open else 0.0,
    )


class SimEnv:
    """Seeded, single-threaded environment instance for one task."""

    def __init__(self, task: TaskSpec | str, cfg: SimConfig | None = None):
        self.task = get_task(task) if isinstance(task, str) else task
        self.cfg = cfg or SimConfig()
        self.state: WorldState | None = None
        self._terminal = True
        self._succeeded = False

    # -- episode control ----------------------------------------------------

    def reset(self, seed: int) -> Observation:
        rng = np.random.default_rng(seed)
        objects = self.task.generator(rng, self.cfg)
        self.state = WorldState(
            objects=objects,
            ee_pose=self.cfg.home_pose(),
            gripper_open=True,
        )
        self._terminal = False
        self._succeeded = False
        return self.observe()

    def step(self, action: PoseAction) -> tuple[Observation, float, bool]:
        if self._terminal or self.state is None:
            raise EpisodeFinishedError("episode is finished; call reset()")
        result = control.plan_to_pose(self.state, action.target, self.cfg)
        reward = 0.0
        if not result.reached:
            reward = -1.0
        else:
            for wp in result.waypoints:
                self.set_ee(wp)
            self.apply_gripper(action.gripper)
            if not self._succeeded and self.check_success():
                self._succeeded = True
                reward = 1.0
        self.state.step_count += 1
        terminal = reward != 0.0 or self.state.step_count >= self.cfg.episode_step_budget
        self._terminal = terminal
        return self.observe(), reward, terminal

    def observe(self) -> Observation:
        return render_observation(self.state, self.cfg)

    def check_success(self) -> bool:
        return self.task.success(self.state, self.cfg)

    @property
    def terminal(self) -> bool:
        return self._terminal

    @property
    def succeeded(self) -> bool:
        return self._succeeded

    # -- world mechanics (shared with the scripted teacher) ------------------

    def set_ee(self, pose: Pose) -> None:
        """Move the gripper; a held object keeps its grasp-frame pose."""
        self.state.ee_pose = pose
        if self.state.held_object is not None:
            obj = self.state.object(self.state.held_object)
            obj.pose = compose(pose, self.state.held_rel)

    def apply_gripper(self, command: float) -> None:
        close = command >= 0.5
        if close:
            if self.state.held_object is None:
                self._try_attach()
            self.state.gripper_open = False
        else:
            if self.state.held_object is not None:
                obj = self.state.object(self.state.held_object)
                self.state.held_object = None
                self.state.held_rel = None
                self._settle(obj)
            self.state.gripper_open = True

    def _try_attach(self) -> None:
        ee = self.state.ee_pose.translation
        best: SceneObject | None = None
        best_dist = self.cfg.grasp_radius
        for obj in self.state.objects:
            if not obj.graspable:
                continue
            d = float(np.linalg.norm(obj.pose.translation - ee))
            if d <= best_dist:
                best, best_dist = obj, d
        if best is not None:
            self.state.held_object = best.oid
            self.state.held_rel = relative_pose(self.state.ee_pose, best.pose)

    def _settle(self, obj: SceneObject) -> None:
        """Drop a released object onto the highest support under its footprint."""
        lo, hi = obj.aabb()
        support = 0.0  # table surface
        for other in self.state.objects:
            if other.oid == obj.oid:
                continue
            olo, ohi = other.aabb()
            overlap_x = lo[0] < ohi[0] and hi[0] > olo[0]
            overlap_y = lo[1] < ohi[1] and hi[1] > olo[1]
            if overlap_x and overlap_y:
                support = max(support, float(ohi[2]))
        drop = float(lo[2]) - support
        obj.pose = Pose(
            obj.pose.translation - np.array([0.0, 0.0, drop]), obj.pose.rotation
        )
