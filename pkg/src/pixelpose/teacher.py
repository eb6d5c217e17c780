"""Scripted teacher: executes each task's waypoint program with a
trapezoidal speed profile and records fine-grained demonstration
trajectories.

Each control waypoint becomes one trajectory frame, so per-step speeds ramp
up from rest and creep below 1 mm/step into every program waypoint — the
structure keyframe discovery looks for. Gripper commands toggle on their
own zero-motion frames.

Trajectory files reuse the named-array container of ``checkpoint`` (magic
PPNA) with meta ``kind="trajectory"`` and arrays, in order: rgb uint8
(T,H,W,3), cloud float32 (T,H,W,3), valid uint8 (T,H,W), proprio float32
(T,8: translation, quaternion xyzw, gripper-open flag), action float32
(T,8: target translation, target quaternion xyzw, gripper command),
velocity float32 (T,), gripper uint8 (T,).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import control
from .checkpoint import load_arrays, save_arrays
from .geometry import CameraModel, Pose, quat_slerp
from .sim import SimEnv
from .tasks import GripStep, MoveStep, TaskSpec, get_task
from .world import Observation, PoseAction, SimConfig, WorldState

TEACHER_V_MAX = 0.008
TEACHER_ACCEL = 0.002
TEACHER_V_END = 5e-4


class DemoGenerationError(RuntimeError):
    """The scripted program failed to solve its task."""


@dataclass
class TrajFrame:
    ee_pose: Pose
    gripper_open: float  # 1.0 open, 0.0 closed
    velocity: float  # |translation delta| from the previous frame
    action: PoseAction  # macro action being pursued at this frame
    obs: Observation | None = None
    world: WorldState | None = None


@dataclass
class Trajectory:
    task_id: str
    seed: int
    camera: CameraModel
    frames: list[TrajFrame]
    success: bool

    def __len__(self) -> int:
        return len(self.frames)


def _speed_profile(total: float, v_max: float, accel: float, v_end: float) -> list[float]:
    """Per-step travel distances summing to `total`, ending below v_end."""
    if total <= 1e-12:
        return []
    if total <= v_end:
        return [total]
    body = total - v_end
    up: list[float] = []
    v = 0.0
    while True:
        nv = v + accel
        if nv >= v_max - 1e-12:
            break
        up.append(nv)
        v = nv
        if 2.0 * sum(up) > body:
            break
    down = list(reversed(up))
    ramp = sum(up) + sum(down)
    if ramp > body and ramp > 0:
        scale = body / ramp
        up = [d * scale for d in up]
        down = [d * scale for d in down]
        ramp = body
    cruise_n = int((body - ramp) // v_max)
    seq = up + [v_max] * cruise_n + down
    if not seq:
        seq = [body]
    elif sum(seq) < body - 1e-12:
        seq = [d * body / sum(seq) for d in seq]
    return seq + [v_end]


def _retime(start: Pose, waypoints: list[Pose], v_max: float, accel: float, v_end: float) -> list[Pose]:
    """Resample a waypoint path so per-step distances follow a trapezoid."""
    pts = [start.translation] + [w.translation for w in waypoints]
    segs = [np.linalg.norm(pts[i + 1] - pts[i]) for i in range(len(pts) - 1)]
    total = float(sum(segs))
    goal = waypoints[-1]
    if total <= 1e-12:
        return [goal]
    q0, q1 = start.rotation, goal.rotation
    out = []
    distances = _speed_profile(total, v_max, accel, v_end)
    s = 0.0
    for d in distances:
        s = min(s + d, total)
        # locate s along the polyline
        acc = 0.0
        for i, seg_len in enumerate(segs):
            if acc + seg_len >= s - 1e-12 and seg_len > 0:
                frac = (s - acc) / seg_len
                p = pts[i] + (pts[i + 1] - pts[i]) * frac
                break
            acc += seg_len
        else:
            p = pts[-1]
        out.append(Pose(p, quat_slerp(q0, q1, s / total)))
    out[-1] = goal
    return out


def generate_demo(
    task: TaskSpec | str,
    seed: int,
    cfg: SimConfig | None = None,
    render: bool = True,
    keep_world: bool = False,
) -> Trajectory:
    """Run the task's scripted program and record every control waypoint.

    Raises DemoGenerationError (reporting the seed) if the script fails,
    which should not happen for the shipped tasks.
    """
    task = get_task(task) if isinstance(task, str) else task
    cfg = cfg or SimConfig()
    env = SimEnv(task, cfg)
    env.reset(seed)
    program = task.teacher(env.state, cfg)
    if not program:
        raise DemoGenerationError(f"{task.task_id}: empty teacher program (seed {seed})")

    frames: list[TrajFrame] = []
    grip_cmd = 0.0 if env.state.gripper_open else 1.0

    def record(action: PoseAction, velocity: float) -> None:
        frames.append(
            TrajFrame(
                ee_pose=env.state.ee_pose,
                gripper_open=1.0 if env.state.gripper_open else 0.0,
                velocity=float(velocity),
                action=action,
                obs=env.observe() if render else None,
                world=env.state.snapshot() if keep_world else None,
            )
        )

    first_goal = next(
        (s.goal for s in program if isinstance(s, MoveStep)), env.state.ee_pose
    )
    record(PoseAction(first_goal, grip_cmd), 0.0)

    for step in program:
        if isinstance(step, MoveStep):
            macro = PoseAction(step.goal, grip_cmd)
            result = control.plan_to_pose(env.state, step.goal, cfg)
            if not result.reached:
                raise DemoGenerationError(
                    f"{task.task_id}: teacher motion failed "
                    f"({result.failure_reason}, seed {seed})"
                )
            for pose in _retime(
                env.state.ee_pose, result.waypoints,
                TEACHER_V_MAX, TEACHER_ACCEL, TEACHER_V_END,
            ):
                prev = env.state.ee_pose.translation
                env.set_ee(pose)
                record(macro, np.linalg.norm(pose.translation - prev))
        else:
            grip_cmd = 1.0 if step.close else 0.0
            env.apply_gripper(grip_cmd)
            record(PoseAction(env.state.ee_pose, grip_cmd), 0.0)

    if not env.check_success():
        raise DemoGenerationError(f"{task.task_id}: script did not succeed (seed {seed})")
    return Trajectory(task.task_id, seed, cfg.camera, frames, True)


def run_policy_episode(
    task: TaskSpec | str,
    cfg: SimConfig,
    act_fn,
    seed: int,
) -> Trajectory:
    """Record one macro-resolution episode trace driven by act_fn(obs)."""
    task = get_task(task) if isinstance(task, str) else task
    env = SimEnv(task, cfg)
    obs = env.reset(seed)
    frames = [
        TrajFrame(env.state.ee_pose, obs.gripper_open, 0.0,
                  PoseAction(env.state.ee_pose, 0.0), obs)
    ]
    terminal = False
    while not terminal:
        action = act_fn(obs)
        prev = env.state.ee_pose.translation
        obs, _, terminal = env.step(action)
        frames.append(
            TrajFrame(
                env.state.ee_pose, obs.gripper_open,
                float(np.linalg.norm(env.state.ee_pose.translation - prev)),
                action, obs,
            )
        )
    return Trajectory(task.task_id, seed, cfg.camera, frames, env.succeeded)


# ---------------------------------------------------------------------------
# Trajectory files


def save_trajectory(path, traj: Trajectory) -> None:
    if any(f.obs is None for f in traj.frames):
        raise ValueError("trajectory has unrendered frames; cannot serialize")
    t = len(traj.frames)
    h, w = traj.frames[0].obs.rgb.shape[:2]
    arrays = {
        "rgb": np.stack([f.obs.rgb for f in traj.frames]),
        "cloud": np.stack([f.obs.cloud for f in traj.frames]).astype(np.float32),
        "valid": np.stack([f.obs.cloud_valid for f in traj.frames]).astype(np.uint8),
        "proprio": np.stack([f.obs.proprio() for f in traj.frames]).astype(np.float32),
        "action": np.stack(
            [
                np.concatenate(
                    [f.action.target.translation, f.action.target.rotation,
                     [f.action.gripper]]
                )
                for f in traj.frames
            ]
        ).astype(np.float32),
        "velocity": np.array([f.velocity for f in traj.frames], dtype=np.float32),
        "gripper": np.array(
            [f.gripper_open for f in traj.frames], dtype=np.uint8
        ),
    }
    meta = {
        "kind": "trajectory",
        "format": 1,
        "task": traj.task_id,
        "seed": traj.seed,
        "success": bool(traj.success),
        "frames": t,
        "height": h,
        "width": w,
        "camera": {
            "intrinsics": traj.camera.intrinsics.ravel().tolist(),
            "extrinsics": traj.camera.extrinsics.ravel().tolist(),
            "width": traj.camera.width,
            "height": traj.camera.height,
        },
    }
    save_arrays(path, arrays, meta)


def load_trajectory(path) -> Trajectory:
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "trajectory":
        raise ValueError(f"{path} is not a trajectory file")
    cam_meta = meta["camera"]
    camera = CameraModel(
        np.array(cam_meta["intrinsics"]).reshape(3, 3),
        np.array(cam_meta["extrinsics"]).reshape(4, 4),
        cam_meta["width"],
        cam_meta["height"],
    )
    frames = []
    for i in range(meta["frames"]):
        proprio = arrays["proprio"][i].astype(np.float64)
        act = arrays["action"][i].astype(np.float64)
        ee = Pose(proprio[:3], proprio[3:7])
        obs = Observation(
            rgb=arrays["rgb"][i],
            cloud=arrays["cloud"][i],
            cloud_valid=arrays["valid"][i].astype(bool),
            ee_pose=ee,
            gripper_open=float(proprio[7]),
        )
        frames.append(
            TrajFrame(
                ee_pose=ee,
                gripper_open=float(proprio[7]),
                velocity=float(arrays["velocity"][i]),
                action=PoseAction(
                    Pose(act[:3], act[3:7]), float(np.clip(act[7], 0.0, 1.0))
                ),
                obs=obs,
            )
        )
    return Trajectory(
        meta["task"], meta["seed"], camera, frames, bool(meta["success"])
    )
