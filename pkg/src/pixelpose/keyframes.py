"""Keyframe discovery and demo augmentation.

A trajectory index t is a keyframe when any of three rules fires:

* ``gripper``  — the gripper state changed between t-1 and t;
* ``velocity`` — speed dropped below eps_v at t after being at or above it
  at t-1 (only the first frame of each low-speed run, so dwells do not
  flood the set);
* ``final``    — t is the trajectory's last index (always a keyframe).

Each keyframe carries an attention label: the end-effector position at the
NEXT keyframe projected into the image and clamped to its bounds; the final
keyframe labels itself.

Demo augmentation walks every consecutive keyframe segment (the segment
before the first keyframe starts at index 0) and emits one replay
transition from every Mth index of the segment to the segment's end
keyframe: the stored action is the absolute end-keyframe pose plus its
gripper state, the attention label points at the end-keyframe gripper
position, and transitions landing on the final keyframe carry reward +1
and the terminal flag.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pose, clamp_pixel, project_to_pixel
from .replay import Transition
from .teacher import Trajectory
from .world import PoseAction

RULE_GRIPPER = "gripper"
RULE_VELOCITY = "velocity"
RULE_FINAL = "final"


class KeyframeError(ValueError):
    """Keyframe inputs violate the operation contract."""


@dataclass(frozen=True)
class KeyframeSet:
    indices: tuple[int, ...]
    labels: tuple[tuple[int, int], ...]  # attention pixel (x, y) per keyframe
    rules: tuple[tuple[str, ...], ...]  # which rules fired per keyframe

    def __len__(self) -> int:
        return len(self.indices)


def _attention_label(traj: Trajectory, target_index: int) -> tuple[int, int]:
    pos = traj.frames[target_index].ee_pose.translation
    u, v, in_front = project_to_pixel(pos, traj.camera)
    if not in_front:
        u, v = 0.0, 0.0
    return clamp_pixel(u, v, traj.camera.width, traj.camera.height)


def discover_keyframes(traj: Trajectory, eps_v: float = 1e-3) -> KeyframeSet:
    """Apply the keyframe rule disjunction to a trajectory."""
    t_len = len(traj.frames)
    if t_len < 2:
        raise KeyframeError(f"trajectory too short ({t_len} frames)")
    fired: dict[int, list[str]] = {}
    for t in range(1, t_len):
        prev, cur = traj.frames[t - 1], traj.frames[t]
        rules = []
        if cur.gripper_open != prev.gripper_open:
            rules.append(RULE_GRIPPER)
        if cur.velocity < eps_v and prev.velocity >= eps_v:
            rules.append(RULE_VELOCITY)
        if t == t_len - 1:
            rules.append(RULE_FINAL)
        if rules:
            fired[t] = rules
    indices = sorted(fired)
    labels = []
    for pos, idx in enumerate(indices):
        nxt = indices[pos + 1] if pos + 1 < len(indices) else idx
        labels.append(_attention_label(traj, nxt))
    return KeyframeSet(
        tuple(indices), tuple(labels), tuple(tuple(fired[i]) for i in indices)
    )


def segment_starts(indices: tuple[int, ...]) -> list[tuple[int, int]]:
    """(start, end-keyframe) pairs; the first segment starts at index 0."""
    starts = [0] + list(indices[:-1])
    return list(zip(starts, indices))


def augment_demo(traj: Trajectory, kf: KeyframeSet, m: int) -> list[Transition]:
    """Emit replay transitions from every Mth trajectory point to the next
    keyframe. m=1 uses every index; m beyond any segment length degenerates
    to one transition per keyframe."""
    if m < 1:
        raise KeyframeError(f"stride m must be >= 1, got {m}")
    t_len = len(traj.frames)
    if not kf.indices:
        raise KeyframeError("empty keyframe set")
    if list(kf.indices) != sorted(set(kf.indices)) or kf.indices[-1] != t_len - 1:
        raise KeyframeError("keyframes do not belong to this trajectory")
    if any(f.obs is None for f in traj.frames):
        raise KeyframeError("trajectory has no observations; generate with render=True")

    final_index = t_len - 1
    out: list[Transition] = []
    for start, end in segment_starts(kf.indices):
        end_frame = traj.frames[end]
        action = PoseAction(
            Pose(
                end_frame.ee_pose.translation.copy(),
                end_frame.ee_pose.rotation.copy(),
            ),
            0.0 if end_frame.gripper_open else 1.0,
        )
        label = _attention_label(traj, end)
        terminal = end == final_index
        reward = 1.0 if terminal else 0.0
        for t in range(start, end, m):
            out.append(
                Transition(
                    obs=traj.frames[t].obs,
                    pixel=label,
                    action=action,
                    reward=reward,
                    next_obs=end_frame.obs,
                    terminal=terminal,
                    demo=True,
                )
            )
    return out


def count_augmented(indices: tuple[int, ...], m: int) -> int:
    """Closed-form transition count for a keyframe layout and stride."""
    total = 0
    for start, end in segment_starts(indices):
        total += int(np.ceil((end - start) / m))
    return total
