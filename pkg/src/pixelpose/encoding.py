"""Input encodings shared by the learning agents.

RGB is scaled to [0, 1]. Point clouds are normalized by the workspace box
(subtract center, divide by half-extent); invalid points stay zero and the
validity mask rides along as a fourth channel. Proprioception and pose
actions share one 8-vector layout: normalized translation (3), canonical
quaternion xyzw (4), gripper in [-1, 1].
"""

from __future__ import annotations

import numpy as np
import torch

from .world import Observation, PoseAction

Workspace = tuple[np.ndarray, np.ndarray]  # (lo, hi) corners


def workspace_frame(workspace: Workspace) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = workspace
    return (lo + hi) / 2.0, (hi - lo) / 2.0


def rgb_to_tensor(rgb: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """(..., H, W, 3) uint8 -> (..., 3, H, W) float in [0, 1]."""
    arr = np.asarray(rgb)
    if arr.ndim == 3:
        arr = arr[None]
    t = torch.from_numpy(np.ascontiguousarray(arr)).to(dtype) / 255.0
    return t.permute(0, 3, 1, 2)


def cloud_to_tensor(
    cloud: np.ndarray,
    valid: np.ndarray,
    workspace: Workspace,
    dtype=torch.float32,
) -> torch.Tensor:
    """(..., H, W, 3) points + (..., H, W) mask -> (..., 4, H, W) tensor."""
    cloud = np.asarray(cloud)
    valid = np.asarray(valid)
    if cloud.ndim == 3:
        cloud = cloud[None]
        valid = valid[None]
    center, half = workspace_frame(workspace)
    pts = (cloud - center) / half
    pts = pts * valid[..., None]
    feats = np.concatenate([pts, valid[..., None].astype(pts.dtype)], axis=-1)
    return torch.from_numpy(np.ascontiguousarray(feats)).to(dtype).permute(0, 3, 1, 2)


def proprio_vec(obs: Observation, workspace: Workspace) -> np.ndarray:
    center, half = workspace_frame(workspace)
    t = (obs.ee_pose.translation - center) / half
    return np.concatenate(
        [t, obs.ee_pose.rotation, [2.0 * obs.gripper_open - 1.0]]
    )


def pose_action_vec(action: PoseAction, workspace: Workspace) -> np.ndarray:
    """Canonical 8-vector form of a pose action (inverse of the raw->pose map
    up to quaternion normalization)."""
    center, half = workspace_frame(workspace)
    t = (action.target.translation - center) / half
    return np.concatenate(
        [t, action.target.rotation, [2.0 * action.gripper - 1.0]]
    )
