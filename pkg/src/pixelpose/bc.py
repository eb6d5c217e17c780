"""Behavioural-cloning baseline.

Supervised regression of the full-image actor onto keyframe actions:
squared error on the raw-space pose target (inverse of the pose mapping)
and binary cross-entropy on the gripper bit. The dataset comes from the
same keyframe discovery and demo augmentation as RL prefill; training never
touches the environment, evaluation uses the standard greedy protocol.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from . import nets
from .config import RunConfig
from .encoding import cloud_to_tensor, pose_action_vec, proprio_vec, rgb_to_tensor
from .keyframes import augment_demo, discover_keyframes
from .pose_agent import actor_forward, deterministic_action
from .replay import Transition
from .teacher import Trajectory
from .training import Agents, build_agents, evaluate, save_run_checkpoint


def bc_dataset(trajectories: list[Trajectory], cfg: RunConfig) -> list[Transition]:
    """Keyframe-discovered, augmented transitions from demonstrations."""
    if not trajectories:
        raise ValueError("behavioural cloning needs at least one demonstration")
    out: list[Transition] = []
    for traj in trajectories:
        kf = discover_keyframes(traj, cfg.keyframe_eps_v)
        stride = cfg.augment_stride if cfg.use_demo_aug else len(traj)
        out.extend(augment_demo(traj, kf, stride))
    return out


def _bc_loss(actor_params, rgb, cloud, proprio, targets) -> torch.Tensor:
    mean, _ = actor_forward(actor_params, rgb, cloud, proprio)
    a = deterministic_action(mean)
    pose_err = ((a[:, :7] - targets[:, :7]) ** 2).mean()
    grip_prob = ((a[:, 7] + 1.0) / 2.0).clamp(1e-6, 1.0 - 1e-6)
    grip_target = (targets[:, 7] + 1.0) / 2.0
    bce = -(
        grip_target * torch.log(grip_prob)
        + (1.0 - grip_target) * torch.log(1.0 - grip_prob)
    ).mean()
    return pose_err + bce


def bc_train(
    trajectories: list[Trajectory],
    epochs: int,
    cfg: RunConfig,
    seed: int = 0,
    run_dir=None,
    eval_after: bool = True,
) -> dict:
    """Train the baseline actor; returns epoch losses, checkpoint path, and
    (optionally) the greedy evaluation success rate."""
    bc_cfg = RunConfig(
        **{
            **{f: getattr(cfg, f) for f in cfg.__dataclass_fields__},
            "use_qattention": False,
            "use_confidence": False,
        }
    )
    data = bc_dataset(trajectories, bc_cfg)
    agents = build_agents(bc_cfg, seed)
    ws = agents.workspace

    rgb = rgb_to_tensor(np.stack([t.obs.rgb for t in data]))
    cloud = cloud_to_tensor(
        np.stack([t.obs.cloud for t in data]),
        np.stack([t.obs.cloud_valid for t in data]),
        ws,
    )
    proprio = torch.tensor(
        np.stack([proprio_vec(t.obs, ws) for t in data]), dtype=torch.float32
    )
    targets = torch.tensor(
        np.stack([pose_action_vec(t.action, ws) for t in data]), dtype=torch.float32
    )

    opt = nets.Adam(agents.pose.actor, bc_cfg.lr)
    rng = np.random.default_rng(seed)
    n = len(data)
    batch = min(bc_cfg.batch_size, n)
    epoch_losses: list[float] = []
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = torch.from_numpy(order[start : start + batch].copy())
            fn = lambda p: _bc_loss(
                p, rgb[idx], cloud[idx], proprio[idx], targets[idx]
            )
            grads = nets.gradients(fn, agents.pose.actor)
            opt.step(grads)
        with torch.no_grad():
            epoch_losses.append(
                float(_bc_loss(agents.pose.actor, rgb, cloud, proprio, targets))
            )

    summary = {"epochs": epochs, "epoch_losses": epoch_losses, "samples": n}
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        ckpt = run_dir / "bc.ckpt"
        save_run_checkpoint(ckpt, agents, {"kind": "bc", "epochs": epochs})
        summary["checkpoint"] = str(ckpt)
    if eval_after:
        eval_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBC]))
        seeds = [int(s) for s in eval_rng.integers(2**31, size=bc_cfg.eval_episodes)]
        summary["eval_success_rate"] = evaluate(agents, bc_cfg, seeds)
    if run_dir is not None:
        with open(Path(run_dir) / "summary.json", "w", encoding="utf-8") as f:
            json.dump(summary, f, indent=2, sort_keys=True)
    return summary
