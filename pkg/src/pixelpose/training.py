"""End-to-end training orchestration.

The act loop runs three phases per macro-step — greedy attention pixel,
crop, sampled pose — hands the pose to the environment's planner, and
stores one transition carrying the chosen pixel and the step's reward.
Each train step samples one batch and updates the attention network, both
critics, and the actor, then Polyak-updates the three target networks.
Next-state crops for the critic target always come from the current online
attention network's argmax on the next observation; with attention
disabled, agents see the full image and the baseline single-Q critic is
used. Reward scaling happens inside the losses only.

Sync mode interleaves acting and training deterministically and is
bit-reproducible per seed. Async mode runs an actor and a learner thread
that share only the replay buffer and exchange parameters through atomic
checkpoint files every ``checkpoint_interval`` train steps.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .attention import QAttentionAgent, crop_observation
from .checkpoint import CheckpointError, load_arrays, save_arrays
from .config import RunConfig
from .encoding import (
    Workspace,
    cloud_to_tensor,
    pose_action_vec,
    proprio_vec,
    rgb_to_tensor,
)
from .keyframes import augment_demo, discover_keyframes
from .pose_agent import PoseAgent
from .replay import ReplayBuffer, Transition
from .sim import SimEnv
from .teacher import generate_demo
from .world import Observation

DEMO_SEED_BASE = 7_000_000  # all runs and methods share the same demos

METRIC_COLUMNS = (
    "env_step",
    "train_step",
    "eval_success_rate",
    "loss_qattention",
    "loss_critic1",
    "loss_critic2",
    "loss_actor",
)


@dataclass
class Agents:
    qatt: QAttentionAgent | None
    pose: PoseAgent
    workspace: Workspace


def build_agents(cfg: RunConfig, seed: int) -> Agents:
    sim_cfg = cfg.sim_config()
    workspace = sim_cfg.workspace
    init = np.random.SeedSequence([seed, 0x5EED]).generate_state(2)
    qatt = None
    if cfg.use_qattention:
        qatt = QAttentionAgent(
            workspace,
            lr=cfg.lr,
            gamma=cfg.gamma,
            lambda_reg=cfg.lambda_qreg if cfg.use_qreg else 0.0,
            reward_scale=cfg.reward_scale,
            tau=cfg.tau,
            seed=int(init[0]),
        )
    pose = PoseAgent(
        workspace,
        cfg=cfg.sac_config(),
        per_pixel=cfg.use_qattention,
        use_confidence=cfg.use_confidence and cfg.use_qattention,
        seed=int(init[1]),
    )
    return Agents(qatt=qatt, pose=pose, workspace=workspace)


# ---------------------------------------------------------------------------
# Demo prefill


def demo_transitions(cfg: RunConfig) -> list[Transition]:
    """Generate the shared demos, discover keyframes, and augment."""
    sim_cfg = cfg.sim_config()
    out: list[Transition] = []
    for i in range(cfg.demo_count):
        traj = generate_demo(cfg.task, DEMO_SEED_BASE + i, sim_cfg)
        kf = discover_keyframes(traj, cfg.keyframe_eps_v)
        stride = cfg.augment_stride if cfg.use_demo_aug else len(traj)
        out.extend(augment_demo(traj, kf, stride))
    return out


def prefill(cfg: RunConfig, transitions: list[Transition] | None = None) -> ReplayBuffer:
    """Fresh replay buffer holding the demo transitions."""
    buf = ReplayBuffer(cfg.replay_capacity)
    buf.extend(demo_transitions(cfg) if transitions is None else transitions)
    return buf


# ---------------------------------------------------------------------------
# Batch preparation


def _encode_full(obs_list: list[Observation], workspace: Workspace):
    rgb = rgb_to_tensor(np.stack([o.rgb for o in obs_list]))
    cloud = cloud_to_tensor(
        np.stack([o.cloud for o in obs_list]),
        np.stack([o.cloud_valid for o in obs_list]),
        workspace,
    )
    return rgb, cloud

def _encode_crops(crops, workspace: Workspace):
    rgb = rgb_to_tensor(np.stack([c.rgb for c in crops]))
    cloud = cloud_to_tensor(
        np.stack([c.cloud for c in crops]),
        np.stack([c.valid for c in crops]),
        workspace,
    )
    return rgb, cloud


def make_qatt_batch(transitions: list[Transition], agents: Agents) -> dict:
    """Full-image tensors for the attention TD loss."""
    ws = agents.workspace
    rgb, cloud = _encode_full([t.obs for t in transitions], ws)
    next_rgb, next_cloud = _encode_full([t.next_obs for t in transitions], ws)
    return {
        "rgb": rgb,
        "cloud": cloud,
        "next_rgb": next_rgb,
        "next_cloud": next_cloud,
        "px": torch.tensor([t.pixel[0] for t in transitions], dtype=torch.long),
        "py": torch.tensor([t.pixel[1] for t in transitions], dtype=torch.long),
        "reward": torch.tensor([t.reward for t in transitions], dtype=torch.float32),
        "terminal": torch.tensor(
            [1.0 if t.terminal else 0.0 for t in transitions], dtype=torch.float32
        ),
    }


def make_pose_batch(
    transitions: list[Transition], cfg: RunConfig, agents: Agents
) -> dict:
    """Crop-level tensors for the critic/actor losses.

    The next-observation crop pixels are chosen by the current online
    attention network before any update this step; without attention the
    agents see the full image.
    """
    ws = agents.workspace
    obs = [t.obs for t in transitions]
    next_obs = [t.next_obs for t in transitions]
    if agents.qatt is not None:
        next_rgb, next_cloud = _encode_full(next_obs, ws)
        next_pixels = agents.qatt.select_pixels_batch(next_rgb, next_cloud)
        crop_c = cfg.crop_size
    else:
        center = (cfg.image_size // 2, cfg.image_size // 2)
        next_pixels = [center] * len(transitions)
        crop_c = cfg.image_size

    crops = [crop_observation(t.obs, t.pixel, crop_c) for t in transitions]
    next_crops = [
        crop_observation(t.next_obs, tuple(px), crop_c)
        for t, px in zip(transitions, next_pixels)
    ]
    crop_rgb, crop_cloud = _encode_crops(crops, ws)
    next_crop_rgb, next_crop_cloud = _encode_crops(next_crops, ws)
    return {
        "rgb": crop_rgb,
        "cloud": crop_cloud,
        "proprio": torch.tensor(
            np.stack([proprio_vec(o, ws) for o in obs]), dtype=torch.float32
        ),
        "action": torch.tensor(
            np.stack([pose_action_vec(t.action, ws) for t in transitions]),
            dtype=torch.float32,
        ),
        "reward": torch.tensor([t.reward for t in transitions], dtype=torch.float32),
        "terminal": torch.tensor(
            [1.0 if t.terminal else 0.0 for t in transitions], dtype=torch.float32
        ),
        "next_rgb": next_crop_rgb,
        "next_cloud": next_crop_cloud,
        "next_proprio": torch.tensor(
            np.stack([proprio_vec(o, ws) for o in next_obs]), dtype=torch.float32
        ),
    }


def make_batches(
    transitions: list[Transition],
    cfg: RunConfig,
    agents: Agents,
) -> tuple[dict | None, dict]:
    qatt_batch = make_qatt_batch(transitions, agents) if agents.qatt else None
    return qatt_batch, make_pose_batch(transitions, cfg, agents)


# ---------------------------------------------------------------------------
# Acting and training steps


class EnvLoop:
    """Owns one training environment and auto-resets finished episodes."""

    def __init__(self, cfg: RunConfig, env_rng: np.random.Generator):
        self.env = SimEnv(cfg.task, cfg.sim_config())
        self.env_rng = env_rng
        self.obs: Observation | None = None

    def current_obs(self) -> Observation:
        if self.obs is None or self.env.terminal:
            self.obs = self.env.reset(int(self.env_rng.integers(2**31)))
        return self.obs


def _select_and_encode(obs: Observation, cfg: RunConfig, agents: Agents):
    if agents.qatt is not None:
        pixel = agents.qatt.select_pixel(obs)
        crop_c = cfg.crop_size
    else:
        pixel = (cfg.image_size // 2, cfg.image_size // 2)
        crop_c = cfg.image_size
    cp = crop_observation(obs, pixel, crop_c)
    rgb = rgb_to_tensor(cp.rgb)
    cloud = cloud_to_tensor(cp.cloud, cp.valid, agents.workspace)
    proprio = torch.tensor(
        proprio_vec(obs, agents.workspace)[None], dtype=torch.float32
    )
    return pixel, rgb, cloud, proprio


def act_step(
    loop: EnvLoop, agents: Agents, cfg: RunConfig, rng: np.random.Generator
) -> Transition:
    """One environment macro-step: attention pixel, crop, sampled pose, plan."""
    obs = loop.current_obs()
    pixel, rgb, cloud, proprio = _select_and_encode(obs, cfg, agents)
    action, _ = agents.pose.act(rgb, cloud, proprio, rng, greedy=False)
    next_obs, reward, terminal = loop.env.step(action)
    loop.obs = next_obs
    return Transition(
        obs=obs,
        pixel=pixel,
        action=action,
        reward=reward,
        next_obs=next_obs,
        terminal=terminal,
        demo=False,
    )


def train_step(
    buffer: ReplayBuffer,
    agents: Agents,
    cfg: RunConfig,
    rng: np.random.Generator,
) -> dict[str, float]:
    transitions = buffer.sample(cfg.batch_size, rng)
    qatt_batch, pose_batch = make_batches(transitions, cfg, agents)
    losses: dict[str, float] = {}
    if agents.qatt is not None:
        losses["qattention"] = agents.qatt.update(qatt_batch)
    losses.update(agents.pose.update(pose_batch, rng))
    for name, value in losses.items():
        if not np.isfinite(value):
            raise RuntimeError(f"non-finite {name} loss: {value}")
    return losses


def evaluate(
    agents: Agents, cfg: RunConfig, seeds: list[int]
) -> float:
    """Greedy success rate over fresh episode seeds."""
    env = SimEnv(cfg.task, cfg.sim_config())
    resample_rng = np.random.default_rng(0)
    successes = 0
    for s in seeds:
        obs = env.reset(int(s))
        terminal = False
        while not terminal:
            _, rgb, cloud, proprio = _select_and_encode(obs, cfg, agents)
            action, _ = agents.pose.act(rgb, cloud, proprio, resample_rng, greedy=True)
            obs, _, terminal = env.step(action)
        successes += int(env.succeeded)
    return successes / len(seeds)


# ---------------------------------------------------------------------------
# Metrics and checkpoints


class MetricsWriter:
    """Append-only CSV; one writer lock makes rows atomic across threads."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        with open(self.path, "w", encoding="utf-8") as f:
            f.write(",".join(METRIC_COLUMNS) + "\n")

    def _write(self, row: dict) -> None:
        cells = []
        for col in METRIC_COLUMNS:
            v = row.get(col)
            cells.append("" if v is None else (repr(v) if isinstance(v, float) else str(v)))
        line = ",".join(cells) + "\n"
        with self._lock, open(self.path, "a", encoding="utf-8") as f:
            f.write(line)

    def log_losses(self, env_step: int, train_step_n: int, losses: dict) -> None:
        self._write(
            {
                "env_step": env_step,
                "train_step": train_step_n,
                "loss_qattention": losses.get("qattention"),
                "loss_critic1": losses.get("critic1"),
                "loss_critic2": losses.get("critic2"),
                "loss_actor": losses.get("actor"),
            }
        )

    def log_eval(self, env_step: int, train_step_n: int, rate: float) -> None:
        self._write(
            {
                "env_step": env_step,
                "train_step": train_step_n,
                "eval_success_rate": float(rate),
            }
        )


def save_run_checkpoint(path, agents: Agents, meta: dict) -> None:
    arrays = agents.pose.state_arrays()
    if agents.qatt is not None:
        arrays.update(agents.qatt.state_arrays())
    save_arrays(path, arrays, meta)


def load_run_checkpoint(path, agents: Agents) -> dict:
    arrays, meta = load_arrays(path)
    agents.pose.load_state_arrays(arrays)
    if agents.qatt is not None:
        agents.qatt.load_state_arrays(arrays)
    return meta


# ---------------------------------------------------------------------------
# Run drivers


def _run_rngs(seed: int):
    ss = np.random.SeedSequence([seed, 0xC0FFEE])
    env_ss, act_ss, replay_ss, eval_ss = ss.spawn(4)
    return (
        np.random.default_rng(env_ss),
        np.random.default_rng(act_ss),
        np.random.default_rng(replay_ss),
        np.random.default_rng(eval_ss),
    )


def run_single(
    cfg: RunConfig,
    seed: int,
    run_dir,
    demos: list[Transition] | None = None,
) -> dict:
    """One seed, sync or async per cfg.mode. Returns a summary dict."""
    if cfg.torch_threads > 0:
        torch.set_num_threads(cfg.torch_threads)
    run_dir = Path(run_dir)
    (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    buffer = prefill(cfg, demos)
    agents = build_agents(cfg, seed)
    writer = MetricsWriter(run_dir / "metrics.csv")
    if cfg.mode == "async":
        summary = _drive_async(cfg, seed, run_dir, buffer, agents, writer)
    else:
        summary = _drive_sync(cfg, seed, run_dir, buffer, agents, writer)
    with open(run_dir / "summary.json", "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    return summary


def _drive_sync(cfg, seed, run_dir, buffer, agents, writer) -> dict:
    env_rng, act_rng, replay_rng, eval_rng = _run_rngs(seed)
    loop = EnvLoop(cfg, env_rng)
    ckpt = run_dir / "checkpoints" / "latest.ckpt"
    train_steps = 0
    env_steps = 0
    last_eval = 0.0
    stopped_early = False
    for env_steps in range(1, cfg.env_steps + 1):
        buffer.add(act_step(loop, agents, cfg, act_rng))
        for _ in range(cfg.train_steps_per_env_step):
            losses = train_step(buffer, agents, cfg, replay_rng)
            train_steps += 1
            if train_steps % cfg.log_interval == 0:
                writer.log_losses(env_steps, train_steps, losses)
            if train_steps % cfg.checkpoint_interval == 0:
                save_run_checkpoint(ckpt, agents, {"train_step": train_steps})
        if cfg.eval_interval and env_steps % cfg.eval_interval == 0:
            seeds = [int(s) for s in eval_rng.integers(2**31, size=cfg.eval_episodes)]
            last_eval = evaluate(agents, cfg, seeds)
            writer.log_eval(env_steps, train_steps, last_eval)
            if cfg.early_stop_success and last_eval >= cfg.early_stop_success:
                stopped_early = True
                break
    save_run_checkpoint(ckpt, agents, {"train_step": train_steps})
    return {
        "seed": seed,
        "mode": "sync",
        "env_steps": env_steps,
        "train_steps": train_steps,
        "final_eval_success": last_eval,
        "stopped_early": stopped_early,
    }


def _drive_async(cfg, seed, run_dir, buffer, agents, writer) -> dict:
    """Actor (this thread) + learner (worker thread) exchanging checkpoints."""
    env_rng, act_rng, replay_rng, eval_rng = _run_rngs(seed)
    ckpt = run_dir / "checkpoints" / "latest.ckpt"
    stop = threading.Event()
    state = {"train_steps": 0, "learner_error": None}

    learner_agents = agents
    save_run_checkpoint(ckpt, learner_agents, {"train_step": 0})

    def learner():
        try:
            while not stop.is_set():
                losses = train_step(buffer, learner_agents, cfg, replay_rng)
                state["train_steps"] += 1
                n = state["train_steps"]
                if n % cfg.log_interval == 0:
                    writer.log_losses(-1, n, losses)
                if n % cfg.checkpoint_interval == 0:
                    save_run_checkpoint(ckpt, learner_agents, {"train_step": n})
        except Exception as e:  # surfaced to the actor thread
            state["learner_error"] = e
            stop.set()

    worker = threading.Thread(target=learner, name="learner", daemon=True)
    worker.start()

    actor_agents = build_agents(cfg, seed)
    loop = EnvLoop(cfg, env_rng)
    seen_ckpt = -1
    last_eval = 0.0
    env_steps = 0
    stopped_early = False
    try:
        for env_steps in range(1, cfg.env_steps + 1):
            for _ in range(3):  # tolerate a checkpoint replaced mid-poll
                try:
                    _, meta = load_arrays(ckpt)
                    if meta.get("train_step", -1) != seen_ckpt:
                        meta = load_run_checkpoint(ckpt, actor_agents)
                        seen_ckpt = meta.get("train_step", -1)
                    break
                except CheckpointError:
                    time.sleep(0.01)
            buffer.add(act_step(loop, actor_agents, cfg, act_rng))
            if cfg.eval_interval and env_steps % cfg.eval_interval == 0:
                seeds = [int(s) for s in eval_rng.integers(2**31, size=cfg.eval_episodes)]
                last_eval = evaluate(actor_agents, cfg, seeds)
                writer.log_eval(env_steps, state["train_steps"], last_eval)
                if cfg.early_stop_success and last_eval >= cfg.early_stop_success:
                    stopped_early = True
                    break
            if state["learner_error"] is not None:
                raise state["learner_error"]
    finally:
        stop.set()
        worker.join()
    save_run_checkpoint(ckpt, learner_agents, {"train_step": state["train_steps"]})
    return {
        "seed": seed,
        "mode": "async",
        "env_steps": env_steps,
        "train_steps": state["train_steps"],
        "final_eval_success": last_eval,
        "stopped_early": stopped_early,
    }


def run(cfg: RunConfig, out_dir) -> dict:
    """Run every seed in cfg.seeds under one output directory."""
    from .config import save_config

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(out / "config.cfg", cfg)
    demos = demo_transitions(cfg)
    results = {}
    for seed in cfg.seeds:
        results[str(seed)] = run_single(cfg, seed, out / f"seed_{seed}", demos)
    with open(out / "summary.json", "w", encoding="utf-8") as f:
        json.dump(results, f, indent=2, sort_keys=True)
    return results


# ---------------------------------------------------------------------------
# Curve aggregation (metrics -> mean/min/max over seeds)


def read_eval_rows(csv_path) -> list[tuple[int, float]]:
    rows = []
    with open(csv_path, "r", encoding="utf-8") as f:
        header = f.readline().strip().split(",")
        i_step = header.index("env_step")
        i_rate = header.index("eval_success_rate")
        for line in f:
            cells = line.rstrip("\n").split(",")
            if cells[i_rate] != "":
                rows.append((int(cells[i_step]), float(cells[i_rate])))
    return rows


def aggregate_eval_curves(csv_paths) -> list[dict]:
    """Align evaluation rows by env_step across runs; mean/min/max per step."""
    by_step: dict[int, list[float]] = {}
    for path in csv_paths:
        for step, rate in read_eval_rows(path):
            by_step.setdefault(step, []).append(rate)
    out = []
    for step in sorted(by_step):
        vals = by_step[step]
        out.append(
            {
                "env_step": step,
                "mean": float(np.mean(vals)),
                "min": float(np.min(vals)),
                "max": float(np.max(vals)),
                "n": len(vals),
            }
        )
    return out


def write_curve_csv(path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("env_step,mean,min,max,n\n")
        for r in rows:
            f.write(
                f"{r['env_step']},{r['mean']!r},{r['min']!r},{r['max']!r},{r['n']}\n"
            )
