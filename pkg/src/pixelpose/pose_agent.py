"""Next-best-pose agent: a maximum-entropy actor over translation,
quaternion, and gripper, trained against twin confidence-aware per-pixel
critics with clipped double-Q targets.

The actor emits a squashed 8-vector (tanh of a reparameterized Gaussian);
log-probabilities are computed in that raw space. The deterministic map to
a pose scales the translation into the workspace box, normalizes the
quaternion to the canonical w >= 0 form, and shifts the gripper into
[0, 1]. Critics score a crop/proprioception/action triple with one Q value
and one confidence per crop pixel; the Bellman loss is confidence-weighted
with a -w*log(c) regularizer, and the highest-confidence pixel's Q feeds
both the actor objective and the bootstrap target. A single-Q variant
(global pooling head, no confidence) serves as the no-attention baseline
critic, and the confidence weighting can be disabled independently, which
reduces the loss to the plain per-pixel Bellman residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from . import nets
from .encoding import Workspace, workspace_frame
from .geometry import Pose, canonicalize
from .nets import Adam, ParamBuilder, ParamSet, ShapeError
from .world import PoseAction

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
# Confidence range (CONF_FLOOR, CONF_CEIL). The Bellman gradient of every
# map pixel is scaled by its confidence, so a floor well above zero keeps
# value learning alive even when large early TD errors push the optimum
# w/delta^2 toward zero; the ceiling keeps log(c) finite.
CONF_FLOOR = 0.02
CONF_CEIL = 0.999
ACTION_DIM = 8
PROPRIO_DIM = 8


class QuatResampleError(ValueError):
    """The raw quaternion block was too close to zero to normalize."""


@dataclass(frozen=True)
class SACConfig:
    gamma: float = 0.9
    alpha: float = 0.01
    w_conf: float = 0.1
    tau: float = 5.0 ** -4
    lr: float = 3e-3
    reward_scale: float = 100.0
    batch_size: int = 32

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must be in (0, 1], got {self.tau}")
        if self.reward_scale <= 0.0:
            raise ValueError("reward_scale must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@dataclass
class CriticOutput:
    q_map: torch.Tensor  # (B, c, c)
    conf: torch.Tensor  # (B, c, c), strictly inside (0, 1)


# ---------------------------------------------------------------------------
# Networks (all trunks pool globally, so one architecture serves any crop or
# full-image input size)

ACTOR_WIDTHS = (16, 32, 64)  # stem, conv trunk, dense nodes
CRITIC_WIDTHS = (16, 32, 64)  # stem, residual channels, dense nodes


def build_actor(
    rng: np.random.Generator | int,
    dtype: torch.dtype = torch.float32,
    widths: tuple[int, int, int] = ACTOR_WIDTHS,
) -> ParamSet:
    stem, trunk, nodes = widths
    b = ParamBuilder(rng, dtype)
    b.conv("stem_rgb", 3, stem)
    b.conv("stem_cloud", 4, stem)
    b.conv("conv1", 2 * stem + PROPRIO_DIM, trunk)
    b.conv("conv2", trunk, trunk)
    b.conv("conv3", trunk, trunk)
    b.dense("d1", trunk, nodes)
    b.dense("d2", nodes, nodes)
    b.dense("head", nodes, 2 * ACTION_DIM)
    return b.params


def _fused_stem(params: ParamSet, rgb: torch.Tensor, cloud: torch.Tensor) -> torch.Tensor:
    if rgb.ndim != 4 or cloud.ndim != 4 or rgb.shape[2:] != cloud.shape[2:]:
        raise ShapeError(
            f"expected matching NCHW crops, got {tuple(rgb.shape)} / {tuple(cloud.shape)}"
        )
    return torch.cat(
        [
            nets.conv2d(params, "stem_rgb", rgb),
            nets.conv2d(params, "stem_cloud", cloud),
        ],
        dim=1,
    )


def actor_forward(
    params: ParamSet,
    rgb: torch.Tensor,
    cloud: torch.Tensor,
    proprio: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Returns (mean, log_std), each (B, 8); log_std clamped to [-20, 2]."""
    stem = _fused_stem(params, rgb, cloud)
    h, w = stem.shape[2], stem.shape[3]
    x = torch.cat([stem, nets.tile_to_map(proprio, h, w)], dim=1)
    x = nets.conv2d(params, "conv1", x, stride=2)
    x = nets.conv2d(params, "conv2", x, stride=2)
    x = nets.conv2d(params, "conv3", x, stride=2)
    x = nets.global_max_pool(x)
    x = nets.dense(params, "d1", x)
    x = nets.dense(params, "d2", x)
    out = nets.dense(params, "head", x, act="linear")
    mean = out[:, :ACTION_DIM]
    log_std = torch.clamp(out[:, ACTION_DIM:], LOG_STD_MIN, LOG_STD_MAX)
    return mean, log_std


def build_critic(
    rng: np.random.Generator | int,
    per_pixel: bool = True,
    dtype: torch.dtype = torch.float32,
    widths: tuple[int, int, int] = CRITIC_WIDTHS,
) -> ParamSet:
    stem, channels, nodes = widths
    b = ParamBuilder(rng, dtype)
    b.conv("stem_rgb", 3, stem)
    b.conv("stem_cloud", 4, stem)
    fused = 2 * stem + PROPRIO_DIM + ACTION_DIM  # stems + tiled proprio/action
    stride = 1 if per_pixel else 2
    b.residual("res1", fused, channels, stride=stride)
    b.residual("res2", channels, channels, stride=stride)
    b.residual("res3", channels, channels, stride=stride)
    if per_pixel:
        b.conv("head", channels, 2, layer_norm=False)
    else:
        b.dense("d1", channels, nodes)
        b.dense("d2", nodes, nodes)
        b.dense("head", nodes, 1)
    return b.params


def critic_forward(
    params: ParamSet,
    rgb: torch.Tensor,
    cloud: torch.Tensor,
    proprio: torch.Tensor,
    action: torch.Tensor,
) -> CriticOutput:
    """Per-pixel critic: (B, c, c) Q map and (B, c, c) confidences."""
    stem = _fused_stem(params, rgb, cloud)
    h, w = stem.shape[2], stem.shape[3]
    x = torch.cat(
        [stem, nets.tile_to_map(proprio, h, w), nets.tile_to_map(action, h, w)],
        dim=1,
    )
    x = nets.residual_block(params, "res1", x)
    x = nets.residual_block(params, "res2", x)
    x = nets.residual_block(params, "res3", x)
    out = nets.conv2d(params, "head", x, layer_norm=False, act="linear")
    conf = CONF_FLOOR + (CONF_CEIL - CONF_FLOOR) * torch.sigmoid(out[:, 1])
    return CriticOutput(q_map=out[:, 0], conf=conf)


def critic_forward_single(
    params: ParamSet,
    rgb: torch.Tensor,
    cloud: torch.Tensor,
    proprio: torch.Tensor,
    action: torch.Tensor,
) -> torch.Tensor:
    """Baseline critic: one Q value per sample, (B,)."""
    stem = _fused_stem(params, rgb, cloud)
    h, w = stem.shape[2], stem.shape[3]
    x = torch.cat(
        [stem, nets.tile_to_map(proprio, h, w), nets.tile_to_map(action, h, w)],
        dim=1,
    )
    x = nets.residual_block(params, "res1", x, stride=2)
    x = nets.residual_block(params, "res2", x, stride=2)
    x = nets.residual_block(params, "res3", x, stride=2)
    x = nets.global_max_pool(x)
    x = nets.dense(params, "d1", x)
    x = nets.dense(params, "d2", x)
    return nets.dense(params, "head", x, act="linear")[:, 0]


# ---------------------------------------------------------------------------
# Action sampling and mapping


def sample_action(
    mean: torch.Tensor, log_std: torch.Tensor, noise: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Reparameterized tanh-squashed Gaussian sample and its log-probability.

    noise is standard normal of mean's shape (callers own the RNG). The
    log-probability includes the tanh change-of-variables correction and is
    summed over action dimensions.
    """
    std = torch.exp(log_std)
    x = mean + std * noise
    raw = torch.tanh(x)
    log_prob = (
        -0.5 * ((x - mean) / std) ** 2
        - log_std
        - 0.5 * math.log(2.0 * math.pi)
        - torch.log(1.0 - raw ** 2 + 1e-6)
    ).sum(dim=-1)
    return raw, log_prob


def deterministic_action(mean: torch.Tensor) -> torch.Tensor:
    return torch.tanh(mean)


def raw_to_pose(raw: np.ndarray, workspace: Workspace) -> PoseAction:
    """Map a squashed 8-vector into a workspace pose action.

    Translation scales into the workspace box, the quaternion block is
    normalized to the canonical form (raising QuatResampleError if its norm
    is below 1e-6), and the gripper maps from (-1, 1) to [0, 1].
    """
    raw = np.asarray(raw, dtype=np.float64)
    center, half = workspace_frame(workspace)
    quat = raw[3:7]
    if float(np.linalg.norm(quat)) < 1e-6:
        raise QuatResampleError("quaternion block has near-zero norm; resample")
    return PoseAction(
        Pose(center + raw[:3] * half, canonicalize(quat)),
        float(np.clip((raw[7] + 1.0) / 2.0, 0.0, 1.0)),
    )


def action_vec_from_raw(raw: torch.Tensor) -> torch.Tensor:
    """Differentiable canonical action features: raw translation and gripper
    pass through, the quaternion block is unit-normalized with w >= 0."""
    quat = raw[:, 3:7]
    norm = quat.norm(dim=1, keepdim=True).clamp_min(1e-8)
    unit = quat / norm
    sign = torch.where(unit[:, 3:4] < 0.0, -1.0, 1.0)
    return torch.cat([raw[:, 0:3], unit * sign, raw[:, 7:8]], dim=1)


# ---------------------------------------------------------------------------
# Losses


def confidence_loss_terms(
    sq_err: torch.Tensor, conf: torch.Tensor, w_conf: float
) -> torch.Tensor:
    """Per-pixel confidence-weighted Bellman terms: err^2 * c - w * log(c).

    The stationary point in c is w / err^2, so confidences learn to rate
    each pixel's Bellman accuracy.
    """
    return sq_err * conf - w_conf * torch.log(conf)


def critic_value(
    params: ParamSet,
    rgb: torch.Tensor,
    cloud: torch.Tensor,
    proprio: torch.Tensor,
    action: torch.Tensor,
    per_pixel: bool,
    use_confidence: bool,
) -> torch.Tensor:
    """Scalar Q per sample: the critic's own highest-confidence pixel when
    confidences are on, the spatial mean without them, or the single head."""
    if not per_pixel:
        return critic_forward_single(params, rgb, cloud, proprio, action)
    out = critic_forward(params, rgb, cloud, proprio, action)
    if use_confidence:
        flat_q = out.q_map.flatten(1)
        idx = out.conf.flatten(1).argmax(dim=1)
        return flat_q[torch.arange(flat_q.shape[0]), idx]
    return out.q_map.mean(dim=(1, 2))


def sac_target(
    batch: dict[str, torch.Tensor],
    actor_params: ParamSet,
    target_critic1: ParamSet,
    target_critic2: ParamSet,
    cfg: SACConfig,
    noise: torch.Tensor,
    per_pixel: bool = True,
    use_confidence: bool = True,
) -> torch.Tensor:
    """Shared scalar TD target with the clipped double-Q trick."""
    with torch.no_grad():
        mean, log_std = actor_forward(
            actor_params, batch["next_rgb"], batch["next_cloud"], batch["next_proprio"]
        )
        raw, log_prob = sample_action(mean, log_std, noise)
        avec = action_vec_from_raw(raw)
        q1 = critic_value(
            target_critic1, batch["next_rgb"], batch["next_cloud"],
            batch["next_proprio"], avec, per_pixel, use_confidence,
        )
        q2 = critic_value(
            target_critic2, batch["next_rgb"], batch["next_cloud"],
            batch["next_proprio"], avec, per_pixel, use_confidence,
        )
        soft_q = torch.minimum(q1, q2) - cfg.alpha * log_prob
        return (
            batch["reward"] * cfg.reward_scale
            + cfg.gamma * (1.0 - batch["terminal"]) * soft_q
        )


def critic_loss(
    params: ParamSet,
    batch: dict[str, torch.Tensor],
    y: torch.Tensor,
    cfg: SACConfig,
    per_pixel: bool = True,
    use_confidence: bool = True,
) -> torch.Tensor:
    """One critic's loss against the shared target y."""
    if not per_pixel:
        q = critic_forward_single(
            params, batch["rgb"], batch["cloud"], batch["proprio"], batch["action"]
        )
        return ((y - q) ** 2).mean()
    out = critic_forward(
        params, batch["rgb"], batch["cloud"], batch["proprio"], batch["action"]
    )
    sq_err = (y[:, None, None] - out.q_map) ** 2
    if use_confidence:
        return confidence_loss_terms(sq_err, out.conf, cfg.w_conf).mean()
    return sq_err.mean()


def actor_loss(
    actor_params: ParamSet,
    critic1: ParamSet,
    critic2: ParamSet,
    batch: dict[str, torch.Tensor],
    cfg: SACConfig,
    noise: torch.Tensor,
    per_pixel: bool = True,
    use_confidence: bool = True,
) -> torch.Tensor:
    """Entropy-regularized policy objective against the clipped critics."""
    mean, log_std = actor_forward(
        actor_params, batch["rgb"], batch["cloud"], batch["proprio"]
    )
    raw, log_prob = sample_action(mean, log_std, noise)
    avec = action_vec_from_raw(raw)
    q1 = critic_value(
        critic1, batch["rgb"], batch["cloud"], batch["proprio"], avec,
        per_pixel, use_confidence,
    )
    q2 = critic_value(
        critic2, batch["rgb"], batch["cloud"], batch["proprio"], avec,
        per_pixel, use_confidence,
    )
    return (cfg.alpha * log_prob - torch.minimum(q1, q2)).mean()


# ---------------------------------------------------------------------------
# Agent


class PoseAgent:
    """Actor, twin critics, target critics, and their optimizers."""

    def __init__(
        self,
        workspace: Workspace,
        cfg: SACConfig = SACConfig(),
        per_pixel: bool = True,
        use_confidence: bool = True,
        seed: int = 0,
    ):
        self.workspace = workspace
        self.cfg = cfg
        self.per_pixel = per_pixel
        self.use_confidence = use_confidence
        rng = np.random.default_rng(seed)
        self.actor = build_actor(rng)
        self.critic1 = build_critic(rng, per_pixel)
        self.critic2 = build_critic(rng, per_pixel)
        self.target1 = self.critic1.copy(requires_grad=False)
        self.target2 = self.critic2.copy(requires_grad=False)
        self.opt_actor = Adam(self.actor, cfg.lr)
        self.opt_c1 = Adam(self.critic1, cfg.lr)
        self.opt_c2 = Adam(self.critic2, cfg.lr)

    def act(
        self,
        rgb: torch.Tensor,
        cloud: torch.Tensor,
        proprio: torch.Tensor,
        rng: np.random.Generator,
        greedy: bool = False,
    ) -> tuple[PoseAction, np.ndarray]:
        """One action from encoded (1, C, c, c) inputs; resamples on a
        degenerate quaternion draw."""
        with torch.no_grad():
            mean, log_std = actor_forward(self.actor, rgb, cloud, proprio)
        for attempt in range(20):
            if greedy and attempt == 0:
                raw = deterministic_action(mean)
            else:
                noise = torch.from_numpy(
                    rng.standard_normal((1, ACTION_DIM))
                ).to(mean.dtype)
                raw, _ = sample_action(mean, log_std, noise)
            raw_np = raw[0].numpy().astype(np.float64)
            try:
                return raw_to_pose(raw_np, self.workspace), raw_np
            except QuatResampleError:
                continue
        raise QuatResampleError("could not draw a usable quaternion in 20 tries")

    def update(self, batch: dict[str, torch.Tensor], rng: np.random.Generator) -> dict:
        cfg = self.cfg
        b = batch["reward"].shape[0]
        noise_next = torch.from_numpy(rng.standard_normal((b, ACTION_DIM))).to(torch.float32)
        y = sac_target(
            batch, self.actor, self.target1, self.target2, cfg, noise_next,
            self.per_pixel, self.use_confidence,
        )
        losses = {}
        for tag, params, opt in (
            ("critic1", self.critic1, self.opt_c1),
            ("critic2", self.critic2, self.opt_c2),
        ):
            fn = lambda p: critic_loss(p, batch, y, cfg, self.per_pixel, self.use_confidence)
            losses[tag], grads = nets.loss_and_gradients(fn, params)
            opt.step(grads)
        noise_pi = torch.from_numpy(rng.standard_normal((b, ACTION_DIM))).to(torch.float32)
        fn = lambda p: actor_loss(
            p, self.critic1, self.critic2, batch, cfg, noise_pi,
            self.per_pixel, self.use_confidence,
        )
        losses["actor"], grads = nets.loss_and_gradients(fn, self.actor)
        self.opt_actor.step(grads)
        nets.soft_update(self.target1, self.critic1, cfg.tau)
        nets.soft_update(self.target2, self.critic2, cfg.tau)
        return losses

    # -- checkpointing -------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, ps in (
            ("actor", self.actor),
            ("critic1", self.critic1),
            ("critic2", self.critic2),
            ("target1", self.target1),
            ("target2", self.target2),
        ):
            out.update({f"{prefix}/{n}": a for n, a in ps.to_arrays().items()})
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        with torch.no_grad():
            for prefix, ps in (
                ("actor", self.actor),
                ("critic1", self.critic1),
                ("critic2", self.critic2),
                ("target1", self.target1),
                ("target2", self.target2),
            ):
                for name, _ in ps.items():
                    ps[name].copy_(torch.from_numpy(arrays[f"{prefix}/{name}"]))
