"""Per-pixel Q function over fused RGB + point-cloud input.

A light U-Net maps the full observation to one Q value per pixel; the
greedy 2D argmax picks the next region of interest, and a fixed-size window
around it (clamped to stay inside the image) is copied out for the pose
agent. Training minimizes the squared TD error at the stored pixel — the
bootstrap target is the target network's spatial max over the next
observation, zeroed on terminals — plus an L2 penalty on the whole
per-pixel output map that damps value overestimation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import nets
from .encoding import Workspace, cloud_to_tensor, rgb_to_tensor
from .nets import Adam, ParamBuilder, ParamSet, ShapeError
from .world import Observation


@dataclass(frozen=True)
class CropPair:
    """Verbatim c x c windows of the RGB image and organized cloud."""

    rgb: np.ndarray  # (c, c, 3) uint8
    cloud: np.ndarray  # (c, c, 3) float32
    valid: np.ndarray  # (c, c) bool
    origin: tuple[int, int]  # (x0, y0) of the window in the source image


def argmax2d(q: np.ndarray) -> tuple[int, int]:
    """Coordinates (x, y) of the maximal element; ties break to the smallest
    row-major index."""
    q = np.asarray(q)
    flat = int(np.argmax(q))
    y, x = divmod(flat, q.shape[1])
    return x, y


def crop_origin(center: tuple[int, int], c: int, width: int, height: int) -> tuple[int, int]:
    """Window origin for a crop nominally centered at `center`, clamped so
    the window lies fully inside the image."""
    x0 = min(max(center[0] - c // 2, 0), width - c)
    y0 = min(max(center[1] - c // 2, 0), height - c)
    return x0, y0


def crop(
    rgb: np.ndarray,
    cloud: np.ndarray,
    valid: np.ndarray,
    center: tuple[int, int],
    c: int,
) -> CropPair:
    h, w = rgb.shape[:2]
    if c > min(h, w):
        raise ValueError(f"crop size {c} exceeds image size {h}x{w}")
    x0, y0 = crop_origin(center, c, w, h)
    return CropPair(
        rgb=rgb[y0 : y0 + c, x0 : x0 + c].copy(),
        cloud=cloud[y0 : y0 + c, x0 : x0 + c].copy(),
        valid=valid[y0 : y0 + c, x0 : x0 + c].copy(),
        origin=(x0, y0),
    )


def crop_observation(obs: Observation, center: tuple[int, int], c: int) -> CropPair:
    return crop(obs.rgb, obs.cloud, obs.cloud_valid, center, c)


# ---------------------------------------------------------------------------
# Network

# Stem width and the encoder widths, one stage per entry. Attention labels
# often sit on visually empty pixels (the projected next gripper position)
# and ranking them against neighboring-phase pixels needs scene-global
# context (where the gripper is, whether it is closed), so the encoder goes
# down to a 4x4 bottleneck; the decoder mirrors it with skip concatenation.
WIDTHS = (8, 16, 32, 64, 64)


def build_qattention(
    rng: np.random.Generator | int,
    dtype: torch.dtype = torch.float32,
    widths: tuple[int, ...] = WIDTHS,
) -> ParamSet:
    """U-Net parameters: two conv stems, a strided encoder (one stage per
    width after the stem), a mirrored decoder with skip concatenation, and a
    single-channel head. A 4-tuple of widths yields the standard three-stage
    net; a 3-tuple yields a two-stage net for tiny toy inputs."""
    b = ParamBuilder(rng, dtype)
    s, *enc = widths
    b.conv("stem_rgb", 3, s)
    b.conv("stem_cloud", 4, s)
    chans = [2 * s] + list(enc)
    depth = len(enc)
    for i in range(depth):
        b.conv(f"enc{i + 1}", chans[i], chans[i + 1])
    for j in range(1, depth + 1):
        in_ch = chans[depth - j + 1] + chans[depth - j]
        out_ch = chans[depth - j] if j < depth else s
        b.conv(f"dec{j}", in_ch, out_ch)
    b.conv("head", s, 1, layer_norm=False)
    return b.params


def _encoder_depth(params: ParamSet) -> int:
    depth = 0
    while f"enc{depth + 1}.w" in params:
        depth += 1
    return depth


def q_forward(params: ParamSet, rgb: torch.Tensor, cloud: torch.Tensor) -> torch.Tensor:
    """(B, 3, H, W) rgb + (B, 4, H, W) cloud features -> (B, H, W) Q map."""
    if rgb.shape[2:] != cloud.shape[2:]:
        raise ShapeError(
            f"rgb {tuple(rgb.shape)} and cloud {tuple(cloud.shape)} disagree"
        )
    depth = _encoder_depth(params)
    factor = 2 ** depth
    if rgb.shape[2] % factor or rgb.shape[3] % factor:
        raise ShapeError(f"image dimensions must be divisible by {factor}")
    stem = torch.cat(
        [
            nets.conv2d(params, "stem_rgb", rgb),
            nets.conv2d(params, "stem_cloud", cloud),
        ],
        dim=1,
    )
    skips = [stem]
    x = stem
    for i in range(depth):
        x = nets.conv2d(params, f"enc{i + 1}", x, stride=2)
        skips.append(x)
    for i in range(depth):
        skip = skips[depth - 1 - i]
        x = nets.conv2d(
            params, f"dec{i + 1}", torch.cat([nets.upsample_nearest(x), skip], dim=1)
        )
    out = nets.conv2d(params, "head", x, layer_norm=False, act="linear")
    return out[:, 0]


def qattention_loss(
    params: ParamSet,
    target_params: ParamSet,
    batch: dict[str, torch.Tensor],
    gamma: float,
    lambda_reg: float,
    reward_scale: float,
) -> torch.Tensor:
    """Mean squared TD error at the stored pixels plus Q regularisation.

    batch keys: rgb, cloud, next_rgb, next_cloud (encoded image tensors),
    px, py (long), reward, terminal (float).
    """
    q = q_forward(params, batch["rgb"], batch["cloud"])
    idx = torch.arange(q.shape[0])
    q_sa = q[idx, batch["py"], batch["px"]]
    with torch.no_grad():
        q_next = q_forward(target_params, batch["next_rgb"], batch["next_cloud"])
        bootstrap = q_next.amax(dim=(1, 2))
        y = batch["reward"] * reward_scale + gamma * (1.0 - batch["terminal"]) * bootstrap
        y = y.to(q_sa.dtype)
    loss = ((y - q_sa) ** 2).mean()
    if lambda_reg:
        # summed over pixels (averaged over the batch) so that pixels with no
        # TD supervision are actively pulled toward zero; a per-element mean
        # would dilute the regularizer by H*W and leave the map free to
        # inflate wherever the bootstrap max overestimates
        loss = loss + lambda_reg * (q ** 2).sum(dim=(1, 2)).mean()
    return loss


class QAttentionAgent:
    """Online + target per-pixel Q networks with their optimizer."""

    def __init__(
        self,
        workspace: Workspace,
        lr: float = 3e-3,
        gamma: float = 0.9,
        lambda_reg: float = 1e-2,
        reward_scale: float = 100.0,
        tau: float = 5.0 ** -4,
        seed: int = 0,
    ):
        self.workspace = workspace
        self.gamma = gamma
        self.lambda_reg = lambda_reg
        self.reward_scale = reward_scale
        self.tau = tau
        self.params = build_qattention(np.random.default_rng(seed))
        self.target_params = self.params.copy(requires_grad=False)
        self.opt = Adam(self.params, lr)

    def encode(self, obs_list: list[Observation]) -> tuple[torch.Tensor, torch.Tensor]:
        rgb = rgb_to_tensor(np.stack([o.rgb for o in obs_list]))
        cloud = cloud_to_tensor(
            np.stack([o.cloud for o in obs_list]),
            np.stack([o.cloud_valid for o in obs_list]),
            self.workspace,
        )
        return rgb, cloud

    def qmap(self, obs: Observation) -> np.ndarray:
        rgb, cloud = self.encode([obs])
        with torch.no_grad():
            return q_forward(self.params, rgb, cloud)[0].numpy()

    def select_pixel(self, obs: Observation) -> tuple[int, int]:
        return argmax2d(self.qmap(obs))

    def select_pixels_batch(self, rgb: torch.Tensor, cloud: torch.Tensor) -> np.ndarray:
        """Greedy pixels for a batch of encoded observations: (B, 2) array."""
        with torch.no_grad():
            q = q_forward(self.params, rgb, cloud).numpy()
        return np.array([argmax2d(m) for m in q])

    def update(self, batch: dict[str, torch.Tensor]) -> float:
        loss_fn = lambda p: qattention_loss(
            p, self.target_params, batch, self.gamma, self.lambda_reg, self.reward_scale
        )
        loss, grads = nets.loss_and_gradients(loss_fn, self.params)
        self.opt.step(grads)
        nets.soft_update(self.target_params, self.params, self.tau)
        return loss

    # -- checkpointing -------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"qatt/{n}": a for n, a in self.params.to_arrays().items()}
        out.update(
            {f"qatt_target/{n}": a for n, a in self.target_params.to_arrays().items()}
        )
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        with torch.no_grad():
            for name, _ in self.params.items():
                self.params[name].copy_(torch.from_numpy(arrays[f"qatt/{name}"]))
            for name, _ in self.target_params.items():
                self.target_params[name].copy_(
                    torch.from_numpy(arrays[f"qatt_target/{name}"])
                )
