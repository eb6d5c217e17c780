"""Watching the per-pixel attention learn where to look.

Prefills a replay buffer with demonstrations and trains only the attention
network for a few hundred steps, then prints how close its greedy pixel
lands to the labeled pixel on fresh scenes. A short run is enough to see
the trend; the acceptance suite trains longer and demands 90% within 4 px.

    python walkthroughs/03_attention_supervision.py
"""

import numpy as np
import torch

torch.set_num_threads(2)

from pixelpose.config import RunConfig
from pixelpose.keyframes import augment_demo, discover_keyframes
from pixelpose.teacher import generate_demo
from pixelpose.training import build_agents, make_qatt_batch, prefill

cfg = RunConfig(task="lift_block", demo_count=10, batch_size=16)
buffer = prefill(cfg)
agents = build_agents(cfg, seed=0)
rng = np.random.default_rng(0)

held_out = []
for i in range(3):
    traj = generate_demo("lift_block", 9_000_000 + i, cfg.sim_config())
    kf = discover_keyframes(traj, cfg.keyframe_eps_v)
    held_out.extend(augment_demo(traj, kf, cfg.augment_stride))


def mean_label_distance():
    dists = [
        np.hypot(*(np.subtract(agents.qatt.select_pixel(t.obs), t.pixel)))
        for t in held_out
    ]
    return float(np.mean(dists))


print(f"buffer: {len(buffer)} demo transitions; held-out frames: {len(held_out)}")
for step in range(0, 601, 150):
    if step:
        for _ in range(150):
            batch = make_qatt_batch(buffer.sample(cfg.batch_size, rng), agents)
            agents.qatt.update(batch)
    print(f"after {step:4d} updates: mean argmax-to-label distance "
          f"{mean_label_distance():5.1f} px")

qmap = agents.qatt.qmap(held_out[0].obs)
print("\nQ map stats on a held-out frame: min %.2f max %.2f" % (qmap.min(), qmap.max()))
print("greedy pixel:", agents.qatt.select_pixel(held_out[0].obs),
      "| label:", held_out[0].pixel)
