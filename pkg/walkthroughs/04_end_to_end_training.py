"""A short end-to-end training run, plus where to find its artifacts.

Acting runs the three-phase pipeline (attention pixel, crop, sampled pose)
through the planner; training updates the attention network, both
confidence-aware critics, and the actor from one replay batch per
environment step. This script keeps everything tiny so it finishes in a
couple of minutes; real runs just raise the budgets (see the README for the
CLI equivalents).

    python walkthroughs/04_end_to_end_training.py
"""

import json
import tempfile
from pathlib import Path

import torch

torch.set_num_threads(2)

from pixelpose.config import RunConfig, ablation_suite
from pixelpose.training import run_single

out = Path(tempfile.mkdtemp(prefix="pixelpose_walkthrough_"))
cfg = RunConfig(
    task="lift_block",
    demo_count=5,
    env_steps=120,
    eval_interval=60,
    eval_episodes=5,
    batch_size=8,
    log_interval=20,
)
summary = run_single(cfg, seed=0, run_dir=out)
print(json.dumps(summary, indent=2))

print("\nmetrics.csv tail:")
for line in (out / "metrics.csv").read_text().splitlines()[-6:]:
    print(" ", line)
print("\ncheckpoint:", out / "checkpoints" / "latest.ckpt")

# The ablation presets each flip exactly one axis of the full method.
suite = ablation_suite(cfg)
print("\nablation presets:", ", ".join(sorted(suite.presets)))
