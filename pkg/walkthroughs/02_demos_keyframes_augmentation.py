"""From scripted demonstrations to replay transitions.

The teacher drives each task's waypoint program with a trapezoidal speed
profile, so keyframe discovery finds structure: gripper toggles and the
near-zero-velocity frames where the arm settles onto a waypoint. Demo
augmentation then emits a transition from every Mth trajectory point to the
next keyframe.

    python walkthroughs/02_demos_keyframes_augmentation.py
"""

import numpy as np

from pixelpose.keyframes import augment_demo, discover_keyframes
from pixelpose.teacher import generate_demo
from pixelpose.world import SimConfig

cfg = SimConfig()
traj = generate_demo("put_block_in_bin", seed=3, cfg=cfg)
print(f"demo: {len(traj)} frames, success={traj.success}")

speeds = [f.velocity for f in traj.frames]
print("speed profile (mm/step):", np.round(np.array(speeds[:14]) * 1000, 1), "...")

kf = discover_keyframes(traj, eps_v=1e-3)
print(f"\n{len(kf)} keyframes:")
for idx, rules, label in zip(kf.indices, kf.rules, kf.labels):
    print(f"  t={idx:3d}  rules={'+'.join(rules):<18} attention label={label}")

transitions = augment_demo(traj, kf, m=5)
rewarded = sum(t.reward == 1.0 for t in transitions)
print(f"\naugmented into {len(transitions)} transitions "
      f"({rewarded} carry the terminal reward)")
print("first transition acts toward the first keyframe pose:",
      transitions[0].action.target.translation.round(3),
      "gripper", transitions[0].action.gripper)

# Stride semantics: m=1 uses every index; a stride beyond every segment
# degenerates to exactly one transition per keyframe.
print("m=1 count:", len(augment_demo(traj, kf, 1)),
      "| huge-m count:", len(augment_demo(traj, kf, len(traj))),
      "(= keyframe count)", len(kf))
