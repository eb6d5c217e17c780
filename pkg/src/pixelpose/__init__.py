"""Attention-guided next-best-pose manipulation learning on a desk-scale
tabletop simulator: per-pixel Q attention, a confidence-aware actor-critic
over 6D poses, keyframe discovery, demo augmentation, and an end-to-end
sparse-reward training loop.
"""

__version__ = "0.1.0"
