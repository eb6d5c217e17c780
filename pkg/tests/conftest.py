import numpy as np
import pytest
import torch

torch.set_num_threads(2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_run_config(**overrides):
    """A configuration small enough for orchestration unit tests."""
    from pixelpose.config import RunConfig

    defaults = dict(
        task="lift_block",
        seeds=(0,),
        demo_count=2,
        env_steps=6,
        batch_size=4,
        eval_interval=3,
        eval_episodes=2,
        checkpoint_interval=3,
        log_interval=2,
        replay_capacity=500,
    )
    defaults.update(overrides)
    return RunConfig(**defaults)
