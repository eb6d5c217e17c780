"""Replay transitions and a bounded FIFO buffer with demo protection.

Demo transitions are never evicted before any agent-generated transition:
eviction removes the oldest agent transition first and touches demos only
once no agent transitions remain. One writer and one reader may use the
buffer concurrently; each operation is atomic at transition granularity.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from collections import deque

import numpy as np

from .world import Observation, PoseAction


@dataclass(eq=False)  # identity semantics; fields hold large arrays
class Transition:
    obs: Observation
    pixel: tuple[int, int]  # attention pixel (x, y) chosen at obs
    action: PoseAction
    reward: float  # pre-scaling: -1, 0, or +1
    next_obs: Observation
    terminal: bool
    demo: bool = False


class ReplayBuffer:
    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._demo: deque[Transition] = deque()
        self._agent: deque[Transition] = deque()
        self._lock = threading.Lock()

    def __len__(self) -> int:
        with self._lock:
            return len(self._demo) + len(self._agent)

    @property
    def demo_count(self) -> int:
        with self._lock:
            return len(self._demo)

    def add(self, tr: Transition) -> None:
        with self._lock:
            if len(self._demo) + len(self._agent) >= self.capacity:
                if self._agent:
                    self._agent.popleft()
                else:
                    self._demo.popleft()
            (self._demo if tr.demo else self._agent).append(tr)

    def extend(self, transitions) -> None:
        for tr in transitions:
            self.add(tr)

    def sample(self, n: int, rng: np.random.Generator) -> list[Transition]:
        """n uniform draws with replacement."""
        with self._lock:
            total = len(self._demo) + len(self._agent)
            if total == 0:
                raise ValueError("cannot sample from an empty buffer")
            idx = rng.integers(0, total, size=n)
            n_demo = len(self._demo)
            return [
                self._demo[i] if i < n_demo else self._agent[i - n_demo]
                for i in idx
            ]


def sample_batch(buf: ReplayBuffer, n: int, seed: int) -> list[Transition]:
    """Reproducible uniform sample: a fixed seed yields a fixed batch."""
    return buf.sample(n, np.random.default_rng(seed))
