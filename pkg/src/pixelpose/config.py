"""Run configuration: one flat dataclass, a human-readable ``key = value``
file format, and the ablation preset suite.

The file format is line-oriented: ``name = value`` pairs, ``#`` comments,
blank lines ignored. Booleans serialize as ``true``/``false``, tuples as
comma-separated values. Serialization is sorted and deterministic, and
round-trips exactly (floats are written with repr).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, replace
from typing import get_args, get_origin, get_type_hints

from .pose_agent import SACConfig
from .world import SimConfig


@dataclass(frozen=True)
class RunConfig:
    task: str = "lift_block"
    seeds: tuple[int, ...] = (0,)
    demo_count: int = 100
    env_steps: int = 20000
    train_steps_per_env_step: int = 1
    checkpoint_interval: int = 100  # train steps between checkpoint writes
    eval_interval: int = 1000  # env steps between evaluation rounds
    eval_episodes: int = 20
    early_stop_success: float = 0.0  # stop once eval reaches this; 0 disables
    image_size: int = 64
    crop_size: int = 16
    episode_step_budget: int = 10
    replay_capacity: int = 15000
    keyframe_eps_v: float = 1e-3
    augment_stride: int = 5
    use_qattention: bool = True
    use_demo_aug: bool = True
    use_confidence: bool = True
    use_qreg: bool = True
    lambda_qreg: float = 1e-2
    gamma: float = 0.9
    alpha: float = 0.01
    w_conf: float = 0.1
    tau: float = 5.0 ** -4
    lr: float = 3e-3
    reward_scale: float = 100.0
    batch_size: int = 32
    log_interval: int = 50  # train steps between loss rows in metrics.csv
    mode: str = "sync"  # "sync" or "async"
    torch_threads: int = 0  # 0 leaves the process default untouched
    workspace_lo: tuple[float, float, float] = (-0.22, -0.18, 0.0)
    workspace_hi: tuple[float, float, float] = (0.22, 0.18, 0.30)

    def sim_config(self) -> SimConfig:
        return SimConfig(
            image_size=self.image_size,
            episode_step_budget=self.episode_step_budget,
            workspace_lo=self.workspace_lo,
            workspace_hi=self.workspace_hi,
        )

    def sac_config(self) -> SACConfig:
        return SACConfig(
            gamma=self.gamma,
            alpha=self.alpha,
            w_conf=self.w_conf,
            tau=self.tau,
            lr=self.lr,
            reward_scale=self.reward_scale,
            batch_size=self.batch_size,
        )


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(text: str, ftype):
    if get_origin(ftype) is tuple:
        elem = get_args(ftype)[0]
        text = text.strip()
        if not text:
            return ()
        return tuple(_parse_value(part, elem) for part in text.split(","))
    if ftype is bool:
        lowered = text.strip().lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if ftype is int:
        return int(text)
    if ftype is float:
        return float(text)
    return text.strip()


def config_to_text(cfg: RunConfig) -> str:
    lines = []
    for f in sorted(dataclasses.fields(cfg), key=lambda f: f.name):
        lines.append(f"{f.name} = {_format_value(getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> RunConfig:
    hints = get_type_hints(RunConfig)
    field_names = {f.name for f in dataclasses.fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in field_names:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _parse_value(value, hints[key])
    return RunConfig(**values)


def save_config(path, cfg: RunConfig) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(config_to_text(cfg))


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as f:
        return config_from_text(f.read())


# ---------------------------------------------------------------------------
# Ablation presets: each differs from the default in exactly one axis.


@dataclass(frozen=True)
class AblationSuite:
    default: RunConfig
    presets: dict[str, RunConfig]


def ablation_suite(base: RunConfig | None = None) -> AblationSuite:
    base = base or RunConfig(task="put_block_in_bin")
    presets = {
        "no_qattention": replace(base, use_qattention=False),
        "no_demo_aug": replace(base, use_demo_aug=False),
        "no_confidence": replace(base, use_confidence=False),
        "no_qreg": replace(base, use_qreg=False),
        "demos_25": replace(base, demo_count=25),
        "demos_50": replace(base, demo_count=50),
        "crop_8": replace(base, crop_size=8),
        "crop_32": replace(base, crop_size=32),
    }
    return AblationSuite(default=base, presets=presets)


def preset_axis_diff(default: RunConfig, preset: RunConfig) -> list[str]:
    """Names of fields where a preset differs from the suite default."""
    return [
        f.name
        for f in dataclasses.fields(RunConfig)
        if getattr(default, f.name) != getattr(preset, f.name)
    ]
