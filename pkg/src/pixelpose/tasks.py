"""Built-in tabletop tasks: seeded object generators, sparse success
predicates, and the scripted teacher waypoint programs that solve them.

Three tasks ship with the package:

* ``lift_block`` — raise the red block above the lift height.
* ``put_block_in_bin`` — drop the red block onto the bin pad; one blue
  distractor block is present.
* ``stack_block`` — place the red block on top of the green base block.

Success predicates are pure functions of WorldState; objects are placed by
rejection sampling inside the placement region with minimum separations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import Pose
from .world import SceneObject, SimConfig, WorldState

BLOCK_HALF = 0.02
BIN_HALF = (0.06, 0.06, 0.008)

RED = (205, 45, 40)
BLUE = (45, 80, 205)
GREEN = (45, 170, 70)
GRAY = (105, 105, 115)


class PlacementError(RuntimeError):
    """The generator could not place objects without overlap."""


@dataclass(frozen=True)
class MoveStep:
    goal: Pose


@dataclass(frozen=True)
class GripStep:
    close: bool


TeacherStep = MoveStep | GripStep


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    generator: Callable[[np.random.Generator, SimConfig], list[SceneObject]]
    success: Callable[[WorldState, SimConfig], bool]
    teacher: Callable[[WorldState, SimConfig], list[TeacherStep]]


def _yaw_quat(rng: np.random.Generator) -> np.ndarray:
    theta = rng.uniform(0.0, 2.0 * np.pi)
    return np.array([0.0, 0.0, np.sin(theta / 2.0), np.cos(theta / 2.0)])


def _place(
    rng: np.random.Generator,
    cfg: SimConfig,
    z: float,
    keepout: list[tuple[np.ndarray, float]],
    tries: int = 200,
) -> np.ndarray:
    lo, hi = np.array(cfg.placement_lo), np.array(cfg.placement_hi)
    for _ in range(tries):
        xy = rng.uniform(lo, hi)
        if all(np.linalg.norm(xy - c[:2]) >= r for c, r in keepout):
            return np.array([xy[0], xy[1], z])
    raise PlacementError("could not place object without overlap")


def _block(oid: str, color, pos: np.ndarray, quat: np.ndarray) -> SceneObject:
    return SceneObject(oid, np.full(3, BLOCK_HALF), color, Pose(pos, quat))


def _top_z(obj: SceneObject) -> float:
    return float(obj.aabb()[1][2])


def _bottom_z(obj: SceneObject) -> float:
    return float(obj.aabb()[0][2])


# --- lift_block -------------------------------------------------------------


def _gen_lift(rng: np.random.Generator, cfg: SimConfig) -> list[SceneObject]:
    pos = _place(rng, cfg, BLOCK_HALF, [])
    return [_block("block", RED, pos, _yaw_quat(rng))]


def _success_lift(state: WorldState, cfg: SimConfig) -> bool:
    return state.object("block").pose.translation[2] >= cfg.lift_height


def _teacher_lift(state: WorldState, cfg: SimConfig) -> list[TeacherStep]:
    b = state.object("block").pose.translation
    return [
        MoveStep(Pose(np.array([b[0], b[1], b[2] + 0.10]))),
        MoveStep(Pose(b.copy())),
        GripStep(close=True),
        MoveStep(Pose(np.array([b[0], b[1], cfg.lift_height + 0.06]))),
    ]


# --- put_block_in_bin -------------------------------------------------------


def _gen_bin(rng: np.random.Generator, cfg: SimConfig) -> list[SceneObject]:
    bin_pos = _place(rng, cfg, BIN_HALF[2], [])
    objs = [
        SceneObject("bin", np.array(BIN_HALF), GRAY, Pose(bin_pos), graspable=False)
    ]
    keepout = [(bin_pos, 0.125)]
    block_pos = _place(rng, cfg, BLOCK_HALF, keepout)
    objs.append(_block("block", RED, block_pos, _yaw_quat(rng)))
    keepout.append((block_pos, 0.08))
    distractor_pos = _place(rng, cfg, BLOCK_HALF, keepout)
    objs.append(_block("distractor", BLUE, distractor_pos, _yaw_quat(rng)))
    return objs


def _success_bin(state: WorldState, cfg: SimConfig) -> bool:
    block = state.object("block")
    tray = state.object("bin")
    if state.held_object == "block":
        return False
    d = block.pose.translation[:2] - tray.pose.translation[:2]
    if np.any(np.abs(d) > 0.05):
        return False
    return abs(_bottom_z(block) - _top_z(tray)) <= 0.01


def _teacher_bin(state: WorldState, cfg: SimConfig) -> list[TeacherStep]:
    b = state.object("block").pose.translation
    t = state.object("bin").pose.translation
    place_z = _top_z(state.object("bin")) + BLOCK_HALF + 0.03
    return [
        MoveStep(Pose(np.array([b[0], b[1], b[2] + 0.10]))),
        MoveStep(Pose(b.copy())),
        GripStep(close=True),
        MoveStep(Pose(np.array([b[0], b[1], 0.16]))),
        MoveStep(Pose(np.array([t[0], t[1], 0.16]))),
        MoveStep(Pose(np.array([t[0], t[1], place_z]))),
        GripStep(close=False),
    ]


# --- stack_block ------------------------------------------------------------


def _gen_stack(rng: np.random.Generator, cfg: SimConfig) -> list[SceneObject]:
    base_pos = _place(rng, cfg, BLOCK_HALF, [])
    objs = [
        SceneObject(
            "base", np.full(3, BLOCK_HALF), GREEN, Pose(base_pos, _yaw_quat(rng)),
            graspable=False,
        )
    ]
    block_pos = _place(rng, cfg, BLOCK_HALF, [(base_pos, 0.09)])
    objs.append(_block("block", RED, block_pos, _yaw_quat(rng)))
    return objs


def _success_stack(state: WorldState, cfg: SimConfig) -> bool:
    block = state.object("block")
    base = state.object("base")
    if state.held_object == "block":
        return False
    d = block.pose.translation[:2] - base.pose.translation[:2]
    if np.any(np.abs(d) > 0.02):
        return False
    return abs(_bottom_z(block) - _top_z(base)) <= 0.01


def _teacher_stack(state: WorldState, cfg: SimConfig) -> list[TeacherStep]:
    b = state.object("block").pose.translation
    base = state.object("base")
    t = base.pose.translation
    place_z = _top_z(base) + BLOCK_HALF + 0.03
    return [
        MoveStep(Pose(np.array([b[0], b[1], b[2] + 0.10]))),
        MoveStep(Pose(b.copy())),
        GripStep(close=True),
        MoveStep(Pose(np.array([b[0], b[1], 0.16]))),
        MoveStep(Pose(np.array([t[0], t[1], 0.16]))),
        MoveStep(Pose(np.array([t[0], t[1], place_z]))),
        GripStep(close=False),
    ]


TASKS: dict[str, TaskSpec] = {
    "lift_block": TaskSpec("lift_block", _gen_lift, _success_lift, _teacher_lift),
    "put_block_in_bin": TaskSpec(
        "put_block_in_bin", _gen_bin, _success_bin, _teacher_bin
    ),
    "stack_block": TaskSpec("stack_block", _gen_stack, _success_stack, _teacher_stack),
}


def get_task(task_id: str) -> TaskSpec:
    try:
        return TASKS[task_id]
    except KeyError:
        raise KeyError(
            f"unknown task {task_id!r}; available: {sorted(TASKS)}"
        ) from None
