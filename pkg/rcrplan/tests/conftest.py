#
# Copyright (c) 2024 rcrplan developers.
#
# This file is part of `python-rcrplan`
#

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest

from rcrplan.geometry import Pose
from rcrplan.regions import Mixture
from rcrplan.regions import RcrPredictor
from rcrplan.relations import AbstractState
from rcrplan.relations import GroundAtom
from rcrplan.state import GRIPPER
from rcrplan.state import ObjectDecl
from rcrplan.state import Shape
from rcrplan.state import Trajectory
from rcrplan.state import WorldState

CAN_RADIUS = 0.02
#: slot offset of the four cans around the box center
SLOT = 0.02427
#: radius of the box region; four slotted cans leave no room for a fifth
REGION_RADIUS = 0.05


@pytest.fixture(scope="session")
def corpus_dir() -> Path:
    return Path(__file__).parent / "data" / "corpus"


@pytest.fixture
def four_slot_predictor() -> RcrPredictor:
    """(surface, can) region: the disc of REGION_RADIUS around the box center"""
    cov = np.diag([0.03**2, 0.03**2, 1e-4, 1e-4])
    mix = Mixture(np.ones(1), np.array([[0.0, 0.0, 1.0, 0.0]]), cov[None])
    eps = float(mix.log_density(np.array([[REGION_RADIUS, 0.0, 1.0, 0.0]]))[0])
    return RcrPredictor(("surface", "can"), 1, mix, eps)


@pytest.fixture
def slot_objects() -> list[ObjectDecl]:
    return [
        ObjectDecl("box", "surface", Shape.rect(0.2, 0.2)),
        *(ObjectDecl(f"can_{i}", "can", Shape.disc(CAN_RADIUS)) for i in range(1, 5)),
    ]


def _slot_state(filled: int, box: Pose) -> WorldState:
    slots = [(sx * SLOT, sy * SLOT) for sx in (-1, 1) for sy in (-1, 1)]
    poses = {"box": box}
    for i in range(4):
        if i < filled:
            dx, dy = slots[i]
            poses[f"can_{i + 1}"] = Pose(box.x + dx, box.y + dy, 0.0)
        else:
            poses[f"can_{i + 1}"] = Pose(-1.0 - 0.1 * i, 1.0, 0.0)
    return WorldState(poses)


@pytest.fixture
def slot_state():
    """factory: box with the first `filled` slots taken, the other cans far away"""

    def make(filled: int, box: Pose = Pose(0.3, -0.1, 0.0)) -> WorldState:
        return _slot_state(filled, box)

    return make


def _staged(table: str, can: str, gripper: str, base: str) -> list[AbstractState]:
    a = GroundAtom.of
    on, off = a("table_can_1", table, can), a("table_can_0", table, can)
    near, held = a("can_gripper_1", can, gripper), a("can_gripper_2", can, gripper)
    out, tucked = a("base_gripper_0", base, gripper), a("base_gripper_1", base, gripper)
    fixed = a("base_table_1", base, table)
    stages = [
        {on, near, out},
        {on, held, out},
        {off, held, out},
        {off, held, tucked},
    ]
    return [AbstractState(frozenset(s | {fixed})) for s in stages]


@pytest.fixture
def staged_pick_sequences() -> list[tuple[list[AbstractState], dict[str, str]]]:
    """two pick sequences with different cups: reach, grasp, lift, tuck"""
    out = []
    for cup in ("yellow_cup", "green_cup"):
        types = {"table": "table", cup: "can", "gripper": "gripper", "base": "base"}
        out.append((_staged("table", cup, "gripper", "base"), types))
    return out


@pytest.fixture(scope="session")
def hover_demos() -> list[Trajectory]:
    """gripper approaching a can from random directions, then hovering beside it"""
    rng = np.random.default_rng(7)
    objects = (
        ObjectDecl(GRIPPER, "gripper", Shape.disc(0.008)),
        ObjectDecl("can_1", "can", Shape.disc(CAN_RADIUS)),
    )
    demos = []
    for i in range(20):
        can = Pose(float(rng.uniform(-0.2, 0.2)), float(rng.uniform(-0.2, 0.2)), 0.0)
        hover = (can.x - 0.035, can.y)
        phi = rng.uniform(0.0, 2.0 * math.pi)
        start = (hover[0] + 0.15 * math.cos(phi), hover[1] + 0.15 * math.sin(phi))
        states = []
        for t in np.linspace(0.0, 1.0, 16):
            x = start[0] + t * (hover[0] - start[0])
            y = start[1] + t * (hover[1] - start[1])
            states.append(WorldState({GRIPPER: Pose(x, y, 0.0), "can_1": can}))
        for _ in range(10):
            jitter = rng.normal(0.0, 1e-3, size=2)
            g = Pose(hover[0] + jitter[0], hover[1] + jitter[1], 0.0)
            states.append(WorldState({GRIPPER: g, "can_1": can}))
        demos.append(Trajectory(f"hover-{i}", objects, tuple(states), success=True))
    return demos
