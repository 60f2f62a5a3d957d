#
# Copyright (c) 2024 rcrplan developers.
#
# This file is part of `python-rcrplan`
#

from __future__ import annotations

import pytest

from rcrplan.errors import ArtifactError
from rcrplan.errors import UnknownObjectError
from rcrplan.geometry import Pose
from rcrplan.state import GRIPPER
from rcrplan.state import ObjectDecl
from rcrplan.state import PrimitiveAction
from rcrplan.state import Shape
from rcrplan.state import Trajectory
from rcrplan.state import WorldState
from rcrplan.state import read_trajectories
from rcrplan.state import write_trajectories
from rcrplan.state import xi_transform


def _objects():
    return (
        ObjectDecl(GRIPPER, "gripper", Shape.disc(0.008)),
        ObjectDecl("can_1", "can", Shape.disc(0.02)),
    )


def test_attached_object_needs_a_pose():
    with pytest.raises(UnknownObjectError):
        WorldState(
            {GRIPPER: Pose(0, 0, 0)}, frozenset({"can_1"}), {"can_1": Pose(0, 0, 0)}
        )


def test_unknown_pose_raises():
    with pytest.raises(UnknownObjectError):
        WorldState({GRIPPER: Pose(0, 0, 0)}).pose("can_7")


def test_attached_objects_follow_the_gripper():
    offset = Pose(0.035, 0.0, 0.0)
    s = WorldState(
        {GRIPPER: Pose(0, 0, 0), "can_1": Pose(0.035, 0, 0)},
        frozenset({"can_1"}),
        {"can_1": offset},
    )
    moved = s.with_poses({GRIPPER: Pose(0.1, 0.2, 0.0)})
    assert moved.pose("can_1").x == pytest.approx(0.135)
    assert moved.pose("can_1").y == pytest.approx(0.2)


def test_trajectory_needs_two_states():
    with pytest.raises(ValueError):
        Trajectory("t", _objects(), (WorldState({GRIPPER: Pose(0, 0, 0)}),), True)


def test_shape_contains():
    rect = Shape.rect(0.2, 0.1)
    assert rect.contains(Pose(1.0, 1.0, 0.0), 1.09, 1.04)
    assert not rect.contains(Pose(1.0, 1.0, 0.0), 1.0, 1.06)
    disc = Shape.disc(0.02)
    assert disc.contains(Pose(0, 0, 0), 0.0, 0.019)
    assert not disc.contains(Pose(0, 0, 0), 0.015, 0.015)


def test_xi_transform_shape_and_unknown_object():
    states = tuple(
        WorldState({GRIPPER: Pose(0.01 * i, 0, 0), "can_1": Pose(0.5, 0, 0)})
        for i in range(5)
    )
    traj = Trajectory("t", _objects(), states, True)
    feats = xi_transform(traj, [(GRIPPER, "can_1")])
    assert feats[(GRIPPER, "can_1")].shape == (5, 4)
    assert feats[(GRIPPER, "can_1")][0, 0] == pytest.approx(0.5)
    with pytest.raises(UnknownObjectError):
        xi_transform(traj, [(GRIPPER, "can_2")])


def test_trajectories_json_lines(tmp_path):
    states = (
        WorldState({GRIPPER: Pose(0, 0, 0), "can_1": Pose(0.035, 0, 0)}),
        WorldState(
            {GRIPPER: Pose(0, 0, 0), "can_1": Pose(0.035, 0, 0)},
            frozenset({"can_1"}),
            {"can_1": Pose(0.035, 0, 0)},
        ),
    )
    traj = Trajectory("t", _objects(), states, True, (PrimitiveAction.grasp(),))
    path = tmp_path / "demos.jsonl"
    assert write_trajectories(path, [traj, traj]) == 2
    loaded = read_trajectories(path)
    assert len(loaded) == 2
    assert loaded[0].states[1].attached == frozenset({"can_1"})
    assert loaded[0].actions == (PrimitiveAction.grasp(),)


def test_malformed_trajectory_line(tmp_path):
    path = tmp_path / "demos.jsonl"
    path.write_text('{"task_id": "t"}\n')
    with pytest.raises(ArtifactError) as exc:
        read_trajectories(path)
    assert exc.value.lineno == 1


def test_missing_trajectory_file(tmp_path):
    with pytest.raises(ArtifactError):
        read_trajectories(tmp_path / "missing.jsonl")
