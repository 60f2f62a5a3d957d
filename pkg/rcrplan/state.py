#
# Copyright (c) 2024 rcrplan developers.
#
# This file is part of `python-rcrplan`
#

"""rcrplan.state

world states, primitive actions, trajectories and tasks

Trajectories are stored as JSON Lines, one trajectory per line:

    {"task_id": str, "success": bool,
     "objects": [{"id", "type", "shape": {...}}],
     "states": [{"poses": {id: [x, y, theta]}, "attached": [id]}],
     "actions": [{"kind", "mover", "delta": [dx, dy, dtheta]}]}

"""
from __future__ import annotations

import enum
import logging
import os
from dataclasses import dataclass
from dataclasses import field
from dataclasses import replace
from typing import Any
from typing import Iterable
from typing import Iterator
from typing import Mapping
from typing import Sequence

import numpy as np
import orjson
from shapely import affinity
from shapely.geometry import Point
from shapely.geometry import box as shapely_box
from shapely.geometry.base import BaseGeometry

from rcrplan.errors import ArtifactError
from rcrplan.errors import UnknownObjectError
from rcrplan.geometry import Pose
from rcrplan.geometry import compose
from rcrplan.geometry import relative_features
from rcrplan.geometry import relative_pose

__all__ = [
    "GRIPPER",
    "Shape",
    "ObjectDecl",
    "WorldState",
    "PrimitiveKind",
    "PrimitiveAction",
    "Trajectory",
    "Task",
    "xi_transform",
    "read_trajectories",
    "write_trajectories",
]

_log = logging.getLogger(__name__)

GRIPPER = "gripper"


@dataclass(frozen=True)
class Shape:
    """collision footprint

    A disc (radius) or an axis aligned rectangle (width, height).
    """

    kind: str
    radius: float = 0.0
    width: float = 0.0
    height: float = 0.0

    @classmethod
    def disc(cls, radius: float) -> Shape:
        return cls("disc", radius=radius)

    @classmethod
    def rect(cls, width: float, height: float) -> Shape:
        return cls("rect", width=width, height=height)

    @property
    def area(self) -> float:
        if self.kind == "disc":
            return float(np.pi * self.radius**2)
        return self.width * self.height

    def footprint(self, pose: Pose) -> BaseGeometry:
        """shapely polygon of the shape placed at pose"""
        if self.kind == "disc":
            return Point(pose.x, pose.y).buffer(self.radius, 16)
        rect = shapely_box(
            pose.x - self.width / 2,
            pose.y - self.height / 2,
            pose.x + self.width / 2,
            pose.y + self.height / 2,
        )
        if pose.theta:
            rect = affinity.rotate(
                rect, pose.theta, origin=(pose.x, pose.y), use_radians=True
            )
        return rect

    def contains(self, pose: Pose, x: float, y: float) -> bool:
        """is the point (x, y) inside the shape placed at pose"""
        local = relative_pose(pose, Pose(x, y, 0.0))
        if self.kind == "disc":
            return local.x**2 + local.y**2 <= self.radius**2
        return abs(local.x) <= self.width / 2 and abs(local.y) <= self.height / 2

    def to_dict(self) -> dict[str, Any]:
        if self.kind == "disc":
            return {"kind": "disc", "radius": self.radius}
        return {"kind": "rect", "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Shape:
        if data["kind"] == "disc":
            return cls.disc(float(data["radius"]))
        return cls.rect(float(data["width"]), float(data["height"]))


@dataclass(frozen=True)
class ObjectDecl:
    id: str
    type: str
    shape: Shape

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "type": self.type, "shape": self.shape.to_dict()}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ObjectDecl:
        return cls(data["id"], data["type"], Shape.from_dict(data["shape"]))


@dataclass(frozen=True)
class WorldState:
    """poses of all objects plus the set of objects rigidly held by the gripper"""

    poses: Mapping[str, Pose]
    attached: frozenset = frozenset()
    attach_offsets: Mapping[str, Pose] = field(default_factory=dict)

    def __post_init__(self):
        for oid in self.attached:
            if oid not in self.poses:
                raise UnknownObjectError(
                    f"attached object {oid!r} has no pose", object_id=oid
                )
        if set(self.attach_offsets) != set(self.attached):
            raise ValueError("attach_offsets keys must equal the attached set")

    def pose(self, oid: str) -> Pose:
        try:
            return self.poses[oid]
        except KeyError:
            raise UnknownObjectError(f"unknown object {oid!r}", object_id=oid) from None

    def with_poses(self, updates: Mapping[str, Pose]) -> WorldState:
        """copy with some poses replaced; attached objects follow the gripper"""
        poses = dict(self.poses)
        poses.update(updates)
        if self.attached and GRIPPER in updates:
            g = poses[GRIPPER]
            for oid in self.attached:
                poses[oid] = compose(g, self.attach_offsets[oid])
        return replace(self, poses=poses)

    def to_dict(self) -> dict[str, Any]:
        return {
            "poses": {k: list(v) for k, v in sorted(self.poses.items())},
            "attached": sorted(self.attached),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> WorldState:
        poses = {k: Pose(*map(float, v)) for k, v in data["poses"].items()}
        attached = frozenset(data.get("attached", ()))
        offsets = {}
        if attached:
            g = poses[GRIPPER]
            offsets = {oid: relative_pose(g, poses[oid]) for oid in attached}
        return cls(poses, attached, offsets)


class PrimitiveKind(str, enum.Enum):
    MOVE = "delta-move"
    GRASP = "grasp"
    RELEASE = "release"


@dataclass(frozen=True)
class PrimitiveAction:
    """one low level action; delta is a world frame increment of the mover's pose"""

    kind: PrimitiveKind
    delta: Pose = Pose(0.0, 0.0, 0.0)
    mover: str = GRIPPER

    @classmethod
    def move(cls, dx: float, dy: float, dtheta: float = 0.0, mover: str = GRIPPER):
        return cls(PrimitiveKind.MOVE, Pose(dx, dy, dtheta), mover)

    @classmethod
    def grasp(cls) -> PrimitiveAction:
        return cls(PrimitiveKind.GRASP)

    @classmethod
    def release(cls) -> PrimitiveAction:
        return cls(PrimitiveKind.RELEASE)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "mover": self.mover, "delta": list(self.delta)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> PrimitiveAction:
        return cls(
            PrimitiveKind(data["kind"]),
            Pose(*map(float, data.get("delta", (0.0, 0.0, 0.0)))),
            data.get("mover", GRIPPER),
        )


@dataclass(frozen=True)
class Trajectory:
    """raw, unsegmented demonstration"""

    task_id: str
    objects: Sequence[ObjectDecl]
    states: Sequence[WorldState]
    success: bool
    actions: Sequence[PrimitiveAction] = ()

    def __post_init__(self):
        if len(self.states) < 2:
            raise ValueError(f"trajectory {self.task_id!r} needs >= 2 states")

    def types(self) -> dict[str, str]:
        return {o.id: o.type for o in self.objects}

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "success": self.success,
            "objects": [o.to_dict() for o in self.objects],
            "states": [s.to_dict() for s in self.states],
            "actions": [a.to_dict() for a in self.actions],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Trajectory:
        return cls(
            task_id=data["task_id"],
            objects=tuple(ObjectDecl.from_dict(o) for o in data["objects"]),
            states=tuple(WorldState.from_dict(s) for s in data["states"]),
            success=bool(data["success"]),
            actions=tuple(
                PrimitiveAction.from_dict(a) for a in data.get("actions", ())
            ),
        )


@dataclass(frozen=True)
class Task:
    """objects, initial state, goal and horizon

    goal holds ground atoms as tuples ``(relation, arg, ...)``; the
    geometric goal (every goal object centered inside ``goal_surface``,
    collision free) is used when ``goal_objects`` is set.
    """

    task_id: str
    objects: Sequence[ObjectDecl]
    init: WorldState
    goal: frozenset = frozenset()
    goal_objects: Sequence[str] = ()
    goal_surface: str = "box"
    horizon: int = 20_000

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError(f"horizon must be > 0, got: {self.horizon}")

    def types(self) -> dict[str, str]:
        return {o.id: o.type for o in self.objects}

    def decl(self, oid: str) -> ObjectDecl:
        for o in self.objects:
            if o.id == oid:
                return o
        raise UnknownObjectError(f"unknown object {oid!r}", object_id=oid)


def xi_transform(
    traj: Trajectory, pairs: Iterable[tuple[str, str]]
) -> dict[tuple[str, str], np.ndarray]:
    """relative pose features of every pair for every state, shape (n, 4)"""
    out = {}
    ids = [s.poses for s in traj.states]
    for o1, o2 in pairs:
        for oid in (o1, o2):
            if any(oid not in p for p in ids):
                raise UnknownObjectError(
                    f"object {oid!r} missing from trajectory {traj.task_id!r}",
                    object_id=oid,
                )
        a = np.array([p[o1] for p in ids])
        b = np.array([p[o2] for p in ids])
        out[(o1, o2)] = relative_features(a, b)
    return out


# === JSON Lines io ==========================================================


def write_trajectories(
    path: str | os.PathLike, trajectories: Iterable[Trajectory]
) -> int:
    """write trajectories as json lines, returns the number written"""
    n = 0
    with open(path, "wb") as f:
        for traj in trajectories:
            f.write(orjson.dumps(traj.to_dict()))
            f.write(b"\n")
            n += 1
    _log.info(f"wrote {n} trajectories to {os.fspath(path)!r}")
    return n


def iter_trajectories(path: str | os.PathLike) -> Iterator[Trajectory]:
    try:
        f = open(path, "rb")
    except OSError as err:
        raise ArtifactError(
            f"cannot read trajectories: {err}", path=os.fspath(path)
        ) from err
    with f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                yield Trajectory.from_dict(orjson.loads(line))
            except (orjson.JSONDecodeError, KeyError, TypeError, ValueError) as err:
                raise ArtifactError(
                    f"malformed trajectory on line {lineno}: {err}",
                    path=os.fspath(path),
                    lineno=lineno,
                ) from err


def read_trajectories(path: str | os.PathLike) -> list[Trajectory]:
    return list(iter_trajectories(path))
