#
# Copyright (c) 2024 rcrplan developers.
#
# This file is part of `python-rcrplan`
#

"""rcrplan.simulator

deterministic planar gripper world

A free flying disc gripper moves by bounded delta steps, grasps the
unique object whose center lies inside its grasp band and carries held
objects rigidly. In the cafe domain the gripper is mounted on a mobile
base (type ``freight``) that carries it along.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Iterable
from typing import NamedTuple
from typing import Sequence

import numpy as np

from rcrplan.errors import ConfigurationInfeasibleError
from rcrplan.errors import InvalidPrimitiveError
from rcrplan.geometry import Pose
from rcrplan.geometry import compose
from rcrplan.geometry import normalize_angle
from rcrplan.geometry import relative_pose
from rcrplan.models import Domain
from rcrplan.models import WorldConfig
from rcrplan.state import GRIPPER
from rcrplan.state import ObjectDecl
from rcrplan.state import PrimitiveAction
from rcrplan.state import PrimitiveKind
from rcrplan.state import Shape
from rcrplan.state import Task
from rcrplan.state import WorldState

__all__ = [
    "World",
    "StepResult",
    "init_world",
    "step",
    "check_collision",
    "goal_satisfied",
    "replay",
    "straight_line",
    "carried_lever",
    "grasp_candidates",
    "inside_surface",
    "world_of",
]

_log = logging.getLogger(__name__)

SURFACE = "surface"
BASE = "base"
MAX_PLACEMENT_TRIES = 10_000
_BOUND_TOL = 1e-9


@dataclass(frozen=True)
class World:
    """objects and geometry shared by every state of one world"""

    config: WorldConfig
    objects: Sequence[ObjectDecl]

    @property
    def geometry(self):
        return self.config.geometry

    @property
    def aligned_theta(self) -> float:
        """gripper orientation that grasps a can lying at +x of its frame"""
        return math.pi / 2 if self.config.domain == Domain.CAFE else 0.0

    @property
    def base(self) -> str | None:
        return BASE if self.config.domain == Domain.CAFE else None

    def types(self) -> dict[str, str]:
        return {o.id: o.type for o in self.objects}

    def decl(self, oid: str) -> ObjectDecl:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(oid)

    def ids_of(self, type_: str) -> list[str]:
        return [o.id for o in self.objects if o.type == type_]

    def is_graspable(self, oid: str) -> bool:
        t = self.types()[oid]
        return (
            t != SURFACE
            and t not in self.config.agent_types
            and t not in self.config.floor_types
        )

    def layer(self, oid: str) -> str | None:
        t = self.types()[oid]
        if t == SURFACE:
            return None
        return "floor" if t in self.config.floor_types else "table"


class StepResult(NamedTuple):
    state: WorldState
    #: set when a grasp found zero or several candidates and became a no-op
    flagged: bool = False


# === world construction =====================================================


def _sample_in(rng: np.random.Generator, extent) -> tuple[float, float]:
    xmin, xmax, ymin, ymax = extent
    return float(rng.uniform(xmin, xmax)), float(rng.uniform(ymin, ymax))


def _place_cans(
    rng: np.random.Generator, n: int, extent, min_sep: float, prefix: str = "can"
) -> dict[str, Pose]:
    placed: dict[str, Pose] = {}
    for i in range(1, n + 1):
        for _ in range(MAX_PLACEMENT_TRIES):
            x, y = _sample_in(rng, extent)
            if all(math.hypot(x - p.x, y - p.y) >= min_sep for p in placed.values()):
                placed[f"{prefix}_{i}"] = Pose(x, y, 0.0)
                break
        else:
            raise ConfigurationInfeasibleError(
                f"could not place {prefix}_{i} after {MAX_PLACEMENT_TRIES} samples",
                placed=len(placed),
                requested=n,
            )
    return placed


def init_world(config: WorldConfig) -> tuple[Task, WorldState]:
    """instantiate a collision free initial state for the configured domain"""
    rng = np.random.default_rng(config.rng_seed)
    g = config.geometry
    n_cans = config.counts.get("can", 0)
    gripper = ObjectDecl(GRIPPER, "gripper", Shape.disc(g.gripper_radius))
    cans_decl = [
        ObjectDecl(f"can_{i}", "can", Shape.disc(g.can_radius))
        for i in range(1, n_cans + 1)
    ]

    if config.domain == Domain.PACKING:
        box_xy = _sample_in(rng, g.box_region)
        cans = _place_cans(rng, n_cans, g.can_region, g.min_separation)
        gx, gy = _sample_in(rng, g.gripper_region)
        objects = [
            gripper,
            ObjectDecl("table", SURFACE, Shape.rect(*g.table_size)),
            ObjectDecl("box", SURFACE, Shape.rect(*g.box_size)),
            *cans_decl,
        ]
        poses = {
            GRIPPER: Pose(gx, gy, normalize_angle(g.misalign)),
            "table": Pose(*g.table_center, 0.0),
            "box": Pose(*box_xy, 0.0),
            **cans,
        }
        goal_surface = "box"
    else:
        surfaces = [f"surface_{i}" for i in range(1, len(g.surface_centers) + 1)]
        src = g.surface_centers[config.source_surface]
        sx, sy = g.surface_size
        margin = g.can_radius + 0.02
        extent = (
            src[0] - sx / 2 + margin,
            src[0] + sx / 2 - margin,
            src[1] - sy / 2 + margin,
            src[1] + sy / 2 - margin,
        )
        cans = _place_cans(rng, n_cans, extent, g.min_separation)
        bx, by = _sample_in(rng, g.freight_region)
        base_pose = Pose(bx, by, 0.0)
        objects = [
            ObjectDecl(BASE, "freight", Shape.rect(*g.freight_size)),
            gripper,
            *(ObjectDecl(s, SURFACE, Shape.rect(*g.surface_size)) for s in surfaces),
            *cans_decl,
        ]
        poses = {
            BASE: base_pose,
            GRIPPER: compose(base_pose, Pose(*g.tuck_offset, math.pi / 2)),
            **{s: Pose(*c, 0.0) for s, c in zip(surfaces, g.surface_centers)},
            **cans,
        }
        goal_surface = surfaces[config.target_surface]

    world = World(config, tuple(objects))
    state = WorldState(poses)
    if check_collision(state, world):
        raise ConfigurationInfeasibleError("initial state is in collision")
    task = Task(
        task_id=f"{config.domain.value}-{n_cans}-seed{config.rng_seed}",
        objects=tuple(objects),
        init=state,
        goal_objects=tuple(cans),
        goal_surface=goal_surface,
    )
    _log.debug(f"initialized {task.task_id} with {len(objects)} objects")
    return task, state


def world_of(task: Task, config: WorldConfig) -> World:
    return World(config, tuple(task.objects))


# === dynamics ===============================================================


def _check_bounds(a: PrimitiveAction, world: World) -> None:
    g = world.geometry
    d = a.delta
    if (
        abs(d.x) > g.step_cap + _BOUND_TOL
        or abs(d.y) > g.step_cap + _BOUND_TOL
        or abs(d.theta) > g.rot_cap + _BOUND_TOL
    ):
        raise InvalidPrimitiveError(
            f"delta {tuple(d)!r} exceeds caps ({g.step_cap}, {g.rot_cap})",
            delta=list(d),
        )


def grasp_candidates(state: WorldState, world: World) -> list[str]:
    """graspable objects whose center lies inside the gripper's grasp band"""
    r_min, r_max = world.geometry.grasp_band
    gp = state.poses[GRIPPER]
    out = []
    for oid, p in state.poses.items():
        if oid in state.attached or not world.is_graspable(oid):
            continue
        if r_min <= math.hypot(p.x - gp.x, p.y - gp.y) <= r_max:
            out.append(oid)
    return sorted(out)


def step(state: WorldState, a: PrimitiveAction, world: World) -> StepResult:
    """apply one primitive; collisions are not checked here"""
    if a.kind == PrimitiveKind.MOVE:
        _check_bounds(a, world)
        d = a.delta
        if a.mover == GRIPPER:
            g = state.poses[GRIPPER]
            new = Pose(g.x + d.x, g.y + d.y, normalize_angle(g.theta + d.theta))
            return StepResult(state.with_poses({GRIPPER: new}))
        if a.mover == world.base:
            b = state.poses[a.mover]
            new_b = Pose(b.x + d.x, b.y + d.y, normalize_angle(b.theta + d.theta))
            mounted = compose(new_b, relative_pose(b, state.poses[GRIPPER]))
            return StepResult(state.with_poses({a.mover: new_b, GRIPPER: mounted}))
        raise InvalidPrimitiveError(
            f"object {a.mover!r} cannot be moved", mover=a.mover
        )
    if a.kind == PrimitiveKind.GRASP:
        candidates = grasp_candidates(state, world)
        if len(candidates) != 1:
            _log.debug(f"grasp is a no-op, candidates: {candidates!r}")
            return StepResult(state, flagged=True)
        oid = candidates[0]
        offset = relative_pose(state.poses[GRIPPER], state.poses[oid])
        return StepResult(
            WorldState(
                state.poses,
                state.attached | {oid},
                {**state.attach_offsets, oid: offset},
            )
        )
    # release: objects stay where they are
    return StepResult(WorldState(state.poses))


def replay(
    init: WorldState, actions: Iterable[PrimitiveAction], world: World
) -> list[WorldState]:
    """states visited when applying actions from init (init included)"""
    states = [init]
    for a in actions:
        states.append(step(states[-1], a, world).state)
    return states


# === queries ================================================================


def _overlap(a: ObjectDecl, pa: Pose, b: ObjectDecl, pb: Pose) -> bool:
    if a.shape.kind == "disc" and b.shape.kind == "disc":
        return math.hypot(pa.x - pb.x, pa.y - pb.y) < a.shape.radius + b.shape.radius
    fa, fb = a.shape.footprint(pa), b.shape.footprint(pb)
    return bool(fa.intersects(fb) and not fa.touches(fb))


def check_collision(state: WorldState, world: World) -> set[tuple[str, str]]:
    """colliding id pairs, each pair sorted; surfaces never collide"""
    decls = {o.id: o for o in world.objects if o.id in state.poses}
    out = set()
    for i, j in itertools.combinations(sorted(decls), 2):
        li, lj = world.layer(i), world.layer(j)
        if li is None or li != lj:
            continue
        pair = {i, j}
        if GRIPPER in pair and (pair - {GRIPPER}) <= state.attached:
            continue
        if world.base is not None and pair == {GRIPPER, world.base}:
            continue
        if _overlap(decls[i], state.poses[i], decls[j], state.poses[j]):
            out.add((i, j))
    return out


def inside_surface(state: WorldState, world: World, oid: str, surface: str) -> bool:
    """is the whole footprint of the object on the surface"""
    outer = world.decl(surface).shape.footprint(state.poses[surface])
    return bool(outer.contains(world.decl(oid).shape.footprint(state.poses[oid])))


def goal_satisfied(state: WorldState, task: Task, world: World) -> bool:
    """every goal object entirely on the goal surface and no collisions"""
    surface = task.goal_surface
    if not all(inside_surface(state, world, oid, surface) for oid in task.goal_objects):
        return False
    return not check_collision(state, world)


def straight_line(
    start: Pose, target: Pose, step_cap: float, rot_cap: float, lever: float = 0.0
) -> list[Pose]:
    """equal world frame deltas moving start onto target

    ``lever`` is the largest distance of a carried point from the mover's
    center; steps are split so that no carried point moves more than
    ``step_cap`` per step.
    """
    dx, dy = target.x - start.x, target.y - start.y
    dtheta = normalize_angle(target.theta - start.theta)
    dist = math.hypot(dx, dy)
    n = max(
        math.ceil((dist + lever * abs(dtheta)) / step_cap - 1e-9),
        math.ceil(abs(dtheta) / rot_cap - 1e-9),
    )
    if n <= 0:
        return []
    return [Pose(dx / n, dy / n, dtheta / n)] * n


def carried_lever(state: WorldState, mover: str) -> float:
    """largest distance of an object carried by mover from its center"""
    m = state.poses[mover]
    carried = list(state.attached)
    if mover != GRIPPER:
        carried.append(GRIPPER)
    return max(
        (math.hypot(state.poses[o].x - m.x, state.poses[o].y - m.y) for o in carried),
        default=0.0,
    )
