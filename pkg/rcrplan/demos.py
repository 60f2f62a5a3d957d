#
# Copyright (c) 2024 rcrplan developers.
#
# This file is part of `python-rcrplan`
#

"""rcrplan.demos

scripted pick and place demonstrations

Each episode starts with the gripper at a random point behind the grasp
pose of the can, moves straight onto the grasp pose (gripper slightly
twisted), aligns with a one step twist and grasps. The can is carried to
a random point on an arc in front of the placement target, moved onto the
target and, in the packing domain, swept along the long axis of the box
before the release. The gripper twists back and leaves for another random
point behind it. Only raw states are recorded.

Episodes are independent and run in a process pool; results keep the
episode order.
"""
from __future__ import annotations

import functools
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from rcrplan.geometry import Pose
from rcrplan.geometry import compose
from rcrplan.geometry import invert
from rcrplan.geometry import normalize_angle
from rcrplan.models import DemoScript
from rcrplan.models import Domain
from rcrplan.models import Geometry
from rcrplan.models import WorldConfig
from rcrplan.simulator import World
from rcrplan.simulator import carried_lever
from rcrplan.simulator import check_collision
from rcrplan.simulator import goal_satisfied
from rcrplan.simulator import init_world
from rcrplan.simulator import step
from rcrplan.simulator import straight_line
from rcrplan.state import GRIPPER
from rcrplan.state import PrimitiveAction
from rcrplan.state import Task
from rcrplan.state import Trajectory
from rcrplan.state import WorldState

__all__ = ["generate_demos", "episode_seed"]

_log = logging.getLogger(__name__)

#: lateral offset of the placement target of an injected failure
FAILURE_OFFSET = 0.2
#: clearance kept between a swept can and the rim of the box
SWEEP_MARGIN = 0.005
_MAX_REDRAWS = 10


class ScriptInfeasible(Exception):
    """a scripted waypoint could not be reached without collision"""


def episode_seed(seed: int, index: int, redraw: int = 0) -> int:
    """independent stream per (seed, episode index)"""
    return int(np.random.SeedSequence([seed, index, redraw]).generate_state(1)[0])


class _Episode:
    def __init__(self, task: Task, state: WorldState, world: World) -> None:
        self.task = task
        self.world = world
        self.states = [state]
        self.actions: list[PrimitiveAction] = []

    @property
    def state(self) -> WorldState:
        return self.states[-1]

    def restart(self, state: WorldState) -> None:
        if self.actions:
            raise RuntimeError("episode already started")
        if check_collision(state, self.world):
            raise ScriptInfeasible("start state in collision")
        self.states = [state]

    def _apply(self, a: PrimitiveAction) -> None:
        res = step(self.state, a, self.world)
        if res.flagged:
            raise ScriptInfeasible("grasp found no unique candidate")
        if check_collision(res.state, self.world):
            raise ScriptInfeasible(f"collision after {a.kind.value}")
        self.actions.append(a)
        self.states.append(res.state)

    def move(self, target: Pose, mover: str = GRIPPER) -> None:
        g = self.world.geometry
        start = self.state.poses[mover]
        lever = carried_lever(self.state, mover)
        for d in straight_line(start, target, g.step_cap, g.rot_cap, lever):
            self._apply(PrimitiveAction.move(*d, mover=mover))

    def grasp(self) -> None:
        self._apply(PrimitiveAction.grasp())

    def release(self) -> None:
        self._apply(PrimitiveAction.release())


def _noisy(p: Pose, rng: np.random.Generator, script: DemoScript) -> Pose:
    return Pose(
        p.x + rng.normal(0.0, script.noise_xy) if script.noise_xy else p.x,
        p.y + rng.normal(0.0, script.noise_xy) if script.noise_xy else p.y,
        normalize_angle(p.theta + rng.normal(0.0, script.noise_theta))
        if script.noise_theta
        else p.theta,
    )


def _along(p: Pose, heading: float, dist: float) -> Pose:
    return Pose(p.x + dist * math.cos(heading), p.y + dist * math.sin(heading), p.theta)


def _behind(p: Pose, rng: np.random.Generator, g: Geometry) -> Pose:
    """random point of the half disc behind a gripper pose, heading kept"""
    heading = p.theta + rng.uniform(0.5 * math.pi, 1.5 * math.pi)
    return _along(p, heading, rng.uniform(*g.approach_band))


def _grasp_pose(world: World, can: Pose) -> Pose:
    """twisted gripper pose with the can straight ahead at the standoff"""
    twisted = normalize_angle(world.aligned_theta + world.geometry.misalign)
    return _along(Pose(can.x, can.y, twisted), twisted, -world.geometry.standoff)


def _pick(
    ep: _Episode,
    can: str,
    rng: np.random.Generator,
    script: DemoScript,
    waypoint: bool = True,
) -> None:
    grasp_at = _grasp_pose(ep.world, ep.state.poses[can])
    if waypoint:
        ep.move(_noisy(_behind(grasp_at, rng, ep.world.geometry), rng, script))
    ep.move(grasp_at)
    ep.move(Pose(grasp_at.x, grasp_at.y, ep.world.aligned_theta))
    ep.grasp()


def _place(
    ep: _Episode,
    can: str,
    target: Pose,
    rng: np.random.Generator,
    script: DemoScript,
    sweep: float = 0.0,
) -> None:
    g = ep.world.geometry
    grip = invert(ep.state.attach_offsets[can])
    phi = ep.world.aligned_theta + math.pi
    phi += rng.uniform(-g.ring_half_angle, g.ring_half_angle)
    arc = _along(target, phi, g.ring_radius)
    ep.move(compose(_noisy(arc, rng, script), grip))
    ep.move(compose(target, grip))
    if sweep:
        for dy in (sweep, -sweep, 0.0):
            ep.move(compose(compose(target, Pose(0.0, dy, 0.0)), grip))
    ep.release()


def _retreat(ep: _Episode, rng: np.random.Generator, script: DemoScript) -> None:
    g = ep.world.geometry
    here = ep.state.poses[GRIPPER]
    twisted = Pose(here.x, here.y, normalize_angle(ep.world.aligned_theta + g.misalign))
    ep.move(twisted)
    ep.move(_noisy(_behind(twisted, rng, g), rng, script))


def _packing_episode(
    ep: _Episode, rng: np.random.Generator, script: DemoScript, fail: bool
) -> None:
    task, world = ep.task, ep.world
    g = world.geometry
    can = task.goal_objects[0]
    start = _behind(_grasp_pose(world, ep.state.poses[can]), rng, g)
    ep.restart(ep.state.with_poses({GRIPPER: start}))
    box = ep.state.poses[task.goal_surface]
    target = Pose(box.x, box.y, box.theta)
    sweep = world.decl(task.goal_surface).shape.height / 2 - g.can_radius
    sweep = max(sweep - SWEEP_MARGIN, 0.0)
    if fail:
        target, sweep = compose(target, Pose(0.0, FAILURE_OFFSET, 0.0)), 0.0
    _pick(ep, can, rng, script, waypoint=False)
    _place(ep, can, target, rng, script, sweep)
    _retreat(ep, rng, script)


def _dock(
    ep: _Episode, surface: str, rng: np.random.Generator, script: DemoScript
) -> None:
    g = ep.world.geometry
    base = ep.world.base
    s = ep.state.poses[surface]
    dock = Pose(s.x + g.dock_offset[0], s.y + g.dock_offset[1], 0.0)
    phi = rng.uniform(math.pi, 2.0 * math.pi)
    ring = Pose(dock.x + 0.15 * math.cos(phi), dock.y + 0.15 * math.sin(phi), 0.0)
    ep.move(_noisy(Pose(ring.x, ring.y, 0.0), rng, script), mover=base)
    ep.move(dock, mover=base)


def _tuck(ep: _Episode) -> None:
    g = ep.world.geometry
    b = ep.state.poses[ep.world.base]
    ep.move(compose(b, Pose(*g.tuck_offset, ep.world.aligned_theta)))


def _cafe_episode(
    ep: _Episode, rng: np.random.Generator, script: DemoScript, fail: bool
) -> None:
    task, state, world = ep.task, ep.state, ep.world
    can = task.goal_objects[0]
    src = min(
        world.ids_of("surface"),
        key=lambda s: math.dist(state.poses[s][:2], state.poses[can][:2]),
    )
    dst = state.poses[task.goal_surface]
    target = Pose(dst.x, dst.y, 0.0)
    if fail:
        target = Pose(dst.x, dst.y + FAILURE_OFFSET, 0.0)
    _dock(ep, src, rng, script)
    _pick(ep, can, rng, script)
    _tuck(ep)
    _dock(ep, task.goal_surface, rng, script)
    _place(ep, can, target, rng, script)
    _retreat(ep, rng, script)
    _tuck(ep)


def _run_episode(
    config: WorldConfig, script: DemoScript, index: int
) -> Trajectory | None:
    """one recorded episode, redrawing worlds whose script cannot start"""
    episode = _cafe_episode if config.domain == Domain.CAFE else _packing_episode
    for redraw in range(_MAX_REDRAWS):
        seed = episode_seed(config.rng_seed, index, redraw)
        rng = np.random.default_rng(seed)
        task, state = init_world(config.copy(update={"rng_seed": seed}))
        world = World(config, tuple(task.objects))
        fail = bool(rng.uniform() < script.failure_rate)
        ep = _Episode(task, state, world)
        try:
            episode(ep, rng, script, fail)
        except ScriptInfeasible as err:
            _log.debug(f"episode {index} redraw {redraw} infeasible: {err}")
            if len(ep.states) < 2:
                continue
            success = False
        else:
            success = goal_satisfied(ep.state, task, world)
        return Trajectory(
            task_id=f"demo-{index}",
            objects=tuple(task.objects),
            states=tuple(ep.states),
            success=success,
            actions=tuple(ep.actions),
        )
    _log.warning(f"episode {index}: no feasible draw after {_MAX_REDRAWS} attempts")
    return None


def generate_demos(
    config: WorldConfig, script: DemoScript, n: int, workers: int | None = None
) -> list[Trajectory]:
    """n raw pick and place trajectories; failures are recorded, never raised

    ``workers`` bounds the process pool, ``None`` uses every cpu and ``1``
    runs the episodes in this process. The output does not depend on it.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got: {n}")
    workers = min(n, workers or os.cpu_count() or 1)
    run = functools.partial(_run_episode, config, script)
    if workers <= 1:
        results = [run(i) for i in range(n)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(run, range(n)))
    out = [t for t in results if t is not None]
    n_ok = sum(t.success for t in out)
    _log.info(f"generated {len(out)} demos, {n_ok} successful")
    return out
