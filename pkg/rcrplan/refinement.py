#
# Copyright (c) 2024 rcrplan developers.
#
# This file is part of `python-rcrplan`
#

"""rcrplan.refinement

turn abstract plans into primitive motions

Target states are drawn from the critical regions named by an action's
effects and rejection checked; motions are straight lines checked for
collisions at every step. The loop backtracks over samples, restarts,
plans and relaxation levels, in that order from innermost to outermost.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from dataclasses import field
from typing import Callable
from typing import Iterable
from typing import Mapping
from typing import Sequence

import numpy as np

from rcrplan.actions import ActionInterpreter
from rcrplan.actions import ActionSchema
from rcrplan.errors import MotionFailure
from rcrplan.errors import SampleFailure
from rcrplan.geometry import Pose
from rcrplan.geometry import compose
from rcrplan.geometry import invert
from rcrplan.geometry import normalize_angle
from rcrplan.geometry import pose_from_feature
from rcrplan.geometry import relative_features
from rcrplan.geometry import relative_pose
from rcrplan.models import RefinementBudget
from rcrplan.models import SolveReport
from rcrplan.pddl import DomainModel
from rcrplan.pddl import GroundedAction
from rcrplan.pddl import GroundedTask
from rcrplan.pddl import ProblemModel
from rcrplan.pddl import ground
from rcrplan.planning import Plan
from rcrplan.planning import RelaxationLevel
from rcrplan.planning import default_levels
from rcrplan.planning import plan_topk
from rcrplan.planning import relax
from rcrplan.regions import PredictorMap
from rcrplan.regions import RcrPredictor
from rcrplan.regions import rcr_sample
from rcrplan.relations import GroundAtom
from rcrplan.relations import RelationKind
from rcrplan.relations import Vocabulary
from rcrplan.relations import abstract_state
from rcrplan.simulator import SURFACE
from rcrplan.simulator import World
from rcrplan.simulator import carried_lever
from rcrplan.simulator import check_collision
from rcrplan.simulator import goal_satisfied
from rcrplan.simulator import grasp_candidates
from rcrplan.simulator import inside_surface
from rcrplan.simulator import replay
from rcrplan.simulator import step
from rcrplan.simulator import straight_line
from rcrplan.state import GRIPPER
from rcrplan.state import PrimitiveAction
from rcrplan.state import Task
from rcrplan.state import Trajectory
from rcrplan.state import WorldState

__all__ = [
    "LearnedModel",
    "PoseGenerator",
    "RefinedStep",
    "RefinedPlan",
    "problem_for",
    "pose_generator",
    "sample_target",
    "motion_to",
    "refine_plan",
    "solve_task",
]

_log = logging.getLogger(__name__)

#: replay must reproduce targets within this distance
REPLAY_TOL = 1e-6
#: proposals drawn at once for a placement on a surface
PLACEMENT_BATCH = 16
#: sideways offsets of the via point tried when a straight motion collides
DETOUR_OFFSETS = (0.05, -0.05, 0.1, -0.1, 0.15, -0.15)


@dataclass(frozen=True)
class LearnedModel:
    """everything learned from demonstrations"""

    vocab: Vocabulary
    predictors: PredictorMap
    domain: DomainModel
    interpreters: Mapping[str, ActionInterpreter] = field(default_factory=dict)
    #: relation that holds between a goal object and the goal surface
    goal_relation: str | None = None

    def schema(self, name: str) -> ActionSchema:
        return self.domain.action(name)

    def interpreter(self, name: str) -> ActionInterpreter:
        return self.interpreters.get(name) or ActionInterpreter(name)

    def alpha(self, state: WorldState, objects) -> frozenset:
        return abstract_state(state, self.vocab, self.predictors, objects).atoms

    def predictor(self, relation: str) -> RcrPredictor:
        sym = self.vocab[relation]
        preds = sorted(self.predictors[sym.pair], key=lambda p: p.component_id)
        return preds[sym.index - 1]


def problem_for(
    task: Task, model: LearnedModel, goal: Iterable[GroundAtom] = ()
) -> ProblemModel:
    """symbolic problem: objects, abstraction of the initial state and goal atoms"""
    goal = frozenset(goal) or frozenset(
        GroundAtom(g[0], tuple(g[1:])) for g in task.goal
    )
    return ProblemModel(
        name=task.task_id.lower(),
        domain=model.domain.name,
        objects=tuple((o.id, o.type) for o in task.objects),
        init=model.alpha(task.init, task.objects),
        goal=goal,
    )


# === sampling ===============================================================


@dataclass
class PoseGenerator:
    """sampler for the target state of one grounded action"""

    action: GroundedAction
    world: World
    #: object driven by primitives, None when the action needs no motion
    actuator: str | None
    #: region effect atoms in sampling order with their predictors
    targets: tuple[tuple[GroundAtom, RcrPredictor], ...]
    attach: frozenset = frozenset()
    detach: frozenset = frozenset()
    budget: int = 50
    #: abstraction check on the candidate target
    accept: Callable[[WorldState], bool] | None = None
    #: (object, surface) pairs whose footprint must stay on the surface
    support: frozenset = frozenset()
    used: int = 0
    pending: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError(f"budget must be >= 1, got: {self.budget}")

    @property
    def exhausted(self) -> bool:
        return self.used >= self.budget


def _actuator(obj: str | None, state: WorldState, world: World) -> str | None:
    if obj is None:
        return None
    if obj == GRIPPER or obj == world.base:
        return obj
    if obj in state.attached:
        return GRIPPER
    return None


def _moved(actuator: str | None, state: WorldState, world: World) -> set[str]:
    if actuator is None:
        return set()
    moved = {actuator}
    if actuator == world.base:
        moved.add(GRIPPER)
    if GRIPPER in moved:
        moved |= state.attached
    return moved


def pose_generator(
    action: GroundedAction,
    model: LearnedModel,
    world: World,
    state: WorldState,
    budget: int = 50,
    accept: Callable[[WorldState], bool] | None = None,
) -> PoseGenerator:
    schema = model.schema(action.name)
    interp = model.interpreter(action.name)
    binding = dict(zip(schema.parameter_names, action.args))
    mover = binding.get(interp.mover) if interp.mover else None
    _, add, _ = schema.ground(binding)
    vocab = model.vocab
    region = sorted(
        a
        for a in add
        if a.relation in vocab and vocab[a.relation].kind == RelationKind.REGION
    )
    actuator = _actuator(mover, state, world)
    # a relation between a base and its mounted gripper changes by moving the gripper
    if actuator is not None and actuator == world.base:
        if any(GRIPPER in a.args and world.base in a.args for a in region):
            actuator = GRIPPER
    if actuator is None:
        found = (_actuator(o, state, world) for a in region for o in a.args)
        actuator = next((o for o in found if o), None)
    moved = _moved(actuator, state, world)
    usable = [a for a in region if len(moved & set(a.args)) == 1]

    def weight(a: GroundAtom) -> float:
        return float(model.predictor(a.relation).mixture.weights.max())

    usable.sort(key=lambda a: (-weight(a), a))
    types = world.types()
    support = frozenset(
        (o, s)
        for a in usable
        for o in a.args
        for s in a.args
        if types[s] == SURFACE and o in moved and o not in (GRIPPER, world.base)
    )
    return PoseGenerator(
        action=action,
        world=world,
        actuator=actuator,
        targets=tuple((a, model.predictor(a.relation)) for a in usable),
        attach=frozenset(binding.get(v, v) for v in interp.attach),
        detach=frozenset(binding.get(v, v) for v in interp.detach),
        budget=budget,
        accept=accept,
        support=support,
    )


def _place_actuator(
    state: WorldState, world: World, actuator: str, obj: str, pose: Pose
) -> WorldState:
    """state with the actuator moved so that obj lands on pose"""
    if obj in state.attached:
        pose = compose(pose, invert(state.attach_offsets[obj]))
        obj = GRIPPER
    if actuator == GRIPPER:
        return state.with_poses({GRIPPER: pose})
    mount = relative_pose(state.poses[actuator], state.poses[GRIPPER])
    if obj == GRIPPER:
        pose = compose(pose, invert(mount))
    return state.with_poses({actuator: pose, GRIPPER: compose(pose, mount)})


def _propose(
    gen: PoseGenerator, state: WorldState, rng: np.random.Generator
) -> WorldState:
    world = gen.world
    if gen.actuator is None:
        return state
    if not gen.targets:
        r = world.geometry.retreat_radius * math.sqrt(rng.uniform())
        phi = rng.uniform(0.0, 2.0 * math.pi)
        here = state.poses[gen.actuator]
        there = Pose(here.x + r * math.cos(phi), here.y + r * math.sin(phi), here.theta)
        return _place_actuator(state, world, gen.actuator, gen.actuator, there)
    atom, predictor = gen.targets[0]
    moved = _moved(gen.actuator, state, world)
    a, b = atom.args
    rel = pose_from_feature(rcr_sample(predictor, rng))
    if a in moved:
        pose = compose(state.poses[b], invert(rel))
        return _place_actuator(state, world, gen.actuator, a, pose)
    return _place_actuator(state, world, gen.actuator, b, compose(state.poses[a], rel))


def _spread(gen: PoseGenerator, batch: list[WorldState]) -> list[WorldState]:
    """placements farthest from the region center first, so the middle stays free"""
    atom, predictor = gen.targets[0]
    a, b = atom.args
    feats = relative_features(
        np.array([c.poses[a] for c in batch]), np.array([c.poses[b] for c in batch])
    )
    mix = predictor.mixture
    center = mix.means[int(np.argmax(mix.weights))]
    dist = np.linalg.norm(feats[:, :2] - center[:2], axis=1)
    return [batch[i] for i in np.argsort(-dist, kind="stable")]


def _next_candidate(
    gen: PoseGenerator, state: WorldState, rng: np.random.Generator
) -> WorldState:
    if not gen.pending:
        types = gen.world.types()
        on_surface = bool(gen.targets) and any(
            types[o] == SURFACE for o in gen.targets[0][0].args
        )
        n = min(PLACEMENT_BATCH, gen.budget - gen.used) if on_surface else 1
        batch = [_propose(gen, state, rng) for _ in range(n)]
        gen.pending.extend(_spread(gen, batch) if n > 1 else batch)
    gen.used += 1
    return gen.pending.pop(0)


def _with_attachment(
    target: WorldState, attach: frozenset, detach: frozenset
) -> WorldState:
    attached = (target.attached - detach) | attach
    if attached == target.attached:
        return target
    g = target.poses[GRIPPER]
    offsets = {o: relative_pose(g, target.poses[o]) for o in attached}
    return WorldState(target.poses, frozenset(attached), offsets)


def sample_target(
    gen: PoseGenerator, state: WorldState, rng: np.random.Generator
) -> WorldState:
    """first candidate passing every check; SampleFailure once the budget is spent"""
    world = gen.world
    while not gen.exhausted:
        candidate = _next_candidate(gen, state, rng)
        if gen.attach:
            found = grasp_candidates(candidate, world)
            held = [o for o in found if o not in candidate.attached]
            if held != sorted(gen.attach - candidate.attached):
                _log.debug(f"{gen.action}: grasp candidates {held!r}")
                continue
        target = _with_attachment(candidate, gen.attach, gen.detach)
        if check_collision(target, world):
            _log.debug(f"{gen.action}: sampled state in collision")
            continue
        support = sorted(gen.support)
        off = [o for o, s in support if not inside_surface(target, world, o, s)]
        if off:
            _log.debug(f"{gen.action}: {off!r} not supported by the surface")
            continue
        if gen.accept is not None and not gen.accept(target):
            _log.debug(f"{gen.action}: sampled state has the wrong abstraction")
            continue
        return target
    raise SampleFailure(
        f"no valid target for {gen.action} after {gen.used} samples",
        action=str(gen.action),
        samples=gen.used,
    )


# === motion =================================================================


def _differs(a: Pose, b: Pose) -> bool:
    if math.hypot(a.x - b.x, a.y - b.y) > REPLAY_TOL:
        return True
    return abs(normalize_angle(a.theta - b.theta)) > REPLAY_TOL


def _via(start: Pose, goal: Pose, offset: float) -> Pose:
    """midpoint of the line from start to goal pushed sideways by offset"""
    dx, dy = goal.x - start.x, goal.y - start.y
    length = math.hypot(dx, dy)
    turn = normalize_angle(goal.theta - start.theta)
    return Pose(
        (start.x + goal.x) / 2 - offset * dy / length,
        (start.y + goal.y) / 2 + offset * dx / length,
        normalize_angle(start.theta + turn / 2),
    )


def _drive(
    state: WorldState, route: Sequence[Pose], mover: str, world: World
) -> tuple[list[PrimitiveAction], WorldState]:
    g = world.geometry
    lever = carried_lever(state, mover)
    actions: list[PrimitiveAction] = []
    current = state
    for pose in route:
        deltas = straight_line(
            current.poses[mover], pose, g.step_cap, g.rot_cap, lever
        )
        for d in deltas:
            a = PrimitiveAction.move(*d, mover=mover)
            current = step(current, a, world).state
            hits = check_collision(current, world)
            if hits:
                i, pairs = len(actions), sorted(hits)
                raise MotionFailure(
                    f"collision {pairs!r} at step {i}", step=i, pairs=pairs
                )
            actions.append(a)
    return actions, current


def motion_to(
    state: WorldState,
    target: WorldState,
    world: World,
    detours: Sequence[float] = DETOUR_OFFSETS,
) -> list[PrimitiveAction]:
    """collision checked motion plus the grasp or release it needs

    The mover goes along the straight line when it is free, else through one
    via point beside the line, trying the offsets in order.
    """
    mover = None
    base = world.base
    if base is not None and _differs(state.poses[base], target.poses[base]):
        mover = base
    elif _differs(state.poses[GRIPPER], target.poses[GRIPPER]):
        mover = GRIPPER
    actions: list[PrimitiveAction] = []
    current = state
    if mover is not None:
        start, goal = state.poses[mover], target.poses[mover]
        routes = [[goal]]
        if math.hypot(goal.x - start.x, goal.y - start.y) > REPLAY_TOL:
            routes += [[_via(start, goal, d), goal] for d in detours]
        failure = None
        for route in routes:
            try:
                actions, current = _drive(state, route, mover, world)
            except MotionFailure as err:
                failure = failure or err
                continue
            if len(route) > 1:
                _log.debug(f"{mover} detours through {route[0]}")
            break
        else:
            raise failure
    if target.attached - current.attached:
        a = PrimitiveAction.grasp()
        res = step(current, a, world)
        if res.flagged or res.state.attached != target.attached:
            raise MotionFailure(
                "grasp did not pick the intended object", step=len(actions)
            )
        current = res.state
        actions.append(a)
    elif current.attached - target.attached:
        a = PrimitiveAction.release()
        current = step(current, a, world).state
        actions.append(a)
    return actions


# === loop ===================================================================


@dataclass(frozen=True)
class RefinedStep:
    action: GroundedAction
    target: WorldState
    primitives: tuple[PrimitiveAction, ...]


@dataclass(frozen=True)
class RefinedPlan:
    plan: Plan
    level: int
    steps: tuple[RefinedStep, ...]
    #: None for the empty plan
    trajectory: Trajectory | None
    samples: int = 0

    @property
    def primitives(self) -> list[PrimitiveAction]:
        return [p for s in self.steps for p in s.primitives]


def _kept(atoms: frozenset, dropped: frozenset) -> frozenset:
    return frozenset(a for a in atoms if a.relation not in dropped)


#: refinement failure classes, reported as "<class>:<step index>"
PRECONDITION = "precondition"
SAMPLE = "sample"
MOTION = "motion"
HORIZON = "horizon"
VERIFY = "verify"
#: per level failure classes when no plan reaches refinement
NO_PLAN = "no-plan"
NODE_BUDGET = "node-budget"


class _StepFailed(Exception):
    def __init__(self, index: int, samples: int, cause: str) -> None:
        super().__init__(index)
        self.index = index
        self.samples = samples
        self.cause = cause


def _refine_once(
    plan: Plan,
    task: Task,
    grounded: GroundedTask,
    model: LearnedModel,
    world: World,
    level: RelaxationLevel,
    budget: RefinementBudget,
    rng: np.random.Generator,
) -> tuple[list[RefinedStep], int]:
    state = task.init
    steps: list[RefinedStep] = []
    samples = 0
    n_primitives = 0
    for i, action in enumerate(plan):
        now = _kept(model.alpha(state, task.objects), level.dropped)
        pre = _kept(grounded.decode(action.pre), level.dropped)
        if not pre <= now:
            raise _StepFailed(i, samples, PRECONDITION)
        expected = (now - grounded.decode(action.delete)) | _kept(
            grounded.decode(action.add), level.dropped
        )

        def accept(s: WorldState, expected=expected) -> bool:
            return _kept(model.alpha(s, task.objects), level.dropped) == expected

        gen = pose_generator(action, model, world, state, budget.samples, accept)
        blocked = False
        while True:
            try:
                target = sample_target(gen, state, rng)
            except SampleFailure:
                cause = MOTION if blocked else SAMPLE
                raise _StepFailed(i, samples + gen.used, cause) from None
            try:
                primitives = motion_to(state, target, world)
            except MotionFailure:
                blocked = True
                continue
            break
        samples += gen.used
        n_primitives += len(primitives)
        if n_primitives > task.horizon:
            raise _StepFailed(i, samples, HORIZON)
        steps.append(RefinedStep(action, target, tuple(primitives)))
        state = replay(state, primitives, world)[-1]
    return steps, samples


def _verify(
    steps: Sequence[RefinedStep],
    task: Task,
    grounded: GroundedTask,
    model: LearnedModel,
    world: World,
) -> list[WorldState] | None:
    """replayed states when the result truly achieves the unrelaxed goal"""
    states = [task.init]
    for s in steps:
        visited = replay(states[-1], s.primitives, world)
        if any(check_collision(v, world) for v in visited[1:]):
            return None
        end = visited[-1]
        if any(_differs(end.poses[o], s.target.poses[o]) for o in s.target.poses):
            return None
        states.extend(visited[1:])
    final = states[-1]
    if not grounded.decode(grounded.goal) <= model.alpha(final, task.objects):
        return None
    if task.goal_objects and not goal_satisfied(final, task, world):
        return None
    return states


def refine_plan(
    plan: Plan,
    task: Task,
    grounded: GroundedTask,
    model: LearnedModel,
    world: World,
    level: RelaxationLevel,
    budget: RefinementBudget,
    seed: Sequence[int] = (),
) -> tuple[RefinedPlan | None, str | None, int]:
    """(refined plan or None, failure, samples used) over all restarts

    The failure names the class and step of the deepest failing restart, for
    example "sample:3"; it is None on success.
    """
    deepest: tuple[int, str] | None = None
    samples = 0
    for restart in range(budget.restarts):
        seq = np.random.SeedSequence([budget.seed, *seed, restart])
        rng = np.random.default_rng(seq)
        try:
            steps, used = _refine_once(
                plan, task, grounded, model, world, level, budget, rng
            )
        except _StepFailed as err:
            deepest = max(deepest or (-1, ""), (err.index, err.cause))
            samples += err.samples
            continue
        samples += used
        states = _verify(steps, task, grounded, model, world)
        if states is None:
            deepest = max(deepest or (-1, ""), (len(plan), VERIFY))
            continue
        trajectory = None
        if len(states) > 1:
            trajectory = Trajectory(
                task_id=task.task_id,
                objects=tuple(task.objects),
                states=tuple(states),
                success=True,
                actions=tuple(p for s in steps for p in s.primitives),
            )
        refined = RefinedPlan(plan, level.level, tuple(steps), trajectory, samples)
        return refined, None, samples
    failure = None if deepest is None else f"{deepest[1]}:{deepest[0]}"
    return None, failure, samples


def solve_task(
    task: Task,
    model: LearnedModel,
    world: World,
    budget: RefinementBudget,
    goal: Iterable[GroundAtom] = (),
) -> tuple[RefinedPlan | None, SolveReport]:
    """plan and refine; failures are reported, never raised"""
    start = time.perf_counter()
    grounded = ground(model.domain, problem_for(task, model, goal))
    report = SolveReport(task_id=task.task_id, success=False)
    for level in default_levels(model.vocab, budget.max_level):
        plans = plan_topk(relax(grounded, level), budget.k, budget.node_budget)
        _log.info(f"{task.task_id}: level {level.level}, {len(plans)} plans")
        if not plans:
            reason = NODE_BUDGET if plans.partial else NO_PLAN
            report.failures[str(level.level)] = reason
        for j, plan in enumerate(plans):
            refined, failure, used = refine_plan(
                plan, task, grounded, model, world, level, budget, (level.level, j)
            )
            report.samples += used
            if refined is None:
                report.failures[f"{level.level}:{j}"] = failure
                continue
            report.success = True
            report.level = level.level
            report.plan = plan.steps
            report.primitive_steps = len(refined.primitives)
            report.wall_ms = (time.perf_counter() - start) * 1e3
            _log.info(f"{task.task_id}: solved at level {level.level} with plan {plan}")
            return refined, report
    report.wall_ms = (time.perf_counter() - start) * 1e3
    _log.info(f"{task.task_id}: no refinable plan, {report.failures!r}")
    return None, report
