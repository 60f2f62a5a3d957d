#
# Copyright (c) 2024 rcrplan developers.
#
# This file is part of `python-rcrplan`
#

"""rcrplan.planning

top-k forward search over grounded tasks, plan validation and relaxation

The search is uniform cost with unit action costs. It keeps running after
the first goal is reached and collects distinct goal paths; every state may
be expanded up to k times so that alternative paths survive duplicate
detection. Goal states are recorded, never expanded.
"""
from __future__ import annotations

import heapq
import logging
import os
from dataclasses import dataclass
from dataclasses import replace
from typing import Any
from typing import Iterable
from typing import Iterator
from typing import NamedTuple
from typing import Sequence
from typing import Union

import orjson

from rcrplan.errors import ArtifactError
from rcrplan.pddl import GroundedAction
from rcrplan.pddl import GroundedTask
from rcrplan.relations import RelationKind
from rcrplan.relations import Vocabulary

__all__ = [
    "Plan",
    "TopK",
    "Validation",
    "RelaxationLevel",
    "plan_topk",
    "validate_plan",
    "relax",
    "default_levels",
    "plans_to_json",
    "write_plans",
    "read_plans",
]

_log = logging.getLogger(__name__)

NODE_BUDGET = 1_000_000


@dataclass(frozen=True)
class Plan:
    actions: tuple[GroundedAction, ...] = ()

    def __len__(self) -> int:
        return len(self.actions)

    def __iter__(self) -> Iterator[GroundedAction]:
        return iter(self.actions)

    @property
    def cost(self) -> int:
        return len(self.actions)

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(a.id for a in self.actions)

    @property
    def steps(self) -> list[tuple[str, ...]]:
        """(name, *args) per action"""
        return [(a.name, *a.args) for a in self.actions]

    def to_list(self) -> list[dict[str, Any]]:
        return [{"action": a.name, "args": list(a.args)} for a in self.actions]

    def __str__(self):
        return " ".join(str(a) for a in self.actions) or "()"


@dataclass(frozen=True)
class TopK:
    """plans in nondecreasing cost order"""

    plans: tuple[Plan, ...] = ()
    #: node budget ran out before k plans were found
    partial: bool = False
    expanded: int = 0

    def __len__(self) -> int:
        return len(self.plans)

    def __iter__(self) -> Iterator[Plan]:
        return iter(self.plans)

    def __getitem__(self, i: int) -> Plan:
        return self.plans[i]


class _Node(NamedTuple):
    cost: int
    ids: tuple[int, ...]
    state: int


def plan_topk(task: GroundedTask, k: int, node_budget: int = NODE_BUDGET) -> TopK:
    """up to k distinct plans; an unsolvable task yields no plans"""
    if k < 1:
        raise ValueError(f"k must be >= 1, got: {k}")
    actions = task.actions
    goal = task.goal
    heap = [_Node(0, (), task.init)]
    pops: dict[int, int] = {}
    plans: list[Plan] = []
    expanded = 0
    while heap and len(plans) < k:
        node = heapq.heappop(heap)
        if node.state & goal == goal:
            plans.append(Plan(tuple(actions[i] for i in node.ids)))
            _log.debug(f"plan {len(plans)} of cost {node.cost}")
            continue
        n = pops.get(node.state, 0)
        if n >= k:
            continue
        pops[node.state] = n + 1
        if expanded >= node_budget:
            _log.warning(f"node budget of {node_budget} exhausted, {len(plans)} plans")
            return TopK(tuple(plans), True, expanded)
        expanded += 1
        for a in actions:
            if node.state & a.pre == a.pre:
                succ = (node.state & ~a.delete) | a.add
                heapq.heappush(heap, _Node(node.cost + 1, node.ids + (a.id,), succ))
    _log.info(f"found {len(plans)} plans after {expanded} expansions")
    return TopK(tuple(plans), False, expanded)


class Validation(NamedTuple):
    valid: bool
    #: first inapplicable step, len(plan) for an unmet goal, None when valid
    index: int | None = None


def validate_plan(
    task: GroundedTask, plan: Union[Plan, Sequence[GroundedAction]]
) -> Validation:
    """replay against the task's own action table

    A step is looked up by id, so plans found on a relaxed copy are checked
    against the preconditions of ``task``. Unknown steps fail in place.
    """
    state = task.init
    steps = list(plan)
    for i, step in enumerate(steps):
        if not 0 <= step.id < len(task.actions):
            return Validation(False, i)
        a = task.actions[step.id]
        if (a.name, a.args) != (step.name, step.args):
            return Validation(False, i)
        if state & a.pre != a.pre:
            return Validation(False, i)
        state = (state & ~a.delete) | a.add
    if state & task.goal != task.goal:
        return Validation(False, len(steps))
    return Validation(True)


# === relaxation =============================================================


@dataclass(frozen=True)
class RelaxationLevel:
    level: int
    dropped: frozenset = frozenset()


def _is_free(name: str) -> bool:
    return name.startswith("clear")


def _is_none(name: str) -> bool:
    return name.endswith("_0") and not _is_free(name)


def default_levels(
    predicates: Union[Vocabulary, Iterable[str]], max_level: int = 2
) -> list[RelaxationLevel]:
    """level 1 drops free volume relations, level 2 also the none relations

    For bare predicate names the kind is read from the naming scheme.
    """
    if isinstance(predicates, Vocabulary):
        free = {s.name for s in predicates.of_kind(RelationKind.FREE)}
        none = {s.name for s in predicates.of_kind(RelationKind.NONE)}
    else:
        names = list(predicates)
        free = {p for p in names if _is_free(p)}
        none = {p for p in names if _is_none(p)}
    schedule = [frozenset(), frozenset(free), frozenset(free | none)]
    return [RelaxationLevel(i, d) for i, d in enumerate(schedule[: max_level + 1])]


def relax(task: GroundedTask, level: RelaxationLevel) -> GroundedTask:
    """drop the level's predicates from every precondition and the goal"""
    if not level.dropped:
        return task
    mask = 0
    for i, atom in enumerate(task.atoms):
        if atom.relation in level.dropped:
            mask |= 1 << i
    keep = ~mask
    actions = tuple(replace(a, pre=a.pre & keep) for a in task.actions)
    return GroundedTask(task.atoms, actions, task.init, task.goal & keep)


# === io =====================================================================


def plans_to_json(plans: Iterable[Plan]) -> list[list[dict[str, Any]]]:
    return [p.to_list() for p in plans]


def write_plans(path: str | os.PathLike, plans: Iterable[Plan]) -> None:
    with open(path, "wb") as f:
        f.write(orjson.dumps(plans_to_json(plans), option=orjson.OPT_INDENT_2))


def read_plans(path: str | os.PathLike) -> list[list[tuple[str, ...]]]:
    """plans as (name, *args) steps"""
    try:
        with open(path, "rb") as f:
            data = orjson.loads(f.read())
        return [[(s["action"], *s["args"]) for s in plan] for plan in data]
    except OSError as err:
        raise ArtifactError(f"cannot read plans: {err}", path=os.fspath(path)) from err
    except (orjson.JSONDecodeError, KeyError, TypeError) as err:
        raise ArtifactError(f"malformed plans: {err}", path=os.fspath(path)) from err
