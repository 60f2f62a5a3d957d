#
# Copyright (c) 2024 rcrplan developers.
#
# This file is part of `python-rcrplan`
#

"""rcrplan.pipeline

learning and solving end to end: learn a model from demonstrations, store
and load it, solve task specs, evaluate task suites and measure sample
efficiency.
"""
from __future__ import annotations

import logging
import os
import time
from collections import Counter
from dataclasses import replace
from typing import Iterable
from typing import Sequence

import orjson

from rcrplan.actions import LiftedTrajectory
from rcrplan.actions import abstract_and_lift
from rcrplan.actions import changed_relations
from rcrplan.actions import cluster_transitions
from rcrplan.actions import learn_interpreters
from rcrplan.actions import read_interpreters
from rcrplan.actions import schemas_from_clusters
from rcrplan.actions import write_interpreters
from rcrplan.errors import ArtifactError
from rcrplan.errors import ConfigurationInfeasibleError
from rcrplan.errors import EmptyInputError
from rcrplan.errors import InvalidInputError
from rcrplan.models import CriticalityParams
from rcrplan.models import Metrics
from rcrplan.models import RefinementBudget
from rcrplan.models import SolveReport
from rcrplan.models import TaskSpec
from rcrplan.models import WorldConfig
from rcrplan.pddl import domain_model
from rcrplan.pddl import format_domain
from rcrplan.pddl import read_domain
from rcrplan.refinement import LearnedModel
from rcrplan.refinement import RefinedPlan
from rcrplan.refinement import solve_task
from rcrplan.regions import learn_predictors
from rcrplan.regions import read_predictors
from rcrplan.regions import write_predictors
from rcrplan.relations import GroundAtom
from rcrplan.relations import RelationKind
from rcrplan.relations import Vocabulary
from rcrplan.relations import flag_static
from rcrplan.relations import invent_relations
from rcrplan.relations import read_vocabulary
from rcrplan.relations import write_vocabulary
from rcrplan.simulator import World
from rcrplan.simulator import init_world
from rcrplan.state import Task
from rcrplan.state import Trajectory

__all__ = [
    "MODEL_FILES",
    "learn_model",
    "save_model",
    "load_model",
    "infer_goal_relation",
    "task_from_spec",
    "solve",
    "packing_suite",
    "infeasible_packing_task",
    "cafe_suite",
    "generalization_factor",
    "evaluate",
    "sample_efficiency_curve",
]

_log = logging.getLogger(__name__)

MODEL_FILES = {
    "predictors": "predictors.json",
    "vocab": "vocab.json",
    "domain": "domain.pddl",
    "interpreters": "interpreters.json",
    "model": "model.json",
}
_SUITE_REDRAWS = 20


# === learning ===============================================================


def infer_goal_relation(
    lifted: Iterable[LiftedTrajectory], vocab: Vocabulary, agent_types: Iterable[str]
) -> str | None:
    """region relation most often established between two passive objects"""
    agents = set(agent_types)
    votes: Counter[str] = Counter()
    for traj in lifted:
        if len(traj.states) < 2:
            continue
        gained = traj.states[-1].atoms - traj.states[0].atoms
        for a in gained:
            sym = vocab[a.relation]
            if sym.kind != RelationKind.REGION or not agents.isdisjoint(sym.arg_types):
                continue
            votes[a.relation] += 1
    if not votes:
        return None
    return sorted(votes.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]


def learn_model(
    demos: Sequence[Trajectory],
    config: WorldConfig,
    params: CriticalityParams,
    name: str | None = None,
) -> LearnedModel:
    """predictors, relations, actions and interpreters from raw demonstrations"""
    used = [d for d in demos if d.success or params.include_failed]
    if not used:
        raise EmptyInputError("no usable demonstrations", demos=len(demos))
    predictors = learn_predictors(used, config.type_pairs, params)
    types = sorted({o.type for d in used for o in d.objects})
    vocab = invent_relations(predictors, types)
    lifted = abstract_and_lift(used, vocab, predictors)
    vocab = flag_static(vocab, [t.states for t in lifted])  # type: ignore[misc]
    clusters = cluster_transitions(lifted)
    schemas = schemas_from_clusters(clusters, changed_relations(lifted))
    interpreters = learn_interpreters(clusters, schemas, config.agent_types)
    domain = domain_model(vocab, schemas, name or config.domain.value)
    goal = infer_goal_relation(lifted, vocab, config.agent_types)
    _log.info(
        f"learned {len(vocab)} relations and {len(schemas)} actions "
        f"from {len(used)} demonstrations, goal relation {goal}"
    )
    return LearnedModel(
        vocab=vocab,
        predictors=predictors,
        domain=domain,
        interpreters={i.action: i for i in interpreters},
        goal_relation=goal,
    )


def save_model(model: LearnedModel, out: str | os.PathLike) -> dict[str, str]:
    """write every model file to a directory, returns artifact paths"""
    os.makedirs(out, exist_ok=True)
    paths = {k: os.path.join(out, v) for k, v in MODEL_FILES.items()}
    write_predictors(paths["predictors"], model.predictors)
    write_vocabulary(paths["vocab"], model.vocab)
    with open(paths["domain"], "w", encoding="utf-8") as f:
        f.write(format_domain(model.domain))
    write_interpreters(paths["interpreters"], model.interpreters.values())
    meta = {"domain": model.domain.name, "goal_relation": model.goal_relation}
    with open(paths["model"], "wb") as f:
        f.write(orjson.dumps(meta, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS))
    return paths


def load_model(directory: str | os.PathLike) -> LearnedModel:
    paths = {k: os.path.join(directory, v) for k, v in MODEL_FILES.items()}
    goal = None
    if os.path.exists(paths["model"]):
        try:
            with open(paths["model"], "rb") as f:
                goal = orjson.loads(f.read()).get("goal_relation")
        except orjson.JSONDecodeError as err:
            raise ArtifactError(
                f"malformed model file: {err}", path=paths["model"]
            ) from err
    interpreters = {}
    if os.path.exists(paths["interpreters"]):
        interpreters = read_interpreters(paths["interpreters"])
    return LearnedModel(
        vocab=read_vocabulary(paths["vocab"]),
        predictors=read_predictors(paths["predictors"]),
        domain=read_domain(paths["domain"]),
        interpreters=interpreters,
        goal_relation=goal,
    )


# === solving ================================================================


def task_from_spec(
    spec: TaskSpec, model: LearnedModel | None = None
) -> tuple[Task, World]:
    """instantiate the world of a spec

    Without goal atoms every goal can gets the goal relation.
    """
    task, _ = init_world(spec.world)
    goal = frozenset(tuple(g) for g in spec.goal)
    if not goal:
        if model is None or model.goal_relation is None:
            raise InvalidInputError(
                f"task {spec.task_id!r} has no goal", task_id=spec.task_id
            )
        goal = frozenset(
            (model.goal_relation, o, task.goal_surface) for o in task.goal_objects
        )
    task = replace(
        task,
        task_id=spec.task_id,
        goal=goal,
        goal_objects=task.goal_objects if spec.check_geometry else (),
        horizon=spec.horizon,
    )
    return task, World(spec.world, tuple(task.objects))


def solve(
    spec: TaskSpec, model: LearnedModel, budget: RefinementBudget
) -> tuple[RefinedPlan | None, SolveReport]:
    task, world = task_from_spec(spec, model)
    goal = [GroundAtom(g[0], tuple(g[1:])) for g in sorted(task.goal)]
    return solve_task(task, model, world, budget, goal)


def _spec(task_id: str, config: WorldConfig, relation: str, surface: str) -> TaskSpec:
    for redraw in range(_SUITE_REDRAWS):
        world = config.copy(update={"rng_seed": config.rng_seed + 7919 * redraw})
        try:
            task, _ = init_world(world)
        except ConfigurationInfeasibleError:
            continue
        goal = [(relation, o, surface) for o in task.goal_objects]
        return TaskSpec(task_id=task_id, world=world, goal=goal)
    raise ConfigurationInfeasibleError(
        f"no feasible draw for {task_id}", task_id=task_id
    )


def packing_suite(
    relation: str, n_tasks: int = 12, max_cans: int = 4, seed: int = 0
) -> list[TaskSpec]:
    """packing tasks cycling through 1..max_cans cans"""
    specs = []
    for i in range(n_tasks):
        cans = 1 + i % max_cans
        config = WorldConfig.packing(cans=cans, rng_seed=seed * 1000 + i)
        specs.append(_spec(f"packing-{cans}-{i}", config, relation, "box"))
    return specs


def infeasible_packing_task(relation: str, cans: int = 5, seed: int = 0) -> TaskSpec:
    """more cans than the box holds"""
    config = WorldConfig.packing(cans=cans, rng_seed=seed)
    return _spec(f"packing-{cans}-infeasible", config, relation, "box")


def cafe_suite(
    relation: str, n_tasks: int = 10, cans: int = 6, seed: int = 0
) -> list[TaskSpec]:
    """deliveries of every can from the first to the last surface"""
    specs = []
    for i in range(n_tasks):
        config = WorldConfig.cafe(cans=cans, rng_seed=seed * 1000 + i)
        surface = _target_surface(config)
        specs.append(_spec(f"cafe-{cans}-{i}", config, relation, surface))
    return specs


def _target_surface(config: WorldConfig) -> str:
    return f"surface_{config.target_surface + 1}"


# === evaluation =============================================================


def generalization_factor(train: Iterable[int], test: Iterable[int]) -> float:
    """max object count in test tasks over max object count in training tasks"""
    train, test = list(train), list(test)
    if not train or not test:
        raise InvalidInputError("train and test counts must be nonempty")
    if max(train) <= 0:
        raise InvalidInputError("training tasks have no objects", train=train)
    return round(max(test) / max(train), 2)


def _goal_count(spec: TaskSpec) -> int:
    return spec.world.counts.get("can", 0)


def _mean(values: Sequence[float]) -> float | None:
    return sum(values) / len(values) if values else None


def evaluate(
    specs: Sequence[TaskSpec],
    model: LearnedModel,
    budget: RefinementBudget,
    train_counts: Iterable[int] = (),
) -> tuple[Metrics, list[SolveReport]]:
    """solve every task; metrics are a pure function of model, suite and budget"""
    if not specs:
        raise InvalidInputError("empty task suite")
    start = time.perf_counter()
    reports = []
    for spec in specs:
        _, report = solve(spec, model, budget)
        reports.append(report)
    solved = [r for r in reports if r.success]
    train_counts = list(train_counts)
    factor = None
    if train_counts:
        solved_counts = [_goal_count(s) for s, r in zip(specs, reports) if r.success]
        factor = generalization_factor(train_counts, solved_counts or [0])
    metrics = Metrics(
        success_rate=len(solved) / len(reports),
        mean_plan_length=_mean([len(r.plan) for r in solved]),
        mean_refine_samples=_mean([r.samples for r in solved]),
        generalization_factor=factor,
        wall_ms=(time.perf_counter() - start) * 1e3,
    )
    _log.info(f"solved {len(solved)} of {len(reports)} tasks")
    return metrics, reports


def sample_efficiency_curve(
    demos: Sequence[Trajectory],
    config: WorldConfig,
    params: CriticalityParams,
    specs: Sequence[TaskSpec],
    sizes: Iterable[int],
    budget: RefinementBudget,
) -> list[dict[str, float]]:
    """success rate when learning from the first n successful demonstrations"""
    ok = [d for d in demos if d.success]
    rows = []
    for n in sizes:
        if n > len(ok):
            _log.warning(f"only {len(ok)} successful demos, skipping n={n}")
            continue
        model = learn_model(ok[:n], config, params)
        metrics, _ = evaluate(specs, model, budget)
        rows.append({"demos": n, "success_rate": metrics.success_rate})
    return rows
