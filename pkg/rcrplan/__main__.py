#
# Copyright (c) 2024 rcrplan developers.
#
# This file is part of `python-rcrplan`
#

"""rcrplan.__main__

support calling `python -m rcrplan`
"""
import enum
import logging
import os
import time
from pathlib import Path
from typing import List
from typing import Optional

import typer
import typer.colors
from rich import print as rich_print
from rich.table import Table

from rcrplan import __version__
from rcrplan._cli import default_run_dir
from rcrplan._cli import json_dumps
from rcrplan._cli import json_loads
from rcrplan._cli import load_model_file
from rcrplan._cli import typerize_error
from rcrplan._cli import write_json
from rcrplan.demos import generate_demos
from rcrplan.errors import ArtifactError
from rcrplan.errors import EmptyInputError
from rcrplan.models import CriticalityParams
from rcrplan.models import DemoScript
from rcrplan.models import RefinementBudget
from rcrplan.models import RunManifest
from rcrplan.models import TaskSpec
from rcrplan.models import WorldConfig
from rcrplan.pddl import ground
from rcrplan.pddl import read_domain
from rcrplan.pddl import read_problem
from rcrplan.pipeline import cafe_suite
from rcrplan.pipeline import evaluate
from rcrplan.pipeline import infeasible_packing_task
from rcrplan.pipeline import learn_model
from rcrplan.pipeline import load_model
from rcrplan.pipeline import packing_suite
from rcrplan.pipeline import sample_efficiency_curve
from rcrplan.pipeline import save_model
from rcrplan.pipeline import solve
from rcrplan.planning import plan_topk
from rcrplan.planning import plans_to_json
from rcrplan.regions import read_predictors
from rcrplan.state import read_trajectories
from rcrplan.state import write_trajectories
from rcrplan.viz import write_regions_svg

# === rcrplan cli interface ===================================================

if os.environ.get("RCRPLAN_DEBUG", "0").lower() in {"true", "1"}:
    logging.basicConfig(level=logging.DEBUG)

app = typer.Typer(
    name="rcrplan",
    epilog="#### learned abstractions for task and motion planning ####",
    no_args_is_help=True,
)


class WorldPreset(str, enum.Enum):
    packing = "packing"
    cafe = "cafe"


def _world(
    preset: WorldPreset, cans: int, seed: int, config: Optional[Path]
) -> WorldConfig:
    if config is not None:
        world = load_model_file(WorldConfig, config)
        return world.copy(update={"rng_seed": seed})
    if preset == WorldPreset.cafe:
        return WorldConfig.cafe(cans=cans, rng_seed=seed)
    return WorldConfig.packing(cans=cans, rng_seed=seed)


def _read_demos(path: Path):
    demos = read_trajectories(path)
    if not demos:
        raise EmptyInputError(f"no demonstrations in {path}", path=str(path))
    return demos


def _world_for_demos(demos, config: Optional[Path]) -> WorldConfig:
    if config is not None:
        return load_model_file(WorldConfig, config)
    if any(o.type == "freight" for o in demos[0].objects):
        return WorldConfig.cafe()
    return WorldConfig.packing()


def _suite(preset: WorldPreset, suite: Optional[Path], model, n_tasks: int, seed: int):
    if suite is not None:
        try:
            data = json_loads(suite.read_bytes())
        except OSError as err:
            raise ArtifactError(f"cannot read suite: {err}", path=str(suite)) from err
        return [TaskSpec.parse_obj(d) for d in data]
    if model.goal_relation is None:
        raise EmptyInputError("the model has no goal relation to build tasks from")
    if preset == WorldPreset.cafe:
        return cafe_suite(model.goal_relation, n_tasks=n_tasks, seed=seed)
    return packing_suite(model.goal_relation, n_tasks=n_tasks, seed=seed)


@app.command(name="gen-demos")
def gen_demos(
    out: Path = typer.Option(..., "--out", help="demonstrations json lines file"),
    n: int = typer.Option(40, "--n", help="number of demonstrations"),
    world: WorldPreset = typer.Option(
        WorldPreset.packing, "--world", help="world preset"
    ),
    cans: int = typer.Option(1, "--cans", help="number of cans"),
    seed: int = typer.Option(0, "--seed", help="random seed"),
    config: Optional[Path] = typer.Option(None, "--config", help="world config json"),
    script: Optional[Path] = typer.Option(None, "--script", help="demo script json"),
    workers: Optional[int] = typer.Option(
        None, "--workers", help="episode worker processes, default every cpu"
    ),
):
    """generate scripted demonstrations"""
    with typerize_error():
        world_config = _world(world, cans, seed, config)
        demo_script = load_model_file(DemoScript, script)
        demos = generate_demos(world_config, demo_script, n, workers)
        write_trajectories(out, demos)
    n_ok = sum(d.success for d in demos)
    typer.secho(
        f"wrote {len(demos)} demos ({n_ok} successful) to {out}",
        fg=typer.colors.GREEN,
    )


@app.command(name="learn")
def learn(
    demos: Path = typer.Option(..., "--demos", help="demonstrations json lines file"),
    out: Path = typer.Option(..., "--out", help="model directory"),
    theta: Optional[float] = typer.Option(
        None, "--theta", help="criticality threshold"
    ),
    params: Optional[Path] = typer.Option(
        None, "--params", help="learning params json"
    ),
    config: Optional[Path] = typer.Option(None, "--config", help="world config json"),
    seed: Optional[int] = typer.Option(None, "--seed", help="learning seed"),
):
    """learn predictors, relations and actions; writes the pddl domain"""
    with typerize_error():
        trajectories = _read_demos(demos)
        crit = load_model_file(CriticalityParams, params)
        given = {"theta": theta, "seed": seed}
        update = {k: v for k, v in given.items() if v is not None}
        crit = CriticalityParams.parse_obj({**crit.dict(), **update})
        world = _world_for_demos(trajectories, config)
        model = learn_model(trajectories, world, crit)
        paths = save_model(model, out)
    typer.secho(
        f"learned {len(model.vocab)} relations "
        f"and {len(model.domain.actions)} actions, "
        f"domain in {paths['domain']}",
        fg=typer.colors.GREEN,
    )


@app.command(name="plan")
def plan(
    domain: Path = typer.Option(..., "--domain", help="pddl domain"),
    problem: Path = typer.Option(..., "--problem", help="pddl problem"),
    k: int = typer.Option(1, "--k", min=1, help="number of plans"),
    out: Optional[Path] = typer.Option(None, "--out", help="plans json file"),
):
    """top-k plans for a pddl domain and problem"""
    with typerize_error():
        task = ground(read_domain(domain), read_problem(problem))
        plans = plan_topk(task, k)
    data = plans_to_json(plans)
    if out is not None:
        write_json(out, data)
    else:
        typer.echo(json_dumps(data))
    if plans.partial:
        typer.secho("# node budget exhausted", fg=typer.colors.YELLOW, err=True)
    if not plans.plans:
        typer.secho("no plan found", fg=typer.colors.RED, err=True)
        raise typer.Exit(code=1)


@app.command(name="solve")
def solve_(
    task: Path = typer.Option(..., "--task", help="task spec json"),
    model: Path = typer.Option(..., "--model", help="model directory"),
    out: Path = typer.Option(..., "--out", help="output directory"),
    budget: Optional[Path] = typer.Option(
        None, "--budget", help="refinement budget json"
    ),
    k: Optional[int] = typer.Option(None, "--k", min=1, help="plans per level"),
    seed: Optional[int] = typer.Option(None, "--seed", help="refinement seed"),
):
    """plan and refine one task"""
    with typerize_error():
        spec = load_model_file(TaskSpec, task)
        learned = load_model(model)
        refine = load_model_file(RefinementBudget, budget)
        update = {key: v for key, v in {"k": k, "seed": seed}.items() if v is not None}
        refine = RefinementBudget.parse_obj({**refine.dict(), **update})
        refined, report = solve(spec, learned, refine)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "report.json", report.dict())
    if refined is None:
        typer.secho(f"{spec.task_id}: no refinable plan", fg=typer.colors.RED, err=True)
        raise typer.Exit(code=1)
    write_json(out / "plan.json", refined.plan.to_list())
    if refined.trajectory is not None:
        write_trajectories(out / "trajectory.jsonl", [refined.trajectory])
    typer.secho(
        f"{spec.task_id}: solved with {len(refined.plan)} actions "
        f"and {len(refined.primitives)} primitives",
        fg=typer.colors.GREEN,
    )


@app.command(name="eval")
def eval_(
    model: Path = typer.Option(..., "--model", help="model directory"),
    out: Path = typer.Option(..., "--out", help="metrics json file"),
    suite: Optional[Path] = typer.Option(
        None, "--suite", help="json list of task specs"
    ),
    world: WorldPreset = typer.Option(
        WorldPreset.packing, "--world", help="suite preset"
    ),
    n_tasks: int = typer.Option(12, "--n-tasks", help="preset suite size"),
    train_max: int = typer.Option(
        1, "--train-max", help="max objects in training tasks"
    ),
    budget: Optional[Path] = typer.Option(
        None, "--budget", help="refinement budget json"
    ),
    seed: int = typer.Option(0, "--seed", help="suite and refinement seed"),
):
    """solve a task suite and write metrics"""
    with typerize_error():
        learned = load_model(model)
        refine = load_model_file(RefinementBudget, budget)
        refine = refine.copy(update={"seed": seed})
        specs = _suite(world, suite, learned, n_tasks, seed)
        metrics, reports = evaluate(specs, learned, refine, [train_max])
    write_json(out, metrics.dict())
    rich_print(_metrics_table(metrics.dict()))


def _metrics_table(metrics: dict) -> Table:
    tbl = Table("Metric", "Value", title="Evaluation")
    for key, value in metrics.items():
        tbl.add_row(key, str(value))
    return tbl


@app.command(name="viz")
def viz(
    predictors: Path = typer.Option(..., "--predictors", help="predictor bundle json"),
    out: Path = typer.Option(..., "--out", help="svg file"),
    seed: int = typer.Option(0, "--seed", help="sampling seed"),
):
    """plot learned regions as svg"""
    with typerize_error():
        bundle = read_predictors(predictors)
        write_regions_svg(out, bundle, seed)
    typer.secho(f"wrote {out}", fg=typer.colors.GREEN)


@app.command(name="pipeline")
def pipeline(
    out: Optional[Path] = typer.Option(None, "--out", help="run directory"),
    world: WorldPreset = typer.Option(
        WorldPreset.packing, "--world", help="world preset"
    ),
    n: int = typer.Option(40, "--n", help="number of demonstrations"),
    n_tasks: int = typer.Option(12, "--n-tasks", help="test suite size"),
    seed: int = typer.Option(0, "--seed", help="random seed"),
    theta: Optional[float] = typer.Option(
        None, "--theta", help="criticality threshold"
    ),
    budget: Optional[Path] = typer.Option(
        None, "--budget", help="refinement budget json"
    ),
):
    """generate demos, learn and evaluate in one run directory"""
    run_id = f"{world.value}-{seed}-{time.strftime('%Y%m%d-%H%M%S')}"
    run_dir = out or default_run_dir() / run_id
    with typerize_error():
        run_dir.mkdir(parents=True, exist_ok=True)
        config = _world(world, 1, seed, None)
        demos = generate_demos(config, DemoScript(), n)
        demos_path = run_dir / "demos.jsonl"
        write_trajectories(demos_path, demos)
        crit = CriticalityParams(seed=seed)
        if theta is not None:
            crit = crit.copy(update={"theta": theta})
        model = learn_model(demos, config, crit)
        artifacts = save_model(model, run_dir / "model")
        refine = load_model_file(RefinementBudget, budget).copy(update={"seed": seed})
        specs = _suite(world, None, model, n_tasks, seed)
        if world == WorldPreset.packing and model.goal_relation is not None:
            specs.append(infeasible_packing_task(model.goal_relation, seed=seed))
        metrics, reports = evaluate(specs, model, refine, [1])
    metrics_path = run_dir / "metrics.json"
    reports_path = run_dir / "reports.json"
    write_json(metrics_path, metrics.dict())
    write_json(reports_path, [r.dict() for r in reports])
    manifest = RunManifest(
        run_id=run_id,
        seeds={"world": seed, "learn": seed, "refine": seed},
        artifacts={
            "demos": str(demos_path),
            **artifacts,
            "metrics": str(metrics_path),
            "reports": str(reports_path),
        },
    )
    write_json(run_dir / "manifest.json", manifest.dict())
    rich_print(_metrics_table(metrics.dict()))
    typer.secho(f"run directory {run_dir}", fg=typer.colors.GREEN)


@app.command(name="curve")
def curve(
    demos: Path = typer.Option(..., "--demos", help="demonstrations json lines file"),
    sizes: List[int] = typer.Option([10, 20, 40], "--size", help="training set sizes"),
    world: WorldPreset = typer.Option(
        WorldPreset.packing, "--world", help="suite preset"
    ),
    n_tasks: int = typer.Option(12, "--n-tasks", help="test suite size"),
    seed: int = typer.Option(0, "--seed", help="random seed"),
    out: Optional[Path] = typer.Option(None, "--out", help="json output file"),
):
    """success rate as a function of the number of demonstrations"""
    with typerize_error():
        trajectories = _read_demos(demos)
        config = _world_for_demos(trajectories, None)
        crit = CriticalityParams(seed=seed)
        reference = learn_model(trajectories, config, crit)
        specs = _suite(world, None, reference, n_tasks, seed)
        rows = sample_efficiency_curve(
            trajectories, config, crit, specs, sizes, RefinementBudget(seed=seed)
        )
    if out is not None:
        write_json(out, rows)
    tbl = Table("Demos", "Success rate", title="Sample efficiency")
    for row in rows:
        tbl.add_row(str(row["demos"]), f"{row['success_rate']:.2f}")
    rich_print(tbl)


@app.command(name="inspect")
def inspect(
    model: Path = typer.Option(..., "--model", help="model directory"),
    json_: bool = typer.Option(False, "--json", help="return as json"),
):
    """show the vocabulary and action schemas of a model"""
    with typerize_error():
        learned = load_model(model)
    if json_:
        data = {
            "relations": learned.vocab.to_dict()["relations"],
            "static": sorted(learned.vocab.static),
            "actions": [a.name for a in learned.domain.actions],
            "goal_relation": learned.goal_relation,
        }
        typer.echo(json_dumps(data))
        return
    tbl = Table("Name", "Kind", "Args", "Static", title="Relations")
    for s in learned.vocab:
        static = str(s.name in learned.vocab.static)
        tbl.add_row(s.name, s.kind.value, " ".join(s.arg_types), static)
    rich_print(tbl)
    tbl = Table("Action", "Parameters", "Add", "Delete", title="Actions")
    for a in learned.domain.actions:
        tbl.add_row(
            a.name,
            " ".join(f"{p}:{t}" for p, t in a.parameters),
            "\n".join(map(str, sorted(a.add))),
            "\n".join(map(str, sorted(a.delete))),
        )
    rich_print(tbl)


@app.command(name="version")
def version():
    """print the version"""
    typer.echo(__version__)


if __name__ == "__main__":  # pragma: no cover
    app(prog_name="rcrplan")
