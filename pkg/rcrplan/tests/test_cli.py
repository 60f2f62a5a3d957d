#
# Copyright (c) 2024 rcrplan developers.
#
# This file is part of `python-rcrplan`
#

from __future__ import annotations

import subprocess
import sys

import orjson
import pytest
from typer.testing import CliRunner

from rcrplan import __version__
from rcrplan.__main__ import app

PROBLEM = """
(define (problem pack-one)
    (:domain packing)
    (:objects g - gripper c - can box table - surface)
    (:init
        (gripper_can_0 g c)
        (can_surface_0 c box)
        (can_surface_0 c table)
        (clear3_gripper_can_1 g)
        (clear3_gripper_can_2 g))
    (:goal (and (can_surface_1 c box)))
)
"""


@pytest.fixture
def runner():
    return CliRunner()


def test_rcrplan_command():
    output = subprocess.run(
        [
            sys.executable,
            "-m",
            "rcrplan",
            "--help",
        ],
        capture_output=True,
    )
    assert output.returncode == 0
    assert "rcrplan" in output.stdout.decode()


def test_version(runner):
    result = runner.invoke(app, ["version"])
    assert result.exit_code == 0
    assert result.stdout.strip() == __version__


def test_plan(runner, tmp_path, corpus_dir):
    problem = tmp_path / "problem.pddl"
    problem.write_text(PROBLEM)
    out = tmp_path / "plans.json"
    args = ["--domain", str(corpus_dir / "packing.pddl"), "--problem", str(problem)]
    result = runner.invoke(app, ["plan", *args, "--k", "2", "--out", str(out)])
    assert result.exit_code == 0, result.output
    plans = orjson.loads(out.read_bytes())
    assert len(plans) == 2
    assert [s["action"] for s in plans[0]] == ["a2", "a1", "a5"]


def test_plan_without_solution(runner, tmp_path, corpus_dir):
    problem = tmp_path / "problem.pddl"
    problem.write_text(PROBLEM.replace("(clear3_gripper_can_2 g)", ""))
    args = ["--domain", str(corpus_dir / "packing.pddl"), "--problem", str(problem)]
    result = runner.invoke(app, ["plan", *args])
    assert result.exit_code == 1


def test_plan_with_malformed_domain(runner, tmp_path):
    domain = tmp_path / "domain.pddl"
    domain.write_text("(define (domain broken)\n  (:predicates (p ?x)\n")
    problem = tmp_path / "problem.pddl"
    problem.write_text(PROBLEM)
    args = ["--domain", str(domain), "--problem", str(problem)]
    result = runner.invoke(app, ["plan", *args])
    assert result.exit_code == 2


def test_learn_with_missing_demos(runner, tmp_path):
    demos = tmp_path / "missing.jsonl"
    args = ["--demos", str(demos), "--out", str(tmp_path)]
    result = runner.invoke(app, ["learn", *args])
    assert result.exit_code == 2


def test_viz_of_an_empty_bundle(runner, tmp_path):
    bundle = tmp_path / "predictors.json"
    bundle.write_text("[]")
    out = tmp_path / "regions.svg"
    result = runner.invoke(app, ["viz", "--predictors", str(bundle), "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert "no predictors" in out.read_text()


def test_gen_demos(runner, tmp_path):
    files = [tmp_path / "a.jsonl", tmp_path / "b.jsonl"]
    for path, workers in zip(files, ["1", "2"]):
        args = ["--out", str(path), "--n", "3", "--workers", workers]
        result = runner.invoke(app, ["gen-demos", *args])
        assert result.exit_code == 0, result.output
    assert files[0].read_bytes() == files[1].read_bytes()
    assert len(files[0].read_bytes().splitlines()) == 3
