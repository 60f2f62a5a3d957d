#
# Copyright (c) 2024 rcrplan developers.
#
# This file is part of `python-rcrplan`
#

from __future__ import annotations

import numpy as np
import pytest

from rcrplan.actions import ActionSchema
from rcrplan.errors import ArtifactError
from rcrplan.errors import PDDLSyntaxError
from rcrplan.errors import TypeMismatchError
from rcrplan.errors import UnsupportedRequirementError
from rcrplan.pddl import LEARNED_REQUIREMENTS
from rcrplan.pddl import ProblemModel
from rcrplan.pddl import emit_domain
from rcrplan.pddl import emit_problem
from rcrplan.pddl import format_domain
from rcrplan.pddl import ground
from rcrplan.pddl import parse_domain
from rcrplan.pddl import parse_problem
from rcrplan.pddl import read_domain
from rcrplan.regions import Mixture
from rcrplan.regions import RcrPredictor
from rcrplan.relations import GroundAtom
from rcrplan.relations import invent_relations

A = GroundAtom.of

CORPUS = {
    "cafeworld.pddl": 12,
    "dinnertable.pddl": 26,
    "jenga.pddl": 14,
    "keva.pddl": 17,
    "packing.pddl": 5,
}

PACKING_PROBLEM = """
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


@pytest.mark.parametrize("name,n_actions", sorted(CORPUS.items()))
def test_corpus_parses(corpus_dir, name, n_actions):
    domain = read_domain(corpus_dir / name)
    assert len(domain.actions) == n_actions


def test_packing_structure(corpus_dir):
    domain = read_domain(corpus_dir / "packing.pddl")
    assert domain.name == "packing"
    assert domain.type_names == ["can", "gripper", "surface"]
    assert len(domain.predicates) == 7
    a5 = domain.action("a5")
    assert a5.add == {A("can_surface_1", "can_p1", "surface_p1")}
    assert a5.delete == {A("can_surface_0", "can_p1", "surface_p1")}
    assert [t for _, t in a5.parameters] == ["can", "gripper", "surface"]


@pytest.mark.parametrize("name", sorted(CORPUS))
def test_canonical_text_is_a_fixed_point(corpus_dir, name):
    once = format_domain(read_domain(corpus_dir / name))
    twice = format_domain(parse_domain(once))
    assert once == twice


def test_inequalities_survive(corpus_dir):
    domain = read_domain(corpus_dir / "jenga.pddl")
    assert any(a.inequalities for a in domain.actions)
    again = parse_domain(format_domain(domain))
    inequalities = [a.inequalities for a in domain.actions]
    assert [a.inequalities for a in again.actions] == inequalities


def test_syntax_error_positions():
    with pytest.raises(PDDLSyntaxError) as exc:
        parse_domain("(define (domain d)\n(:types a)\n)\n)")
    assert (exc.value.line, exc.value.column) == (4, 1)
    with pytest.raises(PDDLSyntaxError) as exc:
        parse_domain("(define (domain d)\n  (:types a")
    assert (exc.value.line, exc.value.column) == (2, 3)
    with pytest.raises(PDDLSyntaxError):
        parse_domain("")
    with pytest.raises(PDDLSyntaxError):
        parse_domain("(define (problem p))")


@pytest.mark.parametrize(
    "body",
    [
        "(:requirements :strips :fluents)",
        "(:action a :parameters (?x) :precondition (or (p ?x) (q ?x)) :effect (p ?x))",
        "(:action a :parameters (?x) :precondition (not (p ?x)) :effect (p ?x))",
        "(:action a :parameters (?x) :precondition (p ?x) :effect (forall (?y) (p ?y)))",
        "(:action a :parameters (?x) :precondition (= ?x ?x) :effect (p ?x))",
        "(:functions (cost))",
    ],
)
def test_unsupported_constructs(body):
    with pytest.raises(UnsupportedRequirementError) as exc:
        parse_domain(f"(define (domain d) (:predicates (p ?x) (q ?x)) {body})")
    assert exc.value.exit_code == 2


def test_missing_file(tmp_path):
    with pytest.raises(ArtifactError):
        read_domain(tmp_path / "missing.pddl")


def test_grounding_count(corpus_dir):
    domain = read_domain(corpus_dir / "packing.pddl")
    task = ground(domain, parse_problem(PACKING_PROBLEM))
    # a1, a2: can x gripper; a3, a4, a5: can x gripper x surface with two surfaces
    assert len(task.actions) == 1 + 1 + 2 + 2 + 2
    assert task.decode(task.goal) == {A("can_surface_1", "c", "box")}
    assert A("gripper_can_0", "g", "c") in task.decode(task.init)


def test_grounding_follows_subtypes():
    domain = parse_domain(
        """(define (domain d)
            (:requirements :strips :typing)
            (:types cup - can can)
            (:predicates (full ?x - can))
            (:action fill :parameters (?x - can) :precondition (and) :effect (full ?x)))"""
    )
    problem = parse_problem(
        "(define (problem p) (:domain d) (:objects k - cup n - can) (:init) (:goal (full k)))"
    )
    task = ground(domain, problem)
    assert sorted(a.args for a in task.actions) == [("k",), ("n",)]


def test_grounding_type_errors(corpus_dir):
    domain = read_domain(corpus_dir / "packing.pddl")
    swapped = PACKING_PROBLEM.replace("(gripper_can_0 g c)", "(gripper_can_0 c g)")
    with pytest.raises(TypeMismatchError):
        ground(domain, parse_problem(swapped))
    unknown = PACKING_PROBLEM.replace("c - can", "c - bottle")
    with pytest.raises(TypeMismatchError):
        ground(domain, parse_problem(unknown))


def test_problem_text():
    problem = parse_problem(PACKING_PROBLEM)
    assert problem.name == "pack-one"
    assert problem.domain == "packing"
    again = parse_problem(emit_problem(problem))
    assert set(again.objects) == set(problem.objects)
    assert (again.init, again.goal) == (problem.init, problem.goal)


def test_learned_domain_text():
    mix = Mixture(np.ones(1), np.array([[0.0, 0.0, 1.0, 0.0]]), np.eye(4)[None] * 1e-4)
    preds = {
        ("gripper", "can"): [RcrPredictor(("gripper", "can"), 1, mix, 0.0)],
        ("can", "surface"): [RcrPredictor(("can", "surface"), 1, mix, 0.0)],
    }
    vocab = invent_relations(preds)
    schema = ActionSchema(
        "a1",
        (("can_p1", "can"), ("gripper_p1", "gripper")),
        frozenset({A("gripper_can_0", "gripper_p1", "can_p1")}),
        frozenset({A("gripper_can_1", "gripper_p1", "can_p1")}),
        frozenset({A("gripper_can_0", "gripper_p1", "can_p1")}),
    )
    text = emit_domain(vocab, [schema], "Packing")
    domain = parse_domain(text)
    assert domain.name == "packing"
    assert domain.requirements == LEARNED_REQUIREMENTS
    assert len(domain.predicates) == len(vocab)
    assert domain.actions == (schema,)
    assert format_domain(domain) == text


def test_empty_problem_goal():
    problem = ProblemModel("p", "d", (("x", "object"),), frozenset(), frozenset())
    assert "(:goal (and" in emit_problem(problem)
