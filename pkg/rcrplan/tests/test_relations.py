#
# Copyright (c) 2024 rcrplan developers.
#
# This file is part of `python-rcrplan`
#

from __future__ import annotations

import itertools

import numpy as np
import pytest

from rcrplan.errors import TypeMismatchError
from rcrplan.geometry import Pose
from rcrplan.regions import Mixture
from rcrplan.regions import RcrPredictor
from rcrplan.relations import AbstractState
from rcrplan.relations import GroundAtom
from rcrplan.relations import RelationKind
from rcrplan.relations import abstract_state
from rcrplan.relations import evaluate_atom
from rcrplan.relations import flag_static
from rcrplan.relations import free_volume
from rcrplan.relations import invent_relations
from rcrplan.relations import read_vocabulary
from rcrplan.relations import region_samples
from rcrplan.relations import write_vocabulary
from rcrplan.state import ObjectDecl
from rcrplan.state import Shape
from rcrplan.state import WorldState

SLOT_PAIR = ("surface", "can")
#: radius of the region in the four_slot_predictor fixture
REGION_RADIUS = 0.05


def _blob(pair, component_id, center, eps=0.0) -> RcrPredictor:
    mix = Mixture(np.ones(1), np.array([center]), np.eye(4)[None] * 1e-4)
    return RcrPredictor(pair, component_id, mix, eps)


@pytest.fixture
def packing_like():
    return {
        ("gripper", "can"): [
            _blob(("gripper", "can"), 1, [0.035, 0.0, 1.0, 0.0]),
            _blob(("gripper", "can"), 2, [0.1, 0.0, 1.0, 0.0]),
        ],
        ("can", "surface"): [_blob(("can", "surface"), 1, [0.0, 0.0, 1.0, 0.0])],
    }


def test_vocabulary_names(packing_like):
    vocab = invent_relations(packing_like)
    assert set(vocab.names) == {
        "gripper_can_0",
        "gripper_can_1",
        "gripper_can_2",
        "can_surface_0",
        "can_surface_1",
        "clear_gripper_can_1",
        "clear_gripper_can_2",
        "clear_can_surface_1",
    }
    assert vocab["clear_gripper_can_2"].arg_types == ("gripper",)
    assert vocab["clear_gripper_can_2"].kind == RelationKind.FREE
    assert vocab["gripper_can_0"].kind == RelationKind.NONE
    assert vocab["can_surface_1"].arg_types == ("can", "surface")
    assert set(vocab.types) == {"gripper", "can", "surface"}


def test_pairs_without_predictors_get_no_relations():
    vocab = invent_relations({SLOT_PAIR: []}, ["surface", "can"])
    assert len(vocab) == 0
    assert vocab.types == ("can", "surface")


@pytest.mark.parametrize("filled,clear", [(0, True), (3, True), (4, False)])
def test_free_volume_four_slots(
    four_slot_predictor, slot_objects, slot_state, filled, clear
):
    vocab = invent_relations({SLOT_PAIR: [four_slot_predictor]})
    preds = {SLOT_PAIR: [four_slot_predictor]}
    alpha = abstract_state(slot_state(filled), vocab, preds, slot_objects)
    assert alpha.holds("clear_surface_can_1", "box") is clear


def test_free_volume_room(four_slot_predictor, slot_objects, slot_state):
    rooms = []
    for filled in range(5):
        room, vol = free_volume(
            four_slot_predictor, "box", slot_state(filled), slot_objects
        )
        rooms.append(room)
    assert vol == pytest.approx(np.pi * 0.02**2)
    assert rooms[0] > rooms[1] >= rooms[2] >= rooms[3] > vol
    assert rooms[4] == 0.0


def test_free_volume_ignores_cans_outside_the_region(
    four_slot_predictor, slot_objects, slot_state
):
    empty = slot_state(0)
    box = empty.pose("box")
    # footprint reaches into the region, center does not
    rim = empty.with_poses({"can_1": Pose(box.x + REGION_RADIUS + 0.01, box.y, 0.0)})
    assert free_volume(four_slot_predictor, "box", rim, slot_objects) == free_volume(
        four_slot_predictor, "box", empty, slot_objects
    )


def test_region_samples_estimate_the_region(four_slot_predictor):
    region = region_samples(four_slot_predictor)
    assert region.area == pytest.approx(np.pi * REGION_RADIUS**2, rel=0.25)
    assert np.all(np.hypot(region.points[:, 0], region.points[:, 1]) <= REGION_RADIUS)
    assert region_samples(four_slot_predictor) is region


def test_region_atoms_partition(four_slot_predictor, slot_objects, slot_state):
    vocab = invent_relations({SLOT_PAIR: [four_slot_predictor]})
    preds = {SLOT_PAIR: [four_slot_predictor]}
    alpha = abstract_state(slot_state(2), vocab, preds, slot_objects)
    for i in range(1, 5):
        held = [k for k in (0, 1) if alpha.holds(f"surface_can_{k}", "box", f"can_{i}")]
        assert held == ([1] if i <= 2 else [0])


def test_abstraction_is_translation_invariant(
    four_slot_predictor, slot_objects, slot_state
):
    vocab = invent_relations({SLOT_PAIR: [four_slot_predictor]})
    preds = {SLOT_PAIR: [four_slot_predictor]}
    rng = np.random.default_rng(0)
    for filled in range(5):
        base = slot_state(filled)
        dx, dy = rng.uniform(-1, 1, size=2)
        shifted = WorldState(
            {k: Pose(p.x + dx, p.y + dy, p.theta) for k, p in base.poses.items()}
        )
        assert abstract_state(base, vocab, preds, slot_objects) == abstract_state(
            shifted, vocab, preds, slot_objects
        )


def test_evaluate_atom_agrees_with_abstraction(
    four_slot_predictor, slot_objects, slot_state
):
    vocab = invent_relations({SLOT_PAIR: [four_slot_predictor]})
    preds = {SLOT_PAIR: [four_slot_predictor]}
    state = slot_state(3)
    alpha = abstract_state(state, vocab, preds, slot_objects)
    for k in (0, 1):
        for i in range(1, 5):
            atom = GroundAtom.of(f"surface_can_{k}", "box", f"can_{i}")
            got = evaluate_atom(state, atom, vocab, preds, slot_objects)
            assert got == (atom in alpha)
    clear = GroundAtom.of("clear_surface_can_1", "box")
    assert evaluate_atom(state, clear, vocab, preds, slot_objects) == (clear in alpha)


def test_evaluate_atom_checks_types(four_slot_predictor, slot_objects, slot_state):
    vocab = invent_relations({SLOT_PAIR: [four_slot_predictor]})
    preds = {SLOT_PAIR: [four_slot_predictor]}
    with pytest.raises(TypeMismatchError):
        swapped = GroundAtom.of("surface_can_1", "can_1", "box")
        evaluate_atom(slot_state(0), swapped, vocab, preds, slot_objects)
    with pytest.raises(TypeMismatchError):
        short = GroundAtom.of("surface_can_1", "box")
        evaluate_atom(slot_state(0), short, vocab, preds, slot_objects)


def test_ties_go_to_the_lower_component(slot_objects, slot_state):
    first = _blob(SLOT_PAIR, 1, [0.0, 0.0, 1.0, 0.0], eps=-1e9)
    second = RcrPredictor(SLOT_PAIR, 2, first.mixture, first.eps)
    preds = {SLOT_PAIR: [second, first]}
    vocab = invent_relations(preds)
    state = slot_state(1)
    alpha = abstract_state(state, vocab, preds, slot_objects)
    assert alpha.holds("surface_can_1", "box", "can_1")
    assert not alpha.holds("surface_can_2", "box", "can_1")


def test_flag_static(packing_like):
    vocab = invent_relations(packing_like)
    a = GroundAtom.of
    on = a("can_surface_0", "c", "s")
    seq = [
        AbstractState(frozenset({a("gripper_can_0", "g", "c"), on})),
        AbstractState(frozenset({a("gripper_can_1", "g", "c"), on})),
    ]
    flagged = flag_static(vocab, [seq])
    assert "gripper_can_0" not in flagged.static
    assert "gripper_can_1" not in flagged.static
    assert "can_surface_0" in flagged.static


def test_vocabulary_file(tmp_path, packing_like):
    vocab = flag_static(invent_relations(packing_like), [])
    path = tmp_path / "vocab.json"
    write_vocabulary(path, vocab)
    assert read_vocabulary(path) == vocab


def test_evaluate_atom_on_staged_pick(staged_pick_sequences):
    stages, types = staged_pick_sequences[0]
    cup = next(oid for oid, t in types.items() if t == "can")
    preds = {
        ("table", "can"): [_blob(("table", "can"), 1, [0.0, 0.0, 1.0, 0.0])],
        ("can", "gripper"): [
            _blob(("can", "gripper"), 1, [-0.1, 0.0, 1.0, 0.0]),
            _blob(("can", "gripper"), 2, [-0.035, 0.0, 1.0, 0.0]),
        ],
        ("base", "gripper"): [_blob(("base", "gripper"), 1, [0.0, 0.1, 1.0, 0.0])],
        ("base", "table"): [_blob(("base", "table"), 1, [0.0, 0.5, 1.0, 0.0])],
    }
    vocab = invent_relations(preds)
    objects = [ObjectDecl(oid, t, Shape.disc(0.02)) for oid, t in types.items()]
    table = Pose(0.0, 0.0, 0.0)
    fixed = {"base": Pose(0.0, -0.5, 0.0), "table": table}
    staged = [
        {"gripper": Pose(-0.1, 0.0, 0.0), cup: table},
        {"gripper": Pose(-0.035, 0.0, 0.0), cup: table},
        {"gripper": Pose(-0.035, 0.3, 0.0), cup: Pose(0.0, 0.3, 0.0)},
        {"gripper": Pose(0.0, -0.4, 0.0), cup: Pose(0.035, -0.4, 0.0)},
    ]
    for poses, expected in zip(staged, stages):
        state = WorldState({**fixed, **poses})
        true = set()
        for sym in vocab:
            if sym.kind == RelationKind.FREE:
                continue
            typed = [[o.id for o in objects if o.type == t] for t in sym.arg_types]
            for args in itertools.product(*typed):
                atom = GroundAtom(sym.name, args)
                if evaluate_atom(state, atom, vocab, preds, objects):
                    true.add(atom)
        assert true == set(expected.atoms)
