#
# Copyright (c) 2024 rcrplan developers.
#
# This file is part of `python-rcrplan`
#

"""rcrplan.actions

symbolic action invention from abstract demonstrations

Demonstrations are abstracted, consecutive duplicate abstract states are
collapsed and objects are replaced by typed placeholders ``<type>_pN``.
Transitions are clustered by their change signature, renamed so that
signature variables read ``<type>_pN`` and the remaining precondition
variables ``<type>_extra_pN``. Every cluster becomes one schema.
"""
from __future__ import annotations

import itertools
import logging
import os
from collections import Counter
from dataclasses import dataclass
from dataclasses import field
from typing import Any
from typing import Iterable
from typing import Mapping
from typing import Sequence

import orjson

from rcrplan.errors import ArtifactError
from rcrplan.errors import EmptySignatureError
from rcrplan.errors import InconsistentClusterError
from rcrplan.regions import PredictorMap
from rcrplan.relations import AbstractState
from rcrplan.relations import GroundAtom
from rcrplan.relations import Vocabulary
from rcrplan.relations import abstract_states
from rcrplan.state import Trajectory

__all__ = [
    "LiftedState",
    "LiftedTrajectory",
    "ChangeSignature",
    "Transition",
    "TransitionCluster",
    "ActionSchema",
    "ActionInterpreter",
    "collapse",
    "lift",
    "abstract_and_lift",
    "change_signature",
    "changed_relations",
    "cluster_transitions",
    "learn_precondition",
    "prune_precondition",
    "extract_params",
    "schemas_from_clusters",
    "invent_actions",
    "learn_interpreters",
    "read_interpreters",
    "write_interpreters",
]

_log = logging.getLogger(__name__)

Atom = GroundAtom


def _vars(atoms: Iterable[Atom]) -> set[str]:
    return {v for a in atoms for v in a.args}


def _rename(atoms: Iterable[Atom], mapping: Mapping[str, str]) -> frozenset:
    return frozenset(Atom(a.relation, tuple(mapping[v] for v in a.args)) for a in atoms)


def _bind(atoms: Iterable[Atom], binding: Mapping[str, str]) -> frozenset:
    # arguments missing from the binding are constants
    return frozenset(
        Atom(a.relation, tuple(binding.get(v, v) for v in a.args)) for a in atoms
    )


# === lifting ================================================================


@dataclass(frozen=True)
class LiftedState:
    """atoms over placeholders; binding maps placeholder -> object id"""

    atoms: frozenset
    binding: Mapping[str, str] = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class LiftedTrajectory:
    task_id: str
    states: tuple[LiftedState, ...]
    var_types: Mapping[str, str] = field(compare=False)
    #: placeholders in order of assignment
    variables: tuple[str, ...] = ()
    #: placeholders attached to the gripper at the end of every segment
    attached: tuple[frozenset, ...] = field(default=(), compare=False)

    def transitions(self) -> Iterable[tuple[int, LiftedState, LiftedState]]:
        for i, (pre, post) in enumerate(zip(self.states, self.states[1:])):
            yield i, pre, post


def collapse(seq: Sequence[AbstractState]) -> tuple[list[AbstractState], list[int]]:
    """drop consecutive duplicates; also returns the last index of every segment"""
    out: list[AbstractState] = []
    ends: list[int] = []
    for i, s in enumerate(seq):
        if out and out[-1] == s:
            ends[-1] = i
        else:
            out.append(s)
            ends.append(i)
    return out, ends


def lift(
    seq: Sequence[AbstractState],
    types: Mapping[str, str],
    task_id: str = "",
    attached: Sequence[Iterable[str]] = (),
) -> LiftedTrajectory:
    """replace objects by ``<type>_pN`` placeholders

    Objects are numbered by first appearance in the trajectory's atoms, state
    by state. Within a state atoms are visited in relation name order and ties
    fall back to the ids.
    """
    order: list[str] = []
    rank: dict[str, int] = {}

    def key(a: Atom):
        return a.relation, tuple(rank.get(x, len(types)) for x in a.args), a.args

    def visit(atoms: Iterable[Atom]) -> None:
        for a in sorted(atoms, key=key):
            for x in a.args:
                if x not in rank:
                    rank[x] = len(order)
                    order.append(x)

    for s in seq:
        visit(s.atoms)

    counters: Counter[str] = Counter()
    to_var: dict[str, str] = {}
    for obj in order:
        t = types[obj]
        counters[t] += 1
        to_var[obj] = f"{t}_p{counters[t]}"
    binding = {v: o for o, v in to_var.items()}
    states = tuple(LiftedState(_rename(s.atoms, to_var), binding) for s in seq)
    lifted_attached = tuple(
        frozenset(to_var[o] for o in att if o in to_var) for att in attached
    )
    return LiftedTrajectory(
        task_id=task_id,
        states=states,
        var_types={v: types[o] for o, v in to_var.items()},
        variables=tuple(to_var[o] for o in order),
        attached=lifted_attached,
    )


def abstract_and_lift(
    demos: Iterable[Trajectory],
    vocab: Vocabulary,
    predictors: PredictorMap,
) -> list[LiftedTrajectory]:
    """abstract every demo, collapse duplicates and lift"""
    out = []
    for traj in demos:
        seq = abstract_states(traj.states, vocab, predictors, traj.objects)
        collapsed, ends = collapse(seq)
        attached = [traj.states[i].attached for i in ends]
        out.append(lift(collapsed, traj.types(), traj.task_id, attached))
        _log.debug(
            f"{traj.task_id}: {len(traj.states)} states -> {len(collapsed)} abstract"
        )
    return out


# === signatures and clusters ================================================


@dataclass(frozen=True)
class ChangeSignature:
    added: frozenset
    deleted: frozenset

    def __post_init__(self):
        if self.added & self.deleted:
            raise ValueError("added and deleted atoms must be disjoint")

    @property
    def variables(self) -> set[str]:
        return _vars(self.added | self.deleted)

    def key(self) -> tuple:
        return tuple(sorted(self.added)), tuple(sorted(self.deleted))


def change_signature(s_i: LiftedState, s_j: LiftedState) -> ChangeSignature:
    """added and deleted atoms between two lifted states"""
    added = s_j.atoms - s_i.atoms
    deleted = s_i.atoms - s_j.atoms
    if not (added or deleted):
        raise EmptySignatureError("transition between identical abstract states")
    return ChangeSignature(frozenset(added), frozenset(deleted))


@dataclass(frozen=True)
class Transition:
    """one demo transition under its cluster's canonical variables"""

    pre: frozenset
    post: frozenset
    binding: Mapping[str, str]
    var_types: Mapping[str, str]
    task_id: str = ""
    index: int = 0
    attach: frozenset = frozenset()
    detach: frozenset = frozenset()


@dataclass(frozen=True)
class TransitionCluster:
    signature: ChangeSignature
    members: tuple[Transition, ...]

    @property
    def var_types(self) -> dict[str, str]:
        out: dict[str, str] = {}
        for m in self.members:
            out.update(m.var_types)
        return out


def _canonical(
    traj: LiftedTrajectory, index: int, pre: LiftedState, post: LiftedState
) -> tuple[ChangeSignature, Transition]:
    sig = change_signature(pre, post)
    order = {v: i for i, v in enumerate(traj.variables)}
    mapping: dict[str, str] = {}
    counters: Counter[str] = Counter()
    for a in [*sorted(sig.added), *sorted(sig.deleted)]:
        for v in a.args:
            if v not in mapping:
                t = traj.var_types[v]
                counters[t] += 1
                mapping[v] = f"{t}_p{counters[t]}"
    extra: Counter[str] = Counter()
    for v in sorted(_vars(pre.atoms) - set(mapping), key=order.__getitem__):
        t = traj.var_types[v]
        extra[t] += 1
        mapping[v] = f"{t}_extra_p{extra[t]}"
    att_pre = att_post = frozenset()
    if traj.attached:
        att_pre, att_post = traj.attached[index], traj.attached[index + 1]
    member = Transition(
        pre=_rename(pre.atoms, mapping),
        post=_rename(post.atoms, mapping),
        binding={mapping[v]: pre.binding[v] for v in mapping},
        var_types={mapping[v]: traj.var_types[v] for v in mapping},
        task_id=traj.task_id,
        index=index,
        attach=frozenset(mapping[v] for v in att_post - att_pre if v in mapping),
        detach=frozenset(mapping[v] for v in att_pre - att_post if v in mapping),
    )
    canon = ChangeSignature(_rename(sig.added, mapping), _rename(sig.deleted, mapping))
    return canon, member


def cluster_transitions(lifted: Iterable[LiftedTrajectory]) -> list[TransitionCluster]:
    """one cluster per distinct canonical change signature, in signature order"""
    groups: dict[tuple, list[Transition]] = {}
    sigs: dict[tuple, ChangeSignature] = {}
    for traj in lifted:
        for i, pre, post in traj.transitions():
            sig, member = _canonical(traj, i, pre, post)
            sigs.setdefault(sig.key(), sig)
            groups.setdefault(sig.key(), []).append(member)
    return [TransitionCluster(sigs[k], tuple(groups[k])) for k in sorted(groups)]


def changed_relations(lifted: Iterable[LiftedTrajectory]) -> set[str]:
    """relations appearing in any change signature of any demo"""
    out: set[str] = set()
    for traj in lifted:
        for _, pre, post in traj.transitions():
            out.update(a.relation for a in pre.atoms ^ post.atoms)
    return out


# === schemas ================================================================


def learn_precondition(cluster: TransitionCluster) -> frozenset:
    """intersection of all member pre states"""
    if not cluster.members:
        raise ValueError("cluster has no members")
    pre = cluster.members[0].pre
    for m in cluster.members[1:]:
        pre = pre & m.pre
    return frozenset(pre)


def prune_precondition(
    pre: Iterable[Atom], signature: ChangeSignature, changed: Iterable[str]
) -> frozenset:
    """drop atoms sharing no variable with the signature whose relation never changes"""
    sig_vars = signature.variables
    changed = set(changed)
    return frozenset(a for a in pre if set(a.args) & sig_vars or a.relation in changed)


def extract_params(
    pre: Iterable[Atom],
    add: Iterable[Atom],
    delete: Iterable[Atom],
    var_types: Mapping[str, str],
) -> list[tuple[str, str]]:
    """typed parameters in order of first use, atoms taken alphanumerically"""
    params: dict[str, str] = {}
    for group in (pre, add, delete):
        for a in sorted(group):
            for v in a.args:
                params.setdefault(v, var_types[v])
    return list(params.items())


@dataclass(frozen=True)
class ActionSchema:
    name: str
    parameters: tuple[tuple[str, str], ...]
    precondition: frozenset
    add: frozenset
    delete: frozenset
    #: pairs of parameters that must be bound to distinct objects
    inequalities: tuple[tuple[str, str], ...] = ()

    @property
    def parameter_names(self) -> list[str]:
        return [p for p, _ in self.parameters]

    def free_variables(self, constants: Iterable[str] = ()) -> set[str]:
        """atom arguments that are neither parameters nor constants"""
        used = _vars(self.precondition | self.add | self.delete)
        return used - set(self.parameter_names) - set(constants)

    @property
    def signature(self) -> ChangeSignature:
        return ChangeSignature(self.add, self.delete)

    def ground(
        self, binding: Mapping[str, str]
    ) -> tuple[frozenset, frozenset, frozenset]:
        """(precondition, add, delete) with parameters replaced by objects"""
        return (
            _bind(self.precondition, binding),
            _bind(self.add, binding),
            _bind(self.delete, binding),
        )

    def apply(self, atoms: frozenset, binding: Mapping[str, str]) -> frozenset | None:
        """successor atoms, or None when not applicable"""
        if any(binding.get(a, a) == binding.get(b, b) for a, b in self.inequalities):
            return None
        pre, add, delete = self.ground(binding)
        if not pre <= atoms:
            return None
        return (atoms - delete) | add


def schemas_from_clusters(
    clusters: Sequence[TransitionCluster], changed: Iterable[str]
) -> list[ActionSchema]:
    changed = set(changed)
    schemas = []
    for i, cluster in enumerate(clusters, start=1):
        sig = cluster.signature
        pre = prune_precondition(learn_precondition(cluster), sig, changed)
        var_types = cluster.var_types
        params = extract_params(pre, sig.added, sig.deleted, var_types)
        inequalities = tuple(
            (a, b)
            for (a, ta), (b, tb) in itertools.combinations(params, 2)
            if ta == tb
            and all(m.binding.get(a) != m.binding.get(b) for m in cluster.members)
        )
        schema = ActionSchema(
            name=f"a{i}",
            parameters=tuple(params),
            precondition=pre,
            add=sig.added,
            delete=sig.deleted,
            inequalities=inequalities,
        )
        for m in cluster.members:
            binding = {v: m.binding[v] for v, _ in params}
            ground = _rename(m.pre, m.binding)
            if schema.apply(ground, binding) != _rename(m.post, m.binding):
                raise InconsistentClusterError(
                    f"{schema.name} does not reproduce transition {m.index} "
                    f"of {m.task_id!r}",
                    action=schema.name,
                    task_id=m.task_id,
                    transition=m.index,
                )
        schemas.append(schema)
    _log.info(f"invented {len(schemas)} actions from {len(clusters)} clusters")
    return schemas


def invent_actions(lifted: Sequence[LiftedTrajectory]) -> list[ActionSchema]:
    """one validated schema per transition cluster, named a1..aN"""
    return schemas_from_clusters(cluster_transitions(lifted), changed_relations(lifted))


# === interpreters ===========================================================


@dataclass(frozen=True)
class ActionInterpreter:
    """how a schema maps to motion: grasp / release placement and the moved variable"""

    action: str
    attach: tuple[str, ...] = ()
    detach: tuple[str, ...] = ()
    #: variable whose pose is sampled when refining, None for no region effect
    mover: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "action": self.action,
            "attach": list(self.attach),
            "detach": list(self.detach),
            "mover": self.mover,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ActionInterpreter:
        return cls(
            data["action"],
            tuple(data.get("attach", ())),
            tuple(data.get("detach", ())),
            data.get("mover"),
        )


def _mover(schema: ActionSchema, var_types: Mapping[str, str], agents: set[str]):
    atoms = sorted(a for a in schema.add | schema.delete if len(a.args) == 2)
    for a in atoms:
        for v in a.args:
            if var_types.get(v) in agents:
                return v
    return atoms[0].args[0] if atoms else None


def learn_interpreters(
    clusters: Sequence[TransitionCluster],
    schemas: Sequence[ActionSchema],
    agent_types: Iterable[str],
) -> list[ActionInterpreter]:
    """most common attachment change per cluster plus the mover variable"""
    agents = set(agent_types)
    out = []
    for cluster, schema in zip(clusters, schemas):
        votes = Counter(
            (tuple(sorted(m.attach)), tuple(sorted(m.detach))) for m in cluster.members
        )
        (attach, detach), n = sorted(votes.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        if n < len(cluster.members):
            _log.warning(
                f"{schema.name}: attachment change agrees in {n} of "
                f"{len(cluster.members)} transitions"
            )
        params = dict(schema.parameters)
        out.append(
            ActionInterpreter(
                schema.name,
                tuple(v for v in attach if v in params),
                tuple(v for v in detach if v in params),
                _mover(schema, params, agents),
            )
        )
    return out


def write_interpreters(
    path: str | os.PathLike, interpreters: Iterable[ActionInterpreter]
):
    data = [i.to_dict() for i in interpreters]
    with open(path, "wb") as f:
        f.write(orjson.dumps(data, option=orjson.OPT_INDENT_2))


def read_interpreters(path: str | os.PathLike) -> dict[str, ActionInterpreter]:
    try:
        with open(path, "rb") as f:
            data = orjson.loads(f.read())
        return {d["action"]: ActionInterpreter.from_dict(d) for d in data}
    except OSError as err:
        raise ArtifactError(
            f"cannot read interpreters: {err}", path=os.fspath(path)
        ) from err
    except (orjson.JSONDecodeError, KeyError, TypeError) as err:
        raise ArtifactError(
            f"malformed interpreters: {err}", path=os.fspath(path)
        ) from err
