#
# Copyright (c) 2024 rcrplan developers.
#
# This file is part of `python-rcrplan`
#

"""rcrplan.relations

invented relation vocabulary and the abstraction function

Every type pair with K region predictors gets K region relations
``<ti>_<tj>_1..K``, a none relation ``<ti>_<tj>_0`` and one unary free
volume relation ``clear_<ti>_<tj>_k`` per region. Region atoms of one
ordered object tuple are mutually exclusive: the member predictor with
the highest log likelihood wins, ties go to the lower component id.
"""
from __future__ import annotations

import enum
import functools
import logging
import os
from dataclasses import dataclass
from dataclasses import field
from dataclasses import replace
from typing import Any
from typing import Iterable
from typing import Iterator
from typing import Mapping
from typing import NamedTuple
from typing import Sequence

import numpy as np
import orjson
import shapely

from rcrplan.errors import ArtifactError
from rcrplan.errors import TypeMismatchError
from rcrplan.geometry import relative_features
from rcrplan.geometry import relative_pose
from rcrplan.regions import PredictorMap
from rcrplan.regions import RcrPredictor
from rcrplan.state import ObjectDecl
from rcrplan.state import Shape
from rcrplan.state import WorldState

__all__ = [
    "RelationKind",
    "RelationSymbol",
    "Vocabulary",
    "GroundAtom",
    "AbstractState",
    "invent_relations",
    "evaluate_atom",
    "abstract_state",
    "abstract_states",
    "free_volume",
    "region_samples",
    "RegionSamples",
    "flag_static",
    "read_vocabulary",
    "write_vocabulary",
]

_log = logging.getLogger(__name__)

#: uniform draws estimating the region of a free volume relation
FREE_VOLUME_SAMPLES = 512
FREE_VOLUME_SEED = 0
#: half extent of the sampling box, in standard deviations around each mean
FREE_VOLUME_SPREAD = 3.0


class RelationKind(str, enum.Enum):
    REGION = "region"
    NONE = "none"
    FREE = "free"


@dataclass(frozen=True)
class RelationSymbol:
    name: str
    kind: RelationKind
    arg_types: tuple[str, ...]
    #: type pair of the underlying predictors
    pair: tuple[str, str]
    #: 1-based component id for region and free relations, 0 for none
    index: int

    @property
    def arity(self) -> int:
        return len(self.arg_types)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "kind": self.kind.value,
            "args": list(self.arg_types),
            "pair": list(self.pair),
            "index": self.index,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> RelationSymbol:
        return cls(
            data["name"],
            RelationKind(data["kind"]),
            tuple(data["args"]),
            tuple(data["pair"]),  # type: ignore[arg-type]
            int(data["index"]),
        )


@dataclass(frozen=True)
class Vocabulary:
    symbols: tuple[RelationSymbol, ...] = ()
    types: tuple[str, ...] = ()
    #: relations whose truth value never changed within any demonstration
    static: frozenset = frozenset()
    _index: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        names = [s.name for s in self.symbols]
        if len(set(names)) != len(names):
            raise ValueError("relation names must be unique")
        self._index.update({s.name: s for s in self.symbols})

    def __len__(self) -> int:
        return len(self.symbols)

    def __iter__(self) -> Iterator[RelationSymbol]:
        return iter(self.symbols)

    def __contains__(self, name: object) -> bool:
        return name in self._index

    def __getitem__(self, name: str) -> RelationSymbol:
        return self._index[name]

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.symbols]

    def pairs(self) -> list[tuple[str, str]]:
        return list(dict.fromkeys(s.pair for s in self.symbols))

    def of_kind(self, kind: RelationKind) -> list[RelationSymbol]:
        return [s for s in self.symbols if s.kind == kind]

    def to_dict(self) -> dict[str, Any]:
        return {
            "types": list(self.types),
            "relations": [s.to_dict() for s in self.symbols],
            "static": sorted(self.static),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Vocabulary:
        return cls(
            tuple(RelationSymbol.from_dict(s) for s in data["relations"]),
            tuple(data.get("types", ())),
            frozenset(data.get("static", ())),
        )


class GroundAtom(NamedTuple):
    relation: str
    args: tuple[str, ...]

    def __str__(self):
        return f"({' '.join((self.relation, *self.args))})"

    @classmethod
    def of(cls, relation: str, *args: str) -> GroundAtom:
        return cls(relation, tuple(args))


@dataclass(frozen=True)
class AbstractState:
    """set of true ground atoms"""

    atoms: frozenset = frozenset()

    def __contains__(self, atom: object) -> bool:
        return atom in self.atoms

    def __iter__(self) -> Iterator[GroundAtom]:
        return iter(sorted(self.atoms))

    def __len__(self) -> int:
        return len(self.atoms)

    def holds(self, relation: str, *args: str) -> bool:
        return GroundAtom(relation, tuple(args)) in self.atoms

    def to_list(self) -> list[str]:
        return [str(a) for a in sorted(self.atoms)]


# === vocabulary =============================================================


def invent_relations(predictors: PredictorMap, types: Iterable[str] = ()) -> Vocabulary:
    """region, none and free relations for every type pair with predictors"""
    symbols = []
    free = []
    all_types = set(types)
    for pair, preds in predictors.items():
        if not preds:
            continue
        ti, tj = pair
        all_types.update(pair)
        base = f"{ti}_{tj}"
        none = RelationSymbol(f"{base}_0", RelationKind.NONE, (ti, tj), pair, 0)
        symbols.append(none)
        for k in range(1, len(preds) + 1):
            name = f"{base}_{k}"
            symbols.append(RelationSymbol(name, RelationKind.REGION, (ti, tj), pair, k))
            free.append(
                RelationSymbol(f"clear_{base}_{k}", RelationKind.FREE, (ti,), pair, k)
            )
    vocab = Vocabulary(tuple(symbols + free), tuple(sorted(all_types)))
    _log.info(f"invented {len(vocab)} relations over {len(vocab.pairs())} type pairs")
    return vocab


def flag_static(
    vocab: Vocabulary, sequences: Iterable[Sequence[AbstractState]]
) -> Vocabulary:
    """flag relations whose atoms never change within any abstract sequence"""
    changing: set[str] = set()
    for seq in sequences:
        for prev, cur in zip(seq, seq[1:]):
            for atom in prev.atoms ^ cur.atoms:
                changing.add(atom.relation)
    static = frozenset(vocab.names) - changing
    _log.info(f"{len(static)} of {len(vocab)} relations are static")
    return replace(vocab, static=static)


# === free volume ============================================================


@dataclass(frozen=True)
class RegionSamples:
    """membership filtered Monte Carlo points of a region in its anchor frame"""

    #: (m, 2) member positions
    points: np.ndarray
    #: estimated planar measure of the region
    area: float


@functools.lru_cache(maxsize=None)
def region_samples(p: RcrPredictor) -> RegionSamples:
    """seeded uniform draws over the region's bounding box, members kept

    The box spans FREE_VOLUME_SPREAD standard deviations around every
    component mean. A draw is a member when it passes the threshold at the
    heading of any component mean.
    """
    mix = p.mixture
    spread = FREE_VOLUME_SPREAD * np.sqrt(mix.covs[:, [0, 1], [0, 1]])
    lo = np.min(mix.means[:, :2] - spread, axis=0)
    hi = np.max(mix.means[:, :2] + spread, axis=0)
    rng = np.random.default_rng(FREE_VOLUME_SEED)
    xy = rng.uniform(lo, hi, size=(FREE_VOLUME_SAMPLES, 2))
    norm = np.maximum(np.linalg.norm(mix.means[:, 2:4], axis=1), 1e-12)
    headings = mix.means[:, 2:4] / norm[:, None]
    member = np.zeros(len(xy), dtype=bool)
    for h in np.unique(headings, axis=0):
        feats = np.column_stack([xy, np.broadcast_to(h, (len(xy), 2))])
        member |= p.log_density(feats) >= p.eps
    area = float(np.prod(hi - lo) * member.mean())
    return RegionSamples(xy[member], area)


def _reach(shape: Shape) -> float:
    if shape.kind == "disc":
        return shape.radius
    return 0.5 * float(np.hypot(shape.width, shape.height))


def _room(points: np.ndarray, reach: float) -> float:
    """area covered by discs of radius reach centered at points"""
    if not len(points):
        return 0.0
    discs = shapely.buffer(shapely.points(points), reach)
    return float(shapely.area(shapely.union_all(discs)))


@functools.lru_cache(maxsize=None)
def _empty_room(p: RcrPredictor, reach: float) -> float:
    return _room(region_samples(p).points, reach)


def free_volume(
    p: RcrPredictor,
    anchor: str,
    state: WorldState,
    objects: Sequence[ObjectDecl],
    occupants: Iterable[str] | None = None,
) -> tuple[float, float]:
    """(room left in the region, footprint area of one object of the second type)

    Region points are candidate centers for one more object of the second
    type; a point is taken when that object would overlap an occupant, an
    object of the second type placed in the region. The room is the area
    such an object can cover from the points left. ``occupants`` defaults to
    the members of the region.
    """
    others = [o for o in objects if o.type == p.pair[1] and o.id != anchor]
    others = [o for o in others if o.id in state.poses]
    if not others:
        return 0.0, 0.0
    unit = min(others, key=lambda o: o.shape.area)
    reach = _reach(unit.shape)
    here = state.pose(anchor)
    if occupants is None:
        anchors = np.array([here] * len(others))
        feats = relative_features(anchors, np.array([state.pose(o.id) for o in others]))
        inside = p.log_density(feats) >= p.eps
        occupants = [o.id for o, m in zip(others, inside) if m]
    decls = {o.id: o for o in others}
    points = region_samples(p).points
    taken = np.zeros(len(points), dtype=bool)
    for oid in occupants:
        local = relative_pose(here, state.pose(oid))
        blocked = decls[oid].shape.footprint(local).buffer(reach)
        taken |= shapely.contains_xy(blocked, points[:, 0], points[:, 1])
    if not taken.any():
        free = _empty_room(p, reach)
    else:
        free = _room(points[~taken], reach)
    return free, float(unit.shape.area)


# === abstraction ============================================================


def _instances(
    pair: tuple[str, str], types: Mapping[str, str]
) -> list[tuple[str, str]]:
    ids = sorted(types)
    first = [a for a in ids if types[a] == pair[0]]
    second = [b for b in ids if types[b] == pair[1]]
    return [(a, b) for a in first for b in second if a != b]


def _region_indices(preds: Sequence[RcrPredictor], feats: np.ndarray) -> np.ndarray:
    """winning 1-based region index per feature row, 0 when no region claims it"""
    if not preds:
        return np.zeros(len(feats), dtype=int)
    ordered = sorted(preds, key=lambda p: p.component_id)
    ll = np.column_stack([p.log_density(feats) for p in ordered])
    eps = np.array([p.eps for p in ordered])
    member = ll >= eps
    # argmax returns the first maximum, i.e. the lower id on ties
    scored = np.where(member, ll, -np.inf)
    winner = np.argmax(scored, axis=1) + 1
    return np.where(member.any(axis=1), winner, 0)


def abstract_states(
    states: Sequence[WorldState],
    vocab: Vocabulary,
    predictors: PredictorMap,
    objects: Sequence[ObjectDecl],
) -> list[AbstractState]:
    """abstraction of a sequence of states, vectorized over the sequence"""
    types = {o.id: o.type for o in objects}
    atoms: list[set[GroundAtom]] = [set() for _ in states]
    by_pair: dict[tuple[str, str], list[RelationSymbol]] = {}
    for s in vocab:
        by_pair.setdefault(s.pair, []).append(s)
    for pair, syms in by_pair.items():
        preds = sorted(predictors.get(pair, ()), key=lambda p: p.component_id)
        base = {s.index: s.name for s in syms if s.kind != RelationKind.FREE}
        winners: dict[tuple[str, str], np.ndarray] = {}
        for a, b in _instances(pair, types):
            pa = np.array([st.pose(a) for st in states])
            pb = np.array([st.pose(b) for st in states])
            idx = _region_indices(preds, relative_features(pa, pb))
            winners[(a, b)] = idx
            for i, k in enumerate(idx):
                atoms[i].add(GroundAtom(base[int(k)], (a, b)))
        for s in syms:
            if s.kind != RelationKind.FREE:
                continue
            p = preds[s.index - 1]
            for a in sorted(o for o, t in types.items() if t == pair[0]):
                around = [(b, idx) for (x, b), idx in winners.items() if x == a]
                for i, st in enumerate(states):
                    inside = [b for b, idx in around if idx[i] == s.index]
                    free, vol = free_volume(p, a, st, objects, inside)
                    if free > vol:
                        atoms[i].add(GroundAtom(s.name, (a,)))
    return [AbstractState(frozenset(x)) for x in atoms]


def abstract_state(
    state: WorldState,
    vocab: Vocabulary,
    predictors: PredictorMap,
    objects: Sequence[ObjectDecl],
) -> AbstractState:
    """all true atoms over all well typed groundings"""
    return abstract_states([state], vocab, predictors, objects)[0]


def evaluate_atom(
    state: WorldState,
    atom: GroundAtom,
    vocab: Vocabulary,
    predictors: PredictorMap,
    objects: Sequence[ObjectDecl],
) -> bool:
    """truth value of a single atom"""
    sym = vocab[atom.relation]
    types = {o.id: o.type for o in objects}
    if len(atom.args) != sym.arity:
        raise TypeMismatchError(
            f"{atom.relation} takes {sym.arity} arguments, got {len(atom.args)}",
            atom=str(atom),
        )
    for arg, t in zip(atom.args, sym.arg_types):
        if types.get(arg) != t:
            raise TypeMismatchError(
                f"argument {arg!r} of {atom.relation} must have type {t!r}",
                atom=str(atom),
            )
    preds = sorted(predictors.get(sym.pair, ()), key=lambda p: p.component_id)
    if sym.kind == RelationKind.FREE:
        a = atom.args[0]
        around = [b for x, b in _instances(sym.pair, types) if x == a]
        feats = relative_features(
            np.array([state.pose(a)] * len(around)),
            np.array([state.pose(b) for b in around]).reshape(-1, 3),
        )
        idx = _region_indices(preds, feats)
        inside = [b for b, k in zip(around, idx) if k == sym.index]
        free, vol = free_volume(preds[sym.index - 1], a, state, objects, inside)
        return free > vol
    a, b = atom.args
    feat = relative_features(np.array([state.pose(a)]), np.array([state.pose(b)]))
    return int(_region_indices(preds, feat)[0]) == sym.index


# === io =====================================================================


def write_vocabulary(path: str | os.PathLike, vocab: Vocabulary) -> None:
    with open(path, "wb") as f:
        f.write(orjson.dumps(vocab.to_dict(), option=orjson.OPT_INDENT_2))


def read_vocabulary(path: str | os.PathLike) -> Vocabulary:
    try:
        with open(path, "rb") as f:
            return Vocabulary.from_dict(orjson.loads(f.read()))
    except OSError as err:
        raise ArtifactError(
            f"cannot read vocabulary: {err}", path=os.fspath(path)
        ) from err
    except (orjson.JSONDecodeError, KeyError, TypeError, ValueError) as err:
        raise ArtifactError(
            f"malformed vocabulary: {err}", path=os.fspath(path)
        ) from err
