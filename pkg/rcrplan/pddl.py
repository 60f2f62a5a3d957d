#
# Copyright (c) 2024 rcrplan developers.
#
# This file is part of `python-rcrplan`
#

"""rcrplan.pddl

emit, parse and ground the typed strips fragment with equality and constants

Text is lowercased before parsing. Quantified and conditional requirement
flags are accepted, bodies using them are rejected.
"""
from __future__ import annotations

import bisect
import itertools
import logging
import os
import re
from dataclasses import dataclass
from dataclasses import field
from typing import Iterable
from typing import Iterator
from typing import Mapping
from typing import Sequence
from typing import Union

from rcrplan.actions import ActionSchema
from rcrplan.errors import ArtifactError
from rcrplan.errors import PDDLSyntaxError
from rcrplan.errors import TypeMismatchError
from rcrplan.errors import UnsupportedRequirementError
from rcrplan.relations import GroundAtom
from rcrplan.relations import Vocabulary

__all__ = [
    "DomainModel",
    "ProblemModel",
    "GroundedAction",
    "GroundedTask",
    "domain_model",
    "emit_domain",
    "format_domain",
    "emit_problem",
    "parse_domain",
    "parse_problem",
    "ground",
    "read_domain",
    "read_problem",
]

_log = logging.getLogger(__name__)

OBJECT = "object"
LEARNED_REQUIREMENTS = (":strips", ":typing", ":equality")
SUPPORTED_REQUIREMENTS = frozenset(
    {
        ":strips",
        ":typing",
        ":equality",
        ":conditional-effects",
        ":existential-preconditions",
        ":universal-preconditions",
        ":quantified-preconditions",
    }
)
_UNSUPPORTED_HEADS = frozenset({"or", "forall", "exists", "when", "imply"})
_INDENT = "    "


# === models =================================================================


@dataclass(frozen=True)
class DomainModel:
    name: str
    requirements: tuple[str, ...] = LEARNED_REQUIREMENTS
    #: (type, parent)
    types: tuple[tuple[str, str], ...] = ()
    #: (constant, type)
    constants: tuple[tuple[str, str], ...] = ()
    #: (predicate, ((var, type), ...))
    predicates: tuple[tuple[str, tuple[tuple[str, str], ...]], ...] = ()
    actions: tuple[ActionSchema, ...] = ()

    @property
    def type_names(self) -> list[str]:
        return [t for t, _ in self.types]

    def predicate(self, name: str) -> tuple[tuple[str, str], ...]:
        for p, params in self.predicates:
            if p == name:
                return params
        raise KeyError(name)

    def action(self, name: str) -> ActionSchema:
        for a in self.actions:
            if a.name == name:
                return a
        raise KeyError(name)


@dataclass(frozen=True)
class ProblemModel:
    name: str
    domain: str
    objects: tuple[tuple[str, str], ...] = ()
    init: frozenset = frozenset()
    goal: frozenset = frozenset()


@dataclass(frozen=True)
class GroundedAction:
    id: int
    name: str
    args: tuple[str, ...]
    pre: int
    add: int
    delete: int

    def __str__(self):
        return f"({' '.join((self.name, *self.args))})"


@dataclass(frozen=True)
class GroundedTask:
    """propositional task; atom sets are python int bitsets over ``atoms``"""

    atoms: tuple[GroundAtom, ...]
    actions: tuple[GroundedAction, ...]
    init: int
    goal: int
    _index: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        self._index.update({a: i for i, a in enumerate(self.atoms)})

    def bit(self, atom: GroundAtom) -> int:
        return 1 << self._index[atom]

    def bits(self, atoms: Iterable[GroundAtom]) -> int:
        out = 0
        for a in atoms:
            out |= self.bit(a)
        return out

    def decode(self, bits: int) -> frozenset:
        return frozenset(a for i, a in enumerate(self.atoms) if bits >> i & 1)


# === emission ===============================================================


def _var(v: str, constants: Iterable[str]) -> str:
    return v if v in constants else f"?{v}"


def _atom(a: GroundAtom, constants: Iterable[str] = ()) -> str:
    return f"({' '.join((a.relation, *(_var(v, constants) for v in a.args)))})"


def domain_model(
    vocab: Vocabulary, schemas: Sequence[ActionSchema], name: str = "rcrplan"
) -> DomainModel:
    """domain built from an invented vocabulary and schemas"""
    types = set(vocab.types)
    for s in schemas:
        types.update(t for _, t in s.parameters)
    predicates = []
    for sym in vocab:
        names = ("x", "y") if sym.arity == 2 else ("x",)
        predicates.append((sym.name, tuple(zip(names, sym.arg_types))))
    return DomainModel(
        name=name.lower(),
        types=tuple((t, OBJECT) for t in sorted(types)),
        predicates=tuple(sorted(predicates)),
        actions=tuple(schemas),
    )


def _typed(items: Iterable[tuple[str, str]], prefix: str = "") -> list[str]:
    return [f"{prefix}{n} - {t}" if t != OBJECT else f"{prefix}{n}" for n, t in items]


def format_domain(model: DomainModel) -> str:
    """canonical text: lowercase, one item per line, four space indent"""
    i1, i2, i3 = _INDENT, _INDENT * 2, _INDENT * 3
    consts = {c for c, _ in model.constants}
    lines = [f"(define (domain {model.name})"]
    lines.append(f"{i1}(:requirements {' '.join(model.requirements)})")
    lines.append(f"{i1}(:types")
    lines.extend(f"{i2}{t}" for t in _typed(model.types))
    lines.append(f"{i1})")
    if model.constants:
        lines.append(f"{i1}(:constants")
        lines.extend(f"{i2}{c}" for c in _typed(model.constants))
        lines.append(f"{i1})")
    lines.append(f"{i1}(:predicates")
    for name, params in model.predicates:
        lines.append(f"{i2}({' '.join((name, *_typed(params, '?')))})")
    lines.append(f"{i1})")
    for a in model.actions:
        lines.append(f"{i1}(:action {a.name}")
        lines.append(f"{i2}:parameters ({' '.join(_typed(a.parameters, '?'))})")
        lines.append(f"{i2}:precondition (and")
        for x, y in a.inequalities:
            lines.append(f"{i3}(not (= {_var(x, consts)} {_var(y, consts)}))")
        lines.extend(f"{i3}{_atom(p, consts)}" for p in sorted(a.precondition))
        lines.append(f"{i2})")
        lines.append(f"{i2}:effect (and")
        lines.extend(f"{i3}{_atom(p, consts)}" for p in sorted(a.add))
        lines.extend(f"{i3}(not {_atom(p, consts)})" for p in sorted(a.delete))
        lines.append(f"{i2})")
        lines.append(f"{i1})")
    lines.append(")")
    return "\n".join(lines) + "\n"


def emit_domain(
    vocab: Vocabulary, schemas: Sequence[ActionSchema], name: str = "rcrplan"
) -> str:
    """pddl domain text of an invented model"""
    return format_domain(domain_model(vocab, schemas, name))


def emit_problem(problem: ProblemModel) -> str:
    i1, i2 = _INDENT, _INDENT * 2
    lines = [f"(define (problem {problem.name})", f"{i1}(:domain {problem.domain})"]
    lines.append(f"{i1}(:objects")
    lines.extend(f"{i2}{o}" for o in _typed(sorted(problem.objects)))
    lines.append(f"{i1})")
    lines.append(f"{i1}(:init")
    lines.extend(f"{i2}{_grounded(a)}" for a in sorted(problem.init))
    lines.append(f"{i1})")
    lines.append(f"{i1}(:goal (and")
    lines.extend(f"{i2}{_grounded(a)}" for a in sorted(problem.goal))
    lines.append(f"{i1}))")
    lines.append(")")
    return "\n".join(lines) + "\n"


def _grounded(a: GroundAtom) -> str:
    return f"({' '.join((a.relation, *a.args))})"


# === s-expressions ==========================================================

_TOKEN = re.compile(r"\(|\)|;[^\n]*|[^\s();]+")


@dataclass(frozen=True)
class _Tok:
    value: str
    line: int
    column: int


@dataclass
class _Node:
    items: list[Union[_Tok, _Node]]
    line: int
    column: int

    def head(self) -> str | None:
        if self.items and isinstance(self.items[0], _Tok):
            return self.items[0].value
        return None


def _read(text: str) -> _Node:
    starts = [0] + [m.end() for m in re.finditer("\n", text)]
    stack: list[_Node] = []
    root = None
    for m in _TOKEN.finditer(text):
        tok = m.group()
        if tok.startswith(";"):
            continue
        line = bisect.bisect_right(starts, m.start())
        col = m.start() - starts[line - 1] + 1
        if tok == "(":
            stack.append(_Node([], line, col))
        elif tok == ")":
            if not stack:
                raise PDDLSyntaxError("unbalanced ')'", line, col)
            node = stack.pop()
            if stack:
                stack[-1].items.append(node)
            elif root is None:
                root = node
            else:
                raise PDDLSyntaxError(
                    "content after the top level expression", node.line, node.column
                )
        else:
            if not stack:
                raise PDDLSyntaxError(f"token {tok!r} outside parentheses", line, col)
            stack[-1].items.append(_Tok(tok, line, col))
    if stack:
        raise PDDLSyntaxError("unbalanced '('", stack[-1].line, stack[-1].column)
    if root is None:
        raise PDDLSyntaxError("empty input", 1, 1)
    return root


def _tok(item: _Tok | _Node, what: str) -> _Tok:
    if not isinstance(item, _Tok):
        raise PDDLSyntaxError(f"expected {what}", item.line, item.column)
    return item


def _node(item: _Tok | _Node, what: str) -> _Node:
    if not isinstance(item, _Node):
        raise PDDLSyntaxError(
            f"expected {what}, got {item.value!r}", item.line, item.column
        )
    return item


def _typed_list(
    items: Sequence[_Tok | _Node], var: bool = False
) -> list[tuple[str, str]]:
    out: list[tuple[str, str]] = []
    pending: list[str] = []
    it = iter(items)
    for item in it:
        tok = _tok(item, "a name")
        if tok.value == "-":
            t = next(it, None)
            if t is None:
                raise PDDLSyntaxError("missing type after '-'", tok.line, tok.column)
            out.extend((n, _tok(t, "a type").value) for n in pending)
            pending = []
            continue
        name = tok.value
        if var:
            if not name.startswith("?"):
                raise PDDLSyntaxError(
                    f"expected a variable, got {name!r}", tok.line, tok.column
                )
            name = name[1:]
        pending.append(name)
    out.extend((n, OBJECT) for n in pending)
    return out


def _expect_define(root: _Node, kind: str) -> tuple[str, list[_Node]]:
    if root.head() != "define" or len(root.items) < 2:
        raise PDDLSyntaxError("expected (define ...)", root.line, root.column)
    header = _node(root.items[1], f"({kind} <name>)")
    if header.head() != kind or len(header.items) != 2:
        raise PDDLSyntaxError(f"expected ({kind} <name>)", header.line, header.column)
    name = _tok(header.items[1], f"{kind} name").value
    return name, [_node(s, "a section") for s in root.items[2:]]


def _atom_of(node: _Node, variables: set[str]) -> GroundAtom:
    head = node.head()
    if head is None:
        raise PDDLSyntaxError("expected a predicate name", node.line, node.column)
    args = []
    for item in node.items[1:]:
        v = _tok(item, "an argument").value
        if v.startswith("?"):
            v = v[1:]
            variables.add(v)
        args.append(v)
    return GroundAtom(head, tuple(args))


def _reject(node: _Node) -> None:
    head = node.head()
    if head in _UNSUPPORTED_HEADS:
        raise UnsupportedRequirementError(
            f"'{head}' formulas are not supported "
            f"(line {node.line}, column {node.column})",
            line=node.line,
            column=node.column,
        )


def _conjuncts(node: _Node) -> list[_Node]:
    _reject(node)
    if not node.items:
        return []
    if node.head() != "and":
        return [node]
    out = [_node(c, "a literal") for c in node.items[1:]]
    for lit in out:
        _reject(lit)
        if lit.head() == "and":
            raise PDDLSyntaxError("nested conjunction", lit.line, lit.column)
    return out


def _negated(lit: _Node) -> _Node:
    if len(lit.items) != 2:
        raise PDDLSyntaxError("'not' takes one formula", lit.line, lit.column)
    inner = _node(lit.items[1], "a formula")
    _reject(inner)
    return inner


def _precondition(node: _Node, variables: set[str]):
    atoms, inequalities = set(), []
    for lit in _conjuncts(node):
        head = lit.head()
        if head == "not":
            inner = _negated(lit)
            if inner.head() != "=":
                raise UnsupportedRequirementError(
                    f"negative preconditions are not supported (line {lit.line})",
                    line=lit.line,
                    column=lit.column,
                )
            x, y = _atom_of(inner, variables).args
            inequalities.append((x, y))
        elif head == "=":
            raise UnsupportedRequirementError(
                f"equality preconditions are not supported (line {lit.line})",
                line=lit.line,
                column=lit.column,
            )
        else:
            atoms.add(_atom_of(lit, variables))
    return frozenset(atoms), tuple(inequalities)


def _effect(node: _Node, variables: set[str]):
    add, delete = set(), set()
    for lit in _conjuncts(node):
        if lit.head() == "not":
            delete.add(_atom_of(_negated(lit), variables))
        else:
            add.add(_atom_of(lit, variables))
    return frozenset(add), frozenset(delete)


def _action(section: _Node, constants: set[str]) -> ActionSchema:
    items = section.items
    name_tok = items[1] if len(items) > 1 else None
    if not isinstance(name_tok, _Tok) or name_tok.value.startswith(":"):
        at = name_tok or section
        raise PDDLSyntaxError("action without a name", at.line, at.column)
    name = name_tok.value
    fields: dict[str, _Tok | _Node] = {}
    rest = iter(items[2:])
    for key in rest:
        k = _tok(key, "an action field").value
        value = next(rest, None)
        if value is None:
            raise PDDLSyntaxError(f"missing value for {k}", key.line, key.column)
        fields[k] = value
    unknown = set(fields) - {":parameters", ":precondition", ":effect"}
    if unknown:
        raise UnsupportedRequirementError(
            f"unsupported action fields {sorted(unknown)!r}", action=name
        )
    params: list[tuple[str, str]] = []
    if ":parameters" in fields:
        params = _typed_list(_node(fields[":parameters"], "parameters").items, var=True)
    used: set[str] = set()
    pre, inequalities = frozenset(), ()
    if ":precondition" in fields:
        formula = _node(fields[":precondition"], "a formula")
        pre, inequalities = _precondition(formula, used)
    add, delete = frozenset(), frozenset()
    if ":effect" in fields:
        add, delete = _effect(_node(fields[":effect"], "a formula"), used)
    undeclared = used - {p for p, _ in params}
    if undeclared:
        _log.warning(f"action {name}: undeclared variables {sorted(undeclared)!r}")
    unknown = {v for a in pre | add | delete for v in a.args} - used - constants
    if unknown:
        _log.warning(f"action {name}: unknown constants {sorted(unknown)!r}")
    return ActionSchema(name, tuple(params), pre, add, delete, tuple(inequalities))


def parse_domain(text: str) -> DomainModel:
    """parse a domain in the supported fragment"""
    name, sections = _expect_define(_read(text.lower()), "domain")
    requirements: tuple[str, ...] = ()
    types: list[tuple[str, str]] = []
    constants: list[tuple[str, str]] = []
    predicates = []
    actions = []
    for sec in sections:
        head = sec.head()
        body = sec.items[1:]
        if head == ":requirements":
            requirements = tuple(_tok(t, "a requirement").value for t in body)
            bad = [r for r in requirements if r not in SUPPORTED_REQUIREMENTS]
            if bad:
                raise UnsupportedRequirementError(
                    f"unsupported requirements {bad!r}", requirements=bad
                )
        elif head == ":types":
            types = _typed_list(body)
        elif head == ":constants":
            constants = _typed_list(body)
        elif head == ":predicates":
            for p in body:
                p = _node(p, "a predicate declaration")
                pname = _tok(p.items[0], "a predicate name") if p.items else None
                if pname is None:
                    raise PDDLSyntaxError(
                        "empty predicate declaration", p.line, p.column
                    )
                params = tuple(_typed_list(p.items[1:], var=True))
                predicates.append((pname.value, params))
        elif head == ":action":
            actions.append(_action(sec, {c for c, _ in constants}))
        else:
            raise UnsupportedRequirementError(
                f"unsupported section {head!r} (line {sec.line})", line=sec.line
            )
    return DomainModel(
        name=name,
        requirements=requirements,
        types=tuple(types),
        constants=tuple(constants),
        predicates=tuple(predicates),
        actions=tuple(actions),
    )


def parse_problem(text: str) -> ProblemModel:
    name, sections = _expect_define(_read(text.lower()), "problem")
    domain = ""
    objects: list[tuple[str, str]] = []
    init: set[GroundAtom] = set()
    goal: frozenset = frozenset()
    for sec in sections:
        head = sec.head()
        body = sec.items[1:]
        if head == ":domain":
            domain = _tok(body[0], "a domain name").value if body else ""
        elif head == ":objects":
            objects = _typed_list(body)
        elif head == ":init":
            for a in body:
                atom = _atom_of(_node(a, "an atom"), set())
                init.add(atom)
        elif head == ":goal":
            if len(body) != 1:
                raise PDDLSyntaxError("expected one goal formula", sec.line, sec.column)
            variables: set[str] = set()
            formula = _node(body[0], "a goal formula")
            atoms, inequalities = _precondition(formula, variables)
            if variables or inequalities:
                raise PDDLSyntaxError(
                    "goal must be a conjunction of ground atoms", sec.line, sec.column
                )
            goal = atoms
        else:
            raise UnsupportedRequirementError(
                f"unsupported section {head!r} (line {sec.line})", line=sec.line
            )
    return ProblemModel(name, domain, tuple(objects), frozenset(init), goal)


def _read_text(path: str | os.PathLike) -> str:
    try:
        with open(path, encoding="utf-8") as f:
            return f.read()
    except OSError as err:
        raise ArtifactError(f"cannot read pddl: {err}", path=os.fspath(path)) from err


def read_domain(path: str | os.PathLike) -> DomainModel:
    return parse_domain(_read_text(path))


def read_problem(path: str | os.PathLike) -> ProblemModel:
    return parse_problem(_read_text(path))


# === grounding ==============================================================


def _ancestors(types: Sequence[tuple[str, str]]) -> dict[str, set[str]]:
    parent = dict(types)
    out = {}
    for t in set(parent) | {OBJECT}:
        chain = {t, OBJECT}
        p = parent.get(t)
        while p and p not in chain:
            chain.add(p)
            p = parent.get(p)
        out[t] = chain
    return out


def _check_atom(
    atom: GroundAtom,
    domain: DomainModel,
    typing: Mapping[str, str],
    ancestors: Mapping[str, set[str]],
) -> None:
    try:
        params = domain.predicate(atom.relation)
    except KeyError:
        raise TypeMismatchError(
            f"unknown predicate in {atom!s}", atom=str(atom)
        ) from None
    if len(params) != len(atom.args):
        raise TypeMismatchError(f"wrong arity in {atom!s}", atom=str(atom))
    for arg, (_, t) in zip(atom.args, params):
        if arg not in typing:
            raise TypeMismatchError(
                f"unknown object {arg!r} in {atom!s}", atom=str(atom)
            )
        if t not in ancestors.get(typing[arg], {typing[arg]}):
            raise TypeMismatchError(
                f"{arg!r} of type {typing[arg]!r} does not match {t!r} in {atom!s}",
                atom=str(atom),
            )


def _bindings(
    schema: ActionSchema, candidates: Mapping[str, list[str]]
) -> Iterator[dict[str, str]]:
    names = schema.parameter_names
    pools = [candidates.get(t, []) for _, t in schema.parameters]
    for combo in itertools.product(*pools):
        binding = dict(zip(names, combo))
        if any(binding.get(x, x) == binding.get(y, y) for x, y in schema.inequalities):
            continue
        yield binding


def ground(domain: DomainModel, problem: ProblemModel) -> GroundedTask:
    """enumerate all type consistent bindings of every action"""
    ancestors = _ancestors(domain.types)
    known = set(domain.type_names) | {OBJECT}
    typing: dict[str, str] = {}
    for obj, t in [*domain.constants, *problem.objects]:
        if t not in known:
            raise TypeMismatchError(
                f"object {obj!r} has undeclared type {t!r}", object_id=obj
            )
        typing[obj] = t
    for atom in problem.init | problem.goal:
        _check_atom(atom, domain, typing, ancestors)
    candidates: dict[str, list[str]] = {}
    for t in known:
        candidates[t] = sorted(
            o for o, ot in typing.items() if t in ancestors.get(ot, {ot})
        )

    consts = [c for c, _ in domain.constants]
    grounded = []
    for schema in domain.actions:
        free = schema.free_variables(consts)
        if free:
            raise TypeMismatchError(
                f"action {schema.name} uses undeclared variables {sorted(free)!r}",
                action=schema.name,
            )
        for binding in _bindings(schema, candidates):
            pre, add, delete = schema.ground(binding)
            args = tuple(binding[p] for p in schema.parameter_names)
            grounded.append((schema.name, args, pre, add, delete))

    universe = set(problem.init) | set(problem.goal)
    for _, _, pre, add, delete in grounded:
        universe |= pre | add | delete
    atoms = tuple(sorted(universe))
    index = {a: i for i, a in enumerate(atoms)}

    def bits(xs: Iterable[GroundAtom]) -> int:
        out = 0
        for a in xs:
            out |= 1 << index[a]
        return out

    actions = tuple(
        GroundedAction(i, name, args, bits(pre), bits(add), bits(delete))
        for i, (name, args, pre, add, delete) in enumerate(grounded)
    )
    _log.info(f"grounded {len(actions)} actions over {len(atoms)} atoms")
    return GroundedTask(atoms, actions, bits(problem.init), bits(problem.goal))
