"""Existentially quantified single-free-variable queries in disjunctive
normal form, their per-conjunct graphs of terms and relation edges, and the
JSON-lines serialization used by the sampling and evaluation tooling."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple, Union

from .errors import ParseError, StructureError

#: Reserved relation id for the equality predicate; deliberately outside
#: every knowledge graph's relation id space.
EQUALITY = -1


@dataclass(frozen=True)
class Constant:
    entity: int


@dataclass(frozen=True)
class Existential:
    index: int


@dataclass(frozen=True)
class Free:
    pass


FREE = Free()

Term = Union[Constant, Existential, Free]


@dataclass(frozen=True)
class Atom:
    """One (possibly negated) relation or equality literal between two terms."""

    relation: int
    head: Term
    tail: Term
    negated: bool = False

    def __post_init__(self):
        if self.relation != EQUALITY and self.relation < 0:
            raise StructureError(f"negative relation id {self.relation}")
        if self.relation == EQUALITY and self.head == self.tail and not self.negated:
            raise StructureError("positive equality of a term with itself is vacuous")

    @property
    def is_equality(self) -> bool:
        return self.relation == EQUALITY

    def terms(self) -> tuple[Term, Term]:
        return (self.head, self.tail)


@dataclass(frozen=True)
class ConjunctiveQuery:
    atoms: tuple[Atom, ...]

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        if not self.atoms:
            raise StructureError("conjunctive query needs at least one atom")
        terms = {t for a in self.atoms for t in a.terms()}
        if FREE not in terms:
            raise StructureError("free variable must appear in some atom")
        self._check_connected(terms)

    def _check_connected(self, terms):
        remaining = set(terms)
        frontier = [next(iter(remaining))]
        remaining.discard(frontier[0])
        adj = {}
        for a in self.atoms:
            adj.setdefault(a.head, set()).add(a.tail)
            adj.setdefault(a.tail, set()).add(a.head)
        while frontier:
            node = frontier.pop()
            for nb in adj.get(node, ()):
                if nb in remaining:
                    remaining.discard(nb)
                    frontier.append(nb)
        if remaining:
            raise StructureError("term graph of the conjunct is disconnected")

    def variables(self) -> tuple[Term, ...]:
        """Free variable first, then existentials by index."""
        exist = sorted({t for a in self.atoms for t in a.terms()
                        if isinstance(t, Existential)}, key=lambda t: t.index)
        return (FREE, *exist)

    def constants(self) -> tuple[Constant, ...]:
        seen = []
        for a in self.atoms:
            for t in a.terms():
                if isinstance(t, Constant) and t not in seen:
                    seen.append(t)
        return tuple(seen)


@dataclass(frozen=True)
class EFO1Query:
    """Disjunction of conjunctive queries sharing one free variable."""

    disjuncts: tuple[ConjunctiveQuery, ...]

    def __post_init__(self):
        object.__setattr__(self, "disjuncts", tuple(self.disjuncts))
        if not self.disjuncts:
            raise StructureError("query needs at least one disjunct")
        indices = {t.index for cq in self.disjuncts for a in cq.atoms
                   for t in a.terms() if isinstance(t, Existential)}
        if indices and indices != set(range(max(indices) + 1)):
            raise StructureError(f"existential indices must be dense, got {sorted(indices)}")

    @property
    def existential_count(self) -> int:
        indices = {t.index for cq in self.disjuncts for a in cq.atoms
                   for t in a.terms() if isinstance(t, Existential)}
        return max(indices) + 1 if indices else 0


class Edge(NamedTuple):
    src: int
    dst: int
    relation: int
    negated: bool


@dataclass(frozen=True)
class QueryGraph:
    """Term nodes connected by one directed edge per atom."""

    nodes: tuple[Term, ...]
    edges: tuple[Edge, ...]

    @property
    def free_index(self) -> int:
        return self.nodes.index(FREE)


def build_query_graph(cq: ConjunctiveQuery) -> QueryGraph:
    """Nodes deduplicated by term identity in first-appearance order; each
    atom r(t1, t2) becomes one t1 -> t2 edge carrying (relation, negated)."""
    nodes: list[Term] = []
    index: dict[Term, int] = {}
    for atom in cq.atoms:
        for term in atom.terms():
            if term not in index:
                index[term] = len(nodes)
                nodes.append(term)
    edges = tuple(Edge(index[a.head], index[a.tail], a.relation, a.negated)
                  for a in cq.atoms)
    return QueryGraph(nodes=tuple(nodes), edges=edges)


def query_depth(graph: QueryGraph) -> int:
    """Largest undirected distance from a constant node to the free node."""
    n = len(graph.nodes)
    adj = [[] for _ in range(n)]
    for e in graph.edges:
        adj[e.src].append(e.dst)
        adj[e.dst].append(e.src)
    dist = [-1] * n
    start = graph.free_index
    dist[start] = 0
    frontier = [start]
    while frontier:
        nxt = []
        for u in frontier:
            for v in adj[u]:
                if dist[v] < 0:
                    dist[v] = dist[u] + 1
                    nxt.append(v)
        frontier = nxt
    const_dists = [dist[i] for i, t in enumerate(graph.nodes)
                   if isinstance(t, Constant) and dist[i] >= 0]
    if not const_dists:
        raise StructureError("depth is undefined without a reachable constant node")
    return max(const_dists)


# ---------------------------------------------------------------------------
# JSON-lines serialization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QueryInstance:
    """A query plus its answer split: easy answers hold on the observed
    graph, hard answers only on the full graph. An empty hard set flags an
    instance as unusable for evaluation (it stays valid for training)."""

    query: EFO1Query
    type_name: str | None = None
    easy: frozenset[int] = field(default_factory=frozenset)
    hard: frozenset[int] = field(default_factory=frozenset)

    @property
    def answers(self) -> frozenset[int]:
        return self.easy | self.hard


def _term_to_json(term: Term):
    if isinstance(term, Constant):
        return {"c": term.entity}
    if isinstance(term, Existential):
        return {"x": term.index}
    return "y"


def _term_from_json(obj, path: str) -> Term:
    if obj == "y":
        return FREE
    if isinstance(obj, dict) and len(obj) == 1:
        if "c" in obj and isinstance(obj["c"], int):
            return Constant(obj["c"])
        if "x" in obj and isinstance(obj["x"], int):
            return Existential(obj["x"])
    raise ParseError(f"{path}: expected term {{'c': id}}, {{'x': k}} or 'y', got {obj!r}")


def serialize_query(instance: QueryInstance | EFO1Query) -> str:
    if isinstance(instance, EFO1Query):
        instance = QueryInstance(query=instance)
    payload = {
        "type": instance.type_name,
        "disjuncts": [
            [{"rel": "eq" if a.is_equality else a.relation,
              "head": _term_to_json(a.head),
              "tail": _term_to_json(a.tail),
              "neg": a.negated} for a in cq.atoms]
            for cq in instance.query.disjuncts
        ],
        "easy": sorted(instance.easy),
        "hard": sorted(instance.hard),
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def parse_query(line: str) -> QueryInstance:
    try:
        payload = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON query line: {exc}") from None
    if not isinstance(payload, dict) or "disjuncts" not in payload:
        raise ParseError("query line must be an object with a 'disjuncts' field")
    disjuncts = []
    raw_disjuncts = payload["disjuncts"]
    if not isinstance(raw_disjuncts, list) or not raw_disjuncts:
        raise ParseError("disjuncts: expected a nonempty list")
    for i, raw_cq in enumerate(raw_disjuncts):
        if not isinstance(raw_cq, list):
            raise ParseError(f"disjuncts[{i}]: expected a list of atoms")
        atoms = []
        for j, raw in enumerate(raw_cq):
            path = f"disjuncts[{i}][{j}]"
            if not isinstance(raw, dict):
                raise ParseError(f"{path}: expected an atom object")
            unknown = set(raw) - {"rel", "head", "tail", "neg"}
            if unknown:
                raise ParseError(f"{path}: unknown fields {sorted(unknown)}")
            rel = raw.get("rel")
            if rel == "eq":
                rel = EQUALITY
            elif not isinstance(rel, int) or rel < 0:
                raise ParseError(f"{path}.rel: expected a relation id or 'eq'")
            neg = raw.get("neg", False)
            if not isinstance(neg, bool):
                raise ParseError(f"{path}.neg: expected a boolean")
            try:
                atom = Atom(relation=rel,
                            head=_term_from_json(raw.get("head"), f"{path}.head"),
                            tail=_term_from_json(raw.get("tail"), f"{path}.tail"),
                            negated=neg)
            except StructureError as exc:
                raise ParseError(f"{path}: {exc}") from None
            atoms.append(atom)
        try:
            disjuncts.append(ConjunctiveQuery(tuple(atoms)))
        except StructureError as exc:
            raise ParseError(f"disjuncts[{i}]: {exc}") from None
    try:
        query = EFO1Query(tuple(disjuncts))
    except StructureError as exc:
        raise ParseError(str(exc)) from None
    for key, label in (("easy", "easy"), ("hard", "hard")):
        raw = payload.get(key, [])
        if not isinstance(raw, list) or not all(isinstance(v, int) for v in raw):
            raise ParseError(f"{label}: expected a list of entity ids")
    type_name = payload.get("type")
    if type_name is not None and not isinstance(type_name, str):
        raise ParseError("type: expected a string or null")
    return QueryInstance(query=query, type_name=type_name,
                         easy=frozenset(payload.get("easy", [])),
                         hard=frozenset(payload.get("hard", [])))


# ---------------------------------------------------------------------------
# The 14-type catalog
# ---------------------------------------------------------------------------

EPFO_TYPES = ("1p", "2p", "3p", "2i", "3i", "pi", "ip", "2u", "up")
NEGATION_TYPES = ("2in", "3in", "inp", "pin", "pni")
CATALOG = EPFO_TYPES + NEGATION_TYPES

#: (constants needed, relations needed) per type.
CATALOG_ARITY = {
    "1p": (1, 1), "2p": (1, 2), "3p": (1, 3), "2i": (2, 2), "3i": (3, 3),
    "pi": (2, 3), "ip": (2, 3), "2u": (2, 2), "up": (2, 3),
    "2in": (2, 2), "3in": (3, 3), "inp": (2, 3), "pin": (2, 3), "pni": (2, 3),
}


def build_pattern(type_name: str, constants, relations) -> EFO1Query:
    """Instantiate one catalog pattern with concrete entity/relation ids.

    Constants sit at the leaves and the free variable at the root; the inp
    pattern keeps its conventional mixed edge directions (x0 -> c0,
    c1 -> x0 negated, y -> x0).
    """
    if type_name not in CATALOG:
        raise StructureError(f"unknown query type {type_name!r}")
    n_const, n_rel = CATALOG_ARITY[type_name]
    if len(constants) != n_const or len(relations) != n_rel:
        raise StructureError(
            f"{type_name} needs {n_const} constants and {n_rel} relations")
    c = [Constant(e) for e in constants]
    r = list(relations)
    x0, x1 = Existential(0), Existential(1)
    y = FREE

    def cq(*atoms):
        return ConjunctiveQuery(tuple(atoms))

    if type_name == "1p":
        return EFO1Query((cq(Atom(r[0], c[0], y)),))
    if type_name == "2p":
        return EFO1Query((cq(Atom(r[0], c[0], x0), Atom(r[1], x0, y)),))
    if type_name == "3p":
        return EFO1Query((cq(Atom(r[0], c[0], x0), Atom(r[1], x0, x1),
                             Atom(r[2], x1, y)),))
    if type_name == "2i":
        return EFO1Query((cq(Atom(r[0], c[0], y), Atom(r[1], c[1], y)),))
    if type_name == "3i":
        return EFO1Query((cq(Atom(r[0], c[0], y), Atom(r[1], c[1], y),
                             Atom(r[2], c[2], y)),))
    if type_name == "pi":
        return EFO1Query((cq(Atom(r[0], c[0], x0), Atom(r[1], x0, y),
                             Atom(r[2], c[1], y)),))
    if type_name == "ip":
        return EFO1Query((cq(Atom(r[0], c[0], x0), Atom(r[1], c[1], x0),
                             Atom(r[2], x0, y)),))
    if type_name == "2u":
        return EFO1Query((cq(Atom(r[0], c[0], y)), cq(Atom(r[1], c[1], y))))
    if type_name == "up":
        return EFO1Query((cq(Atom(r[0], c[0], x0), Atom(r[2], x0, y)),
                          cq(Atom(r[1], c[1], x0), Atom(r[2], x0, y))))
    if type_name == "2in":
        return EFO1Query((cq(Atom(r[0], c[0], y), Atom(r[1], c[1], y, negated=True)),))
    if type_name == "3in":
        return EFO1Query((cq(Atom(r[0], c[0], y), Atom(r[1], c[1], y),
                             Atom(r[2], c[2], y, negated=True)),))
    if type_name == "inp":
        return EFO1Query((cq(Atom(r[0], x0, c[0]),
                             Atom(r[1], c[1], x0, negated=True),
                             Atom(r[2], y, x0)),))
    if type_name == "pin":
        return EFO1Query((cq(Atom(r[0], c[0], x0), Atom(r[1], x0, y),
                             Atom(r[2], c[1], y, negated=True)),))
    # pni
    return EFO1Query((cq(Atom(r[0], c[0], x0), Atom(r[1], x0, y, negated=True),
                         Atom(r[2], c[1], y)),))
