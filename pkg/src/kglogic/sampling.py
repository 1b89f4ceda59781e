"""Seeded grounding of the query-type catalog against a dataset split.

Instances are grounded by random walks backward from a randomly chosen
answer entity on the FULL graph, so every instance is satisfiable there.
Negated literals are grounded by sampling (constant, relation) pairs whose
triple is absent for the walk's witness bindings. Easy answers come from
the observed graph, hard answers only from the full graph.
"""

from __future__ import annotations

import random

from .errors import SamplingError
from .kg import DatasetSplit, KnowledgeGraph
from .oracle import oracle_answers
from .queries import CATALOG, QueryInstance, build_pattern

_ATTEMPTS = 500
_NEG_TRIES = 100


class _Grounder:
    def __init__(self, kg: KnowledgeGraph, rng: random.Random):
        if not kg.triple_list:
            raise SamplingError("cannot ground queries against an empty graph")
        self.kg = kg
        self.rng = rng
        self.in_edges: dict[int, list[tuple[int, int]]] = {}
        self.out_edges: dict[int, list[tuple[int, int]]] = {}
        by_rel: dict[int, list] = {}
        for h, r, t in kg.triple_list:
            self.in_edges.setdefault(t, []).append((h, r))
            self.out_edges.setdefault(h, []).append((r, t))
            by_rel.setdefault(r, []).append((h, t))
        self.by_rel = by_rel

    def triple(self):
        return self.rng.choice(self.kg.triple_list)

    def in_edge(self, entity, exclude=()):
        options = [p for p in self.in_edges.get(entity, ()) if p not in exclude]
        if not options:
            return None
        return self.rng.choice(options)

    def out_edge(self, entity):
        options = self.out_edges.get(entity, ())
        if not options:
            return None
        return self.rng.choice(options)

    def absent_in_edge(self, entity):
        """A (constant, relation) pair with no (constant, relation, entity) triple."""
        for _ in range(_NEG_TRIES):
            c = self.rng.randrange(self.kg.entity_count)
            r = self.rng.randrange(self.kg.relation_count)
            if (c, r, entity) not in self.kg.triples:
                return c, r
        return None

    def absent_relation(self, head, tail):
        for _ in range(_NEG_TRIES):
            r = self.rng.randrange(self.kg.relation_count)
            if (head, r, tail) not in self.kg.triples:
                return r
        return None


def _ground_once(type_name: str, g: _Grounder):
    """One grounding attempt; returns (constants, relations) or None."""
    kg, rng = g.kg, g.rng
    if type_name == "1p":
        h, r, _ = g.triple()
        return (h,), (r,)
    if type_name == "2p":
        x0, r1, _y = g.triple()
        back = g.in_edge(x0)
        if back is None:
            return None
        c0, r0 = back
        return (c0,), (r0, r1)
    if type_name == "3p":
        x1, r2, _y = g.triple()
        mid = g.in_edge(x1)
        if mid is None:
            return None
        x0, r1 = mid
        back = g.in_edge(x0)
        if back is None:
            return None
        c0, r0 = back
        return (c0,), (r0, r1, r2)
    if type_name in ("2i", "3i", "2in", "3in"):
        n_pos = {"2i": 2, "3i": 3, "2in": 1, "3in": 2}[type_name]
        c0, r0, y = g.triple()
        picked = [(c0, r0)]
        for _ in range(n_pos - 1):
            edge = g.in_edge(y, exclude=picked)
            if edge is None:
                return None
            picked.append(edge)
        if type_name in ("2in", "3in"):
            neg = g.absent_in_edge(y)
            if neg is None:
                return None
            picked.append(neg)
        consts = tuple(c for c, _ in picked)
        rels = tuple(r for _, r in picked)
        return consts, rels
    if type_name == "pi":
        x0, r1, y = g.triple()
        back = g.in_edge(x0)
        if back is None:
            return None
        c0, r0 = back
        side = g.in_edge(y)
        if side is None:
            return None
        c1, r2 = side
        return (c0, c1), (r0, r1, r2)
    if type_name == "ip":
        x0, r2, _y = g.triple()
        first = g.in_edge(x0)
        if first is None:
            return None
        second = g.in_edge(x0, exclude=[first])
        if second is None:
            return None
        (c0, r0), (c1, r1) = first, second
        return (c0, c1), (r0, r1, r2)
    if type_name == "2u":
        h0, r0, _ = g.triple()
        for _ in range(_NEG_TRIES):
            h1, r1, _ = g.triple()
            if (h1, r1) != (h0, r0):
                return (h0, h1), (r0, r1)
        return None
    if type_name == "up":
        x0, r2, _y = g.triple()
        back = g.in_edge(x0)
        if back is None:
            return None
        c0, r0 = back
        same_rel = g.by_rel.get(r2, ())
        for _ in range(_NEG_TRIES):
            x0b, _yb = rng.choice(same_rel)
            alt = g.in_edge(x0b)
            if alt is None:
                continue
            c1, r1 = alt
            if (c1, r1) != (c0, r0):
                return (c0, c1), (r0, r1, r2)
        return None
    if type_name == "inp":
        # Edges: x0 -> c0, c1 -> x0 (negated), y -> x0.
        y, r2, x0 = g.triple()
        fwd = g.out_edge(x0)
        if fwd is None:
            return None
        r0, c0 = fwd
        neg = g.absent_in_edge(x0)
        if neg is None:
            return None
        c1, r1 = neg
        return (c0, c1), (r0, r1, r2)
    if type_name == "pin":
        x0, r1, y = g.triple()
        back = g.in_edge(x0)
        if back is None:
            return None
        c0, r0 = back
        neg = g.absent_in_edge(y)
        if neg is None:
            return None
        c1, r2 = neg
        return (c0, c1), (r0, r1, r2)
    if type_name == "pni":
        c1, r2, y = g.triple()
        c0, r0, x0 = g.triple()
        r1 = g.absent_relation(x0, y)
        if r1 is None:
            return None
        return (c0, c1), (r0, r1, r2)
    raise SamplingError(f"unknown query type {type_name!r}")


def sample_instances(split: DatasetSplit, type_name: str, count: int,
                     seed: int) -> list[QueryInstance]:
    """Ground `count` instances of one catalog type; deterministic per seed.

    Every instance has a nonempty answer set on the full graph. Instances
    whose hard set comes out empty are kept but flagged by that emptiness;
    evaluation skips them while training may still use them.
    """
    if type_name not in CATALOG:
        raise SamplingError(f"unknown query type {type_name!r}")
    rng = random.Random(seed * 1_000_003 + CATALOG.index(type_name))
    grounder = _Grounder(split.full, rng)
    instances = []
    for _ in range(count):
        for _attempt in range(_ATTEMPTS):
            grounded = _ground_once(type_name, grounder)
            if grounded is None:
                continue
            constants, relations = grounded
            query = build_pattern(type_name, constants, relations)
            full_answers = oracle_answers(query, split.full)
            if not full_answers:
                continue
            easy = oracle_answers(query, split.observed)
            instances.append(QueryInstance(
                query=query, type_name=type_name,
                easy=frozenset(easy), hard=frozenset(full_answers - easy)))
            break
        else:
            raise SamplingError(
                f"could not ground a {type_name} instance in {_ATTEMPTS} attempts")
    return instances


def sample_benchmark(split: DatasetSplit, count_per_type: int, seed: int,
                     types=CATALOG) -> dict[str, list[QueryInstance]]:
    return {t: sample_instances(split, t, count_per_type, seed) for t in types}
