import numpy as np
import pytest

from kglogic.errors import CapacityError
from kglogic.kg import KnowledgeGraph, Triple
from kglogic.oracle import oracle_answers
from kglogic.queries import (
    EPFO_TYPES,
    EQUALITY,
    FREE,
    Atom,
    ConjunctiveQuery,
    Constant,
    EFO1Query,
    Existential,
    build_pattern,
)
from kglogic.sampling import sample_instances


def grid_answers(query: EFO1Query, kg: KnowledgeGraph) -> frozenset:
    """Independent dense-tensor oracle: build the boolean truth grid over
    all variable assignments per conjunct, then reduce."""
    n = kg.entity_count
    rel = {r: np.zeros((n, n), dtype=bool) for r in range(kg.relation_count)}
    for h, r, t in kg.triples:
        rel[r][h, t] = True
    eye = np.eye(n, dtype=bool)
    answers = np.zeros(n, dtype=bool)
    for cq in query.disjuncts:
        variables = list(cq.variables())
        axis = {v: i for i, v in enumerate(variables)}
        truth = np.ones((n,) * len(variables), dtype=bool)
        for atom in cq.atoms:
            matrix = eye if atom.is_equality else rel[atom.relation]
            head, tail = atom.head, atom.tail
            if isinstance(head, Constant) and isinstance(tail, Constant):
                cell = np.asarray(matrix[head.entity, tail.entity])
                piece = cell
                shape = [1] * len(variables)
            elif isinstance(head, Constant):
                piece = matrix[head.entity, :]
                shape = [1] * len(variables)
                shape[axis[tail]] = n
            elif isinstance(tail, Constant):
                piece = matrix[:, tail.entity]
                shape = [1] * len(variables)
                shape[axis[head]] = n
            elif head == tail:
                piece = np.diagonal(matrix)
                shape = [1] * len(variables)
                shape[axis[head]] = n
            else:
                # Lay the (head, tail) matrix onto the two variable axes.
                view = [np.newaxis] * len(variables)
                view[axis[head]] = slice(None)
                view[axis[tail]] = slice(None)
                oriented = matrix if axis[head] < axis[tail] else matrix.T
                piece = oriented[tuple(view)]
                shape = None
            if shape is not None:
                piece = np.asarray(piece).reshape(shape)
            if atom.negated:
                piece = ~piece
            truth = truth & piece
        reduce_axes = tuple(i for i, v in enumerate(variables) if v != FREE)
        collected = truth.any(axis=reduce_axes) if reduce_axes else truth
        answers |= collected
    return frozenset(int(i) for i in np.nonzero(answers)[0])


@pytest.fixture(scope="module")
def small_kg():
    triples = [(0, 0, 1), (0, 0, 2), (1, 0, 3), (2, 1, 3), (3, 1, 4),
               (4, 0, 0), (1, 1, 2), (2, 0, 4)]
    return KnowledgeGraph(5, 2, [Triple(*t) for t in triples])


class TestOracleBasics:
    def test_one_hop_is_neighbor_set(self, small_kg):
        q = build_pattern("1p", (0,), (0,))
        assert oracle_answers(q, small_kg) == {1, 2}

    def test_union_of_disjuncts(self, small_kg):
        q = build_pattern("2u", (0, 3), (0, 1))
        a = oracle_answers(build_pattern("1p", (0,), (0,)), small_kg)
        b = oracle_answers(build_pattern("1p", (3,), (1,)), small_kg)
        assert oracle_answers(q, small_kg) == a | b

    def test_2in_matches_double_loop(self, toy_split):
        kg = toy_split.full
        q = build_pattern("2in", (4, 9), (0, 1))
        expected = {y for y in range(kg.entity_count)
                    if (4, 0, y) in kg.triples and (9, 1, y) not in kg.triples}
        assert oracle_answers(q, kg) == expected

    def test_negated_equality(self, small_kg):
        # Tails of entity 0 under relation 0 that are not entity 2.
        cq = ConjunctiveQuery((Atom(0, Constant(0), FREE),
                               Atom(EQUALITY, FREE, Constant(2), negated=True)))
        assert oracle_answers(EFO1Query((cq,)), small_kg) == {1}

    def test_collaborator_style_query(self, small_kg):
        # y with an outgoing rel-0 edge to something also reached from a
        # DIFFERENT entity by rel 0.
        x0, x1 = Existential(0), Existential(1)
        cq = ConjunctiveQuery((
            Atom(0, FREE, x0),
            Atom(0, x1, x0),
            Atom(EQUALITY, FREE, x1, negated=True),
            Atom(1, Constant(2), x0, negated=True),
        ))
        q = EFO1Query((cq,))
        assert oracle_answers(q, small_kg) == grid_answers(q, small_kg)

    def test_out_of_range_ids(self, small_kg):
        with pytest.raises(IndexError):
            oracle_answers(build_pattern("1p", (50,), (0,)), small_kg)
        with pytest.raises(IndexError):
            oracle_answers(build_pattern("1p", (0,), (9,)), small_kg)


def test_capacity_guard():
    kg = KnowledgeGraph(300, 1, [Triple(0, 0, 1)])
    x = [Existential(i) for i in range(4)]
    atoms = (Atom(0, Constant(0), x[0]), Atom(0, x[0], x[1]),
             Atom(0, x[1], x[2]), Atom(0, x[2], x[3]), Atom(0, x[3], FREE))
    with pytest.raises(CapacityError):
        oracle_answers(EFO1Query((ConjunctiveQuery(atoms),)), kg)


class TestOracleAgainstGrid:
    def test_sampled_instances_match_grid(self, toy_split):
        for name in ("1p", "3p", "ip", "2u", "up", "2in", "inp", "pni"):
            for inst in sample_instances(toy_split, name, 10, seed=23):
                assert oracle_answers(inst.query, toy_split.full) == \
                    grid_answers(inst.query, toy_split.full), name

    def test_dnf_union_law(self, toy_split):
        for name in ("2u", "up"):
            for inst in sample_instances(toy_split, name, 10, seed=29):
                per_disjunct = [
                    oracle_answers(EFO1Query((cq,)), toy_split.full)
                    for cq in inst.query.disjuncts]
                union = frozenset().union(*per_disjunct)
                assert oracle_answers(inst.query, toy_split.full) == union

    def test_epfo_monotone_under_observation(self, toy_split):
        for name in EPFO_TYPES:
            for inst in sample_instances(toy_split, name, 5, seed=31):
                observed = oracle_answers(inst.query, toy_split.observed)
                full = oracle_answers(inst.query, toy_split.full)
                assert observed <= full, name
