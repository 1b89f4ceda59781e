"""Exact symbolic query answering by backtracking search over variable
assignments, with join-ordering pruning. Negated atoms are checked as set
non-membership, equality atoms as id (in)equality."""

from __future__ import annotations

from .errors import CapacityError
from .kg import KnowledgeGraph
from .queries import (
    FREE,
    Atom,
    ConjunctiveQuery,
    Constant,
    EFO1Query,
    Existential,
)

ENUMERATION_GUARD = 10 ** 7


def oracle_answers(query: EFO1Query, kg: KnowledgeGraph) -> frozenset[int]:
    """Answer set of the full query: the union over its conjuncts."""
    answers: set[int] = set()
    for cq in query.disjuncts:
        answers |= conjunct_answers(cq, kg)
    return frozenset(answers)


def conjunct_answers(cq: ConjunctiveQuery, kg: KnowledgeGraph) -> set[int]:
    variables = [t for t in cq.variables() if isinstance(t, Existential)]
    if kg.entity_count ** len(variables) > ENUMERATION_GUARD:
        raise CapacityError(
            f"enumeration over {len(variables)} variables on "
            f"{kg.entity_count} entities exceeds the desk-scale guard")
    for atom in cq.atoms:
        if not atom.is_equality:
            if not 0 <= atom.relation < kg.relation_count:
                raise IndexError(f"relation id {atom.relation} out of range")
        for term in atom.terms():
            if isinstance(term, Constant) and not 0 <= term.entity < kg.entity_count:
                raise IndexError(f"entity id {term.entity} out of range")

    answers: set[int] = set()
    assignment: dict = {}

    def value(term):
        if isinstance(term, Constant):
            return term.entity
        return assignment.get(term)

    def holds(atom: Atom, hv: int, tv: int) -> bool:
        if atom.is_equality:
            return (hv == tv) != atom.negated
        return ((hv, atom.relation, tv) in kg.triples) != atom.negated

    def pick(remaining: list[Atom]):
        """Most-constrained atom first: bound ends, then constant ends."""
        best, best_key = None, None
        for atom in remaining:
            ends = atom.terms()
            n_bound = sum(1 for t in ends if value(t) is not None)
            n_const = sum(1 for t in ends if isinstance(t, Constant))
            generator = not atom.negated
            key = (n_bound, generator, n_const)
            if best_key is None or key > best_key:
                best, best_key = atom, key
        return best

    def candidates(atom: Atom):
        """Unbound end of a one-bound positive atom, with its candidates."""
        hv, tv = value(atom.head), value(atom.tail)
        if atom.is_equality:
            if hv is not None:
                return atom.tail, (hv,)
            return atom.head, (tv,)
        if hv is not None:
            return atom.tail, kg.neighbors(hv, atom.relation, "h2t")
        return atom.head, kg.neighbors(tv, atom.relation, "t2h")

    def search(remaining: list[Atom]):
        free_val = assignment.get(FREE)
        if free_val is not None and free_val in answers:
            return
        if not remaining:
            answers.add(assignment[FREE])
            return
        atom = pick(remaining)
        rest = [a for a in remaining if a is not atom]
        hv, tv = value(atom.head), value(atom.tail)
        if hv is not None and tv is not None:
            if holds(atom, hv, tv):
                search(rest)
            return
        if not atom.negated and (hv is not None or tv is not None):
            term, cands = candidates(atom)
            for cand in cands:
                assignment[term] = cand
                search(rest)
                del assignment[term]
            return
        if not atom.negated and hv is None and tv is None:
            if atom.is_equality:
                for v in range(kg.entity_count):
                    assignment[atom.head] = v
                    assignment[atom.tail] = v
                    search(rest)
                    del assignment[atom.tail], assignment[atom.head]
                return
            # Unanchored positive atom: enumerate its relation's triples.
            for h, r, t in kg.triple_list:
                if r != atom.relation:
                    continue
                if atom.head == atom.tail:
                    if h != t:
                        continue
                    assignment[atom.head] = h
                    search(rest)
                    del assignment[atom.head]
                else:
                    assignment[atom.head] = h
                    assignment[atom.tail] = t
                    search(rest)
                    del assignment[atom.tail], assignment[atom.head]
            return
        # Only negated (or doubly-unbound equality) atoms remain: fall back
        # to domain enumeration of one of their unbound variables.
        term = atom.head if hv is None else atom.tail
        for cand in range(kg.entity_count):
            assignment[term] = cand
            search(remaining)
            del assignment[term]

    search(list(cq.atoms))
    return answers
