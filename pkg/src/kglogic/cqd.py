"""Optimization-based baseline: continuous truth values of conjunctive
formulas under a t-norm with the fuzzy negator (negated atoms contribute
1 - psi), answered by gradient ascent over the variable embeddings. Also
hosts the one-dimensional objective profile showing how the negator turns
a product of concave pieces non-convex."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .backends import DTYPE, EmbeddingTable, truth_value
from .errors import OptimizationError
from .network import Ranking, _join_rankings, entity_cosines
from .queries import (
    Constant,
    ConjunctiveQuery,
    EFO1Query,
)

TNORMS = ("product", "godel")


def _as_value(v):
    return v if isinstance(v, torch.Tensor) else torch.as_tensor(v, dtype=DTYPE)


def tnorm_apply(kind: str, a, b):
    if kind == "product":
        return _as_value(a) * _as_value(b)
    if kind == "godel":
        return torch.minimum(_as_value(a), _as_value(b))
    raise ValueError(f"unknown t-norm {kind!r}; expected one of {TNORMS}")


def conjunctive_truth_value(cq: ConjunctiveQuery, assignment: dict,
                            table: EmbeddingTable,
                            tnorm: str = "product") -> torch.Tensor:
    """Fold of per-atom truth values under the t-norm; negated atoms enter
    as 1 - psi. Assignment maps every variable term to an embedding."""

    def resolve(term):
        if isinstance(term, Constant):
            return table.entity_rows(term.entity)
        if term not in assignment:
            raise ValueError(f"assignment missing variable {term}")
        return torch.as_tensor(assignment[term], dtype=DTYPE)

    value = None
    for atom in cq.atoms:
        if atom.is_equality:
            raise ValueError("equality atoms are outside this baseline's scope")
        psi = truth_value(table.backend, resolve(atom.head),
                          table.relation_rows(atom.relation),
                          resolve(atom.tail))
        if atom.negated:
            psi = 1.0 - psi
        value = psi if value is None else tnorm_apply(tnorm, value, psi)
    return value


def _ascend(cq: ConjunctiveQuery, table: EmbeddingTable, tnorm: str,
            steps: int, lr: float, restarts: int, init_scale: float,
            gen: torch.Generator) -> torch.Tensor:
    """Best free-variable embedding over seeded restarts, shape [dim]."""
    variables = list(cq.variables())
    dim = table.backend.dim
    mean_norm = float(table.entity.norm(dim=-1).mean())
    std = init_scale * mean_norm / dim ** 0.5
    x = torch.randn(restarts, len(variables), dim, dtype=DTYPE,
                    generator=gen) * std
    x.requires_grad_(True)

    def batched_tv():
        assignment = {v: x[:, j] for j, v in enumerate(variables)}
        return conjunctive_truth_value(cq, assignment, table, tnorm)

    for _ in range(steps):
        tv = batched_tv()
        grad, = torch.autograd.grad(tv.sum(), x)
        with torch.no_grad():
            x += lr * grad
    with torch.no_grad():
        final = batched_tv()
    finite = torch.isfinite(final)
    if not finite.any():
        raise OptimizationError("every restart diverged")
    final = torch.where(finite, final, torch.tensor(-torch.inf, dtype=DTYPE))
    return x.detach()[int(final.argmax()), 0]


def cqd_optimize(query: EFO1Query, table: EmbeddingTable,
                 tnorm: str = "product", steps: int = 200, lr: float = 0.1,
                 restarts: int = 4, init_scale: float = 0.1,
                 seed: int = 0) -> Ranking:
    """Ascend the truth value per conjunct, rank entities by cosine to the
    best free embedding, and join disjuncts by maximum score."""
    gen = torch.Generator().manual_seed(seed)
    rows = []
    for cq in query.disjuncts:
        best = _ascend(cq, table, tnorm, steps, lr, restarts, init_scale, gen)
        rows.append(entity_cosines(best, table))
    return _join_rankings(torch.stack(rows), "max_score")


class CqdAnswerer(BaseEstimator):
    """Per-query optimizer with the same rank() surface as the trained
    network; fit() just binds the pretrained table (nothing is learned)."""

    def __init__(self, tnorm="product", steps=200, lr=0.1, restarts=4,
                 init_scale=0.1, seed=0):
        self.tnorm = tnorm
        self.steps = steps
        self.lr = lr
        self.restarts = restarts
        self.init_scale = init_scale
        self.seed = seed

    def fit(self, instances=None, table: EmbeddingTable | None = None):
        if table is None:
            raise ValueError("a pretrained embedding table is required")
        self.table_ = table
        return self

    def rank(self, query: EFO1Query) -> Ranking:
        if not hasattr(self, "table_"):
            raise NotFittedError("call fit() first")
        return cqd_optimize(query, self.table_, tnorm=self.tnorm,
                            steps=self.steps, lr=self.lr,
                            restarts=self.restarts,
                            init_scale=self.init_scale, seed=self.seed)

    def rank_all(self, queries: Sequence[EFO1Query]) -> list[Ranking]:
        return [self.rank(q) for q in queries]


# ---------------------------------------------------------------------------
# Non-convexity profile
# ---------------------------------------------------------------------------

def landscape_objective(x):
    """(1 - x^2) * (x - 0.3)^2: the truth value of a conjunction with one
    negated literal whose two pieces are each concave on their own."""
    x = np.asarray(x, dtype=np.float64)
    return (1.0 - x ** 2) * (x - 0.3) ** 2


def landscape_profile(grid_points: int) -> list[tuple[float, float]]:
    """The objective sampled on a uniform grid over [0, 1]."""
    if grid_points < 3:
        raise ValueError("need at least 3 grid points")
    xs = np.linspace(0.0, 1.0, grid_points)
    return list(zip(xs.tolist(), landscape_objective(xs).tolist()))


def write_landscape_csv(path, grid_points: int) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "objective"])
        for x, j in landscape_profile(grid_points):
            writer.writerow([repr(x), repr(j)])
    return path


def grid_local_maxima(profile: Sequence[tuple[float, float]]) -> list[int]:
    """Indices of strict local maxima, endpoints compared one-sided."""
    js = [j for _, j in profile]
    out = []
    for i, j in enumerate(js):
        left = js[i - 1] if i > 0 else -np.inf
        right = js[i + 1] if i + 1 < len(js) else -np.inf
        if j > left and j > right:
            out.append(i)
    return out
