"""From-scratch embedding pretraining on the observed graph: log-likelihood
of positive triples against corrupted negatives, with a norm penalty, plus
a filtered link-prediction metric to confirm memorization at desk scale."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .backends import (
    DTYPE,
    Backend,
    EmbeddingTable,
    forward_estimate,
    score,
)
from .errors import TrainingError
from .kg import DatasetSplit, KnowledgeGraph


@dataclass(frozen=True)
class TrainHyper:
    lr: float = 0.05
    batch_size: int = 256
    negatives_per_positive: int = 16
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if min(self.lr, self.batch_size, self.negatives_per_positive) <= 0:
            raise ValueError("lr, batch_size and negatives_per_positive must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


def init_embeddings(backend: Backend, entity_count: int, relation_count: int,
                    seed: int) -> tuple[torch.Tensor, torch.Tensor]:
    gen = torch.Generator().manual_seed(seed)
    scale = 1.0 / math.sqrt(backend.dim)
    entity = torch.randn(entity_count, backend.dim, dtype=DTYPE,
                         generator=gen) * scale
    if backend.kind == "rotate":
        # Angles: unit modulus holds by construction.
        relation = (torch.rand(relation_count, backend.relation_size,
                               dtype=DTYPE, generator=gen) * 2 - 1) * math.pi
    else:
        relation = torch.randn(relation_count, backend.relation_size,
                               dtype=DTYPE, generator=gen) * scale
    return entity, relation


def _epoch_generator(seed: int, epoch: int) -> torch.Generator:
    return torch.Generator().manual_seed((seed * 9176351 + epoch) % (2 ** 63))


def train_embeddings(data: DatasetSplit | KnowledgeGraph, backend: Backend,
                     hyper: TrainHyper) -> EmbeddingTable:
    """Fit embeddings on the observed triples only; deterministic per seed.

    Maximizes log sigma(score) on positives and log sigma(-score) on
    uniformly corrupted negatives (head or tail, equal probability), minus
    reg_weight * ||.||_2^reg_power on the participating embedding rows.
    """
    kg = data.observed if isinstance(data, DatasetSplit) else data
    if not kg.triple_list:
        raise ValueError("cannot train embeddings on an empty graph")
    entity, relation = init_embeddings(backend, kg.entity_count,
                                       kg.relation_count, hyper.seed)
    entity.requires_grad_(True)
    relation.requires_grad_(True)
    opt = torch.optim.Adam([entity, relation], lr=hyper.lr)
    triples = torch.tensor(kg.triple_list, dtype=torch.long)
    n = triples.shape[0]
    k = hyper.negatives_per_positive
    lam, q = backend.reg_weight, backend.reg_power
    for epoch in range(hyper.epochs):
        gen = _epoch_generator(hyper.seed, epoch)
        order = torch.randperm(n, generator=gen)
        for start in range(0, n, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            h, r, t = triples[idx, 0], triples[idx, 1], triples[idx, 2]
            b = idx.shape[0]
            corrupt_head = torch.rand(b, k, generator=gen) < 0.5
            rand_ids = torch.randint(kg.entity_count, (b, k), generator=gen)
            neg_h = torch.where(corrupt_head, rand_ids, h.unsqueeze(1))
            neg_t = torch.where(corrupt_head, t.unsqueeze(1), rand_ids)
            pos = score(backend, entity[h], relation[r], entity[t])
            neg = score(backend, entity[neg_h],
                        relation[r].unsqueeze(1).expand(b, k, -1),
                        entity[neg_t])
            loss = (-torch.nn.functional.logsigmoid(pos).mean()
                    - torch.nn.functional.logsigmoid(-neg).mean())
            if lam > 0:
                reg = (entity[h].norm(dim=-1) ** q
                       + entity[t].norm(dim=-1) ** q)
                if backend.kind != "rotate":
                    reg = reg + relation[r].norm(dim=-1) ** q
                loss = loss + lam * reg.mean()
            if not torch.isfinite(loss):
                raise TrainingError(f"loss diverged at epoch {epoch}",
                                    epoch=epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
    return EmbeddingTable(backend, entity.detach(), relation.detach())


def link_prediction_mrr(table: EmbeddingTable, kg: KnowledgeGraph,
                        filter_kg: KnowledgeGraph | None = None) -> float:
    """Filtered mean reciprocal rank over both prediction directions."""
    if not kg.triple_list:
        raise ValueError("no triples to rank")
    filter_kg = filter_kg or kg
    backend = table.backend
    triples = torch.tensor(kg.triple_list, dtype=torch.long)
    h, r, t = triples[:, 0], triples[:, 1], triples[:, 2]
    with torch.no_grad():
        f_tail = forward_estimate(backend, table.entity[h], table.relation[r])
        f_head = forward_estimate(backend, table.entity[t], table.reciprocal[r])
        if backend.is_distance:
            tail_scores = backend.gamma - torch.cdist(f_tail, table.entity)
            head_scores = backend.gamma - torch.cdist(f_head, table.entity)
        else:
            tail_scores = f_tail @ table.entity.T
            head_scores = f_head @ table.entity.T
    rrs = []
    for i, (hi, ri, ti) in enumerate(kg.triple_list):
        for scores, target, others in (
                (tail_scores[i], ti, filter_kg.neighbors(hi, ri, "h2t")),
                (head_scores[i], hi, filter_kg.neighbors(ti, ri, "t2h"))):
            s = scores.clone()
            mask = [e for e in others if e != target]
            if mask:
                s[torch.tensor(mask)] = -torch.inf
            rank = int((s > s[target]).sum()) + 1
            rrs.append(1.0 / rank)
    return sum(rrs) / len(rrs)


class KgEmbedder(BaseEstimator):
    """Estimator wrapper: fit on a graph (or split) and expose the table."""

    def __init__(self, kind="complex", dim=64, gamma=9.0, reg_weight=0.05,
                 reg_power=None, lr=0.05, batch_size=256, negatives=16,
                 epochs=200, seed=0):
        self.kind = kind
        self.dim = dim
        self.gamma = gamma
        self.reg_weight = reg_weight
        self.reg_power = reg_power
        self.lr = lr
        self.batch_size = batch_size
        self.negatives = negatives
        self.epochs = epochs
        self.seed = seed

    def fit(self, data: DatasetSplit | KnowledgeGraph, y=None):
        backend = Backend(kind=self.kind, dim=self.dim, gamma=self.gamma,
                          reg_weight=self.reg_weight, reg_power=self.reg_power)
        hyper = TrainHyper(lr=self.lr, batch_size=self.batch_size,
                           negatives_per_positive=self.negatives,
                           epochs=self.epochs, seed=self.seed)
        self.table_ = train_embeddings(data, backend, hyper)
        return self

    def score(self, data: DatasetSplit | KnowledgeGraph, y=None) -> float:
        """Filtered link-prediction MRR on the given graph's triples."""
        if not hasattr(self, "table_"):
            raise NotFittedError("call fit() first")
        kg = data.observed if isinstance(data, DatasetSplit) else data
        return link_prediction_mrr(self.table_, kg)
