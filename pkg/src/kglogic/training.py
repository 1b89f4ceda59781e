"""Contrastive training of the query network: a softmax ranking loss over
cosine similarities with uniformly sampled noise entities, optimized by
AdamW while the pretrained embedding table stays frozen."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .backends import EmbeddingTable
from .errors import NumericError, TrainingError
from .network import (
    LmpnnParams,
    Ranking,
    disjunct_embeddings,
    init_params,
    rank_queries,
)
from .queries import EFO1Query, QueryInstance


@dataclass(frozen=True)
class TrainConfig:
    temperature: float = 0.05
    negatives: int = 128
    lr: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 1024
    epochs: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.negatives < 1:
            raise ValueError("need at least one negative per positive")
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


def _epoch_generator(seed: int, epoch: int) -> torch.Generator:
    return torch.Generator().manual_seed((seed * 2654435761 + epoch) % (2 ** 63))


def sample_negatives(batch_size: int, negatives: int, entity_count: int,
                     gen: torch.Generator) -> torch.Tensor:
    """Uniform noise entities; collisions with true answers are tolerated."""
    return torch.randint(entity_count, (batch_size, negatives), generator=gen)


def nce_loss(batch: Sequence[tuple[int, EFO1Query]], table: EmbeddingTable,
             params: LmpnnParams, cfg: TrainConfig,
             negatives: torch.Tensor | None = None,
             depth_offset: int = 0) -> torch.Tensor:
    """Mean negative log softmax of the positive answer against noise.

    The logit of entity e for query q is cos(e, z(q)) / temperature, with
    disjunctive queries contributing their best conjunct's cosine. Returns
    a nonnegative scalar; log(K+1) when all logits coincide.
    """
    if not batch:
        raise ValueError("empty batch")
    if negatives is None:
        gen = _epoch_generator(cfg.seed, 0)
        negatives = sample_negatives(len(batch), cfg.negatives,
                                     table.entity_count, gen)
    z, owners = disjunct_embeddings([q for _, q in batch], table, params,
                                    depth_offset=depth_offset)
    # Clamp: a transiently zero query state must not poison the batch.
    zn = z / torch.linalg.vector_norm(z, dim=-1, keepdim=True).clamp_min(1e-12)
    ent = table.entity
    entn = ent / torch.linalg.vector_norm(ent, dim=-1, keepdim=True)
    losses = []
    for i, (answer, _q) in enumerate(batch):
        cands = torch.cat([torch.tensor([answer]), negatives[i]])
        cos = zn[owners[i]] @ entn[cands].T          # [disjuncts, K+1]
        logits = cos.max(dim=0).values / cfg.temperature
        losses.append(torch.logsumexp(logits, dim=0) - logits[0])
    return torch.stack(losses).mean()


def gradients(batch, table: EmbeddingTable, params: LmpnnParams,
              cfg: TrainConfig, negatives: torch.Tensor | None = None,
              depth_offset: int = 0) -> dict[str, torch.Tensor]:
    """Reverse-mode gradients of the loss for the trainable parameters only;
    gradients accumulate across every application of the shared MLP."""
    named = params.named_trainable()
    for t in named.values():
        t.requires_grad_(True)
    try:
        loss = nce_loss(batch, table, params, cfg, negatives=negatives,
                        depth_offset=depth_offset)
        grads = torch.autograd.grad(loss, list(named.values()),
                                    allow_unused=True)
    finally:
        for t in named.values():
            t.requires_grad_(False)
    out = {}
    for (name, tensor), grad in zip(named.items(), grads):
        grad = torch.zeros_like(tensor) if grad is None else grad
        if not torch.isfinite(grad).all():
            raise NumericError(f"non-finite gradient for {name}")
        out[name] = grad.detach()
    return out


def train_lmpnn(table: EmbeddingTable, instances: Sequence[QueryInstance],
                cfg: TrainConfig, params0: LmpnnParams,
                telemetry_path=None) -> tuple[LmpnnParams, list[dict]]:
    """AdamW over shuffled instance batches; positives are drawn uniformly
    from each instance's full answer set. Deterministic per cfg.seed."""
    usable = [inst for inst in instances if inst.answers]
    if not usable:
        raise ValueError("no trainable instances (all answer sets empty)")
    params = params0.clone()
    trainables = params.trainable()
    for t in trainables:
        t.requires_grad_(True)
    opt = torch.optim.AdamW(trainables, lr=cfg.lr,
                            weight_decay=cfg.weight_decay)
    answer_pool = [tuple(sorted(inst.answers)) for inst in usable]
    history: list[dict] = []
    sink = Path(telemetry_path).open("a", encoding="utf-8") if telemetry_path else None
    try:
        for epoch in range(cfg.epochs):
            gen = _epoch_generator(cfg.seed, epoch)
            order = torch.randperm(len(usable), generator=gen)
            t0 = time.monotonic()
            total, count = 0.0, 0
            for start in range(0, len(usable), cfg.batch_size):
                idxs = order[start:start + cfg.batch_size].tolist()
                batch = []
                for i in idxs:
                    pool = answer_pool[i]
                    pick = int(torch.randint(len(pool), (1,), generator=gen))
                    batch.append((pool[pick], usable[i].query))
                negs = sample_negatives(len(batch), cfg.negatives,
                                        table.entity_count, gen)
                opt.zero_grad()
                loss = nce_loss(batch, table, params, cfg, negatives=negs)
                if not torch.isfinite(loss):
                    raise TrainingError(f"loss diverged at epoch {epoch}",
                                        epoch=epoch)
                loss.backward()
                opt.step()
                total += float(loss.detach()) * len(batch)
                count += len(batch)
            entry = {"epoch": epoch, "mean_loss": total / count,
                     "wall_ms": int((time.monotonic() - t0) * 1000)}
            history.append(entry)
            if sink is not None:
                sink.write(json.dumps(entry, sort_keys=True) + "\n")
                sink.flush()
    finally:
        if sink is not None:
            sink.close()
        for t in trainables:
            t.requires_grad_(False)
    return params, history


class LmpnnRanker(BaseEstimator):
    """Trainable query answerer over a frozen pretrained embedding table.

    fit() learns the shared MLP and the two variable vectors from query
    instances; rank()/predict() order entities by joined cosine scores.
    """

    def __init__(self, hidden=256, epsilon=0.1, temperature=0.05,
                 negatives=16, lr=1e-3, weight_decay=1e-4, batch_size=128,
                 epochs=50, message_mode="closed_form", join="max_score",
                 depth_offset=0, seed=0):
        self.hidden = hidden
        self.epsilon = epsilon
        self.temperature = temperature
        self.negatives = negatives
        self.lr = lr
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.message_mode = message_mode
        self.join = join
        self.depth_offset = depth_offset
        self.seed = seed

    def _config(self) -> TrainConfig:
        return TrainConfig(temperature=self.temperature,
                           negatives=self.negatives, lr=self.lr,
                           weight_decay=self.weight_decay,
                           batch_size=self.batch_size, epochs=self.epochs,
                           seed=self.seed)

    def fit(self, instances: Sequence[QueryInstance], table: EmbeddingTable,
            telemetry_path=None):
        params0 = init_params(table.backend.dim, self.hidden, self.epsilon,
                              self.seed, message_mode=self.message_mode,
                              relation_size=table.backend.relation_size)
        self.params_, self.history_ = train_lmpnn(
            table, instances, self._config(), params0,
            telemetry_path=telemetry_path)
        self.table_ = table
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("call fit() first")

    def rank(self, query: EFO1Query) -> Ranking:
        self._check_fitted()
        return rank_queries([query], self.table_, self.params_,
                            depth_offset=self.depth_offset, join=self.join)[0]

    def predict(self, queries: Sequence[EFO1Query]) -> list[np.ndarray]:
        """Ranked entity ids per query, best first."""
        self._check_fitted()
        rankings = rank_queries(list(queries), self.table_, self.params_,
                                depth_offset=self.depth_offset, join=self.join)
        return [r.ids for r in rankings]

    def rank_all(self, queries: Sequence[EFO1Query]) -> list[Ranking]:
        self._check_fitted()
        return rank_queries(list(queries), self.table_, self.params_,
                            depth_offset=self.depth_offset, join=self.join)
