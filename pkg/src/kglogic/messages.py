"""Closed-form one-hop messages: the embedding that (approximately)
maximizes the truth value of one atomic formula given the other end, the
relation, the direction, and the negation flag.

For every backend here the message is the forward estimate f applied to
the relation (head-to-tail) or its reciprocal (tail-to-head), negated when
the atom is negated; the norm-penalty denominator is collapsed to 1.
Equality atoms bypass the backend entirely: the message is the source
embedding itself, or its negation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .backends import (
    Backend,
    EmbeddingTable,
    as_tensor,
    forward_estimate,
    score,
)
from .errors import VerificationError
from .queries import EQUALITY

DIRECTIONS = ("h2t", "t2h")


@dataclass(frozen=True)
class MessageQuery:
    """One end of an atom plus everything needed to infer the other end."""

    source: object                # embedding of the known end
    relation: int                 # relation id, or EQUALITY
    direction: str = "h2t"        # which end `source` is
    negated: bool = False

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")


def encode_equality_message(source, negated) -> np.ndarray:
    source = np.asarray(source, dtype=np.float64)
    return -source if negated else source.copy()


def encode_message(table: EmbeddingTable, mq: MessageQuery) -> np.ndarray:
    """Estimate of the unknown end of the atom, as a flat embedding."""
    if mq.relation == EQUALITY:
        return encode_equality_message(mq.source, mq.negated)
    if not 0 <= mq.relation < table.relation_count:
        raise LookupError(f"relation id {mq.relation} out of range")
    source = as_tensor(np.asarray(mq.source, dtype=np.float64))
    rel = table.relation_rows(mq.relation, reciprocal=(mq.direction == "t2h"))
    message = forward_estimate(table.backend, source, rel)
    if mq.negated:
        message = -message
    return message.numpy()


def message_tensor(backend: Backend, source: torch.Tensor, rel_rows: torch.Tensor,
                   negated: bool) -> torch.Tensor:
    """Batched autograd-friendly message; caller supplies the relation rows
    already resolved for direction (original or reciprocal)."""
    out = forward_estimate(backend, source, rel_rows)
    return -out if negated else out


# ---------------------------------------------------------------------------
# Concatenation ablation baseline
# ---------------------------------------------------------------------------

def kgecat_feature(source, rel_row, direction: str, negated) -> np.ndarray:
    """[source embedding, relation row, direction bit, negation bit]."""
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    source = np.asarray(source, dtype=np.float64)
    rel_row = np.asarray(rel_row, dtype=np.float64)
    bits = np.array([1.0 if direction == "t2h" else 0.0,
                     1.0 if negated else 0.0])
    return np.concatenate([source, rel_row, bits])


def encode_message_kgecat(features, linear) -> np.ndarray:
    """Linear map of the concatenated feature to message width."""
    features = np.asarray(features, dtype=np.float64)
    linear = np.asarray(linear, dtype=np.float64)
    if linear.shape[-1] != features.shape[-1]:
        raise ValueError(
            f"linear maps width {linear.shape[-1]}, feature has {features.shape[-1]}")
    return features @ linear.T


# ---------------------------------------------------------------------------
# Numeric argmax verification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VerifyResult:
    closed_form: np.ndarray
    numeric_argmax: np.ndarray
    cosine_gap: float


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def verify_closed_form(table: EmbeddingTable, mq: MessageQuery, lam: float,
                       oracle_steps: int = 1500, seed: int = 0,
                       restarts: int = 4) -> VerifyResult:
    """Compare the closed form against a gradient-ascent argmax of the
    penalized truth value. Directions are compared (cosine), not
    magnitudes: the penalty/ball trade fixes the direction but not the
    scale of the maximizer.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    if mq.relation == EQUALITY:
        raise ValueError("verification applies to relation atoms only")
    backend = table.backend
    if backend.dim > 64:
        raise ValueError("verification is desk scale only (dim <= 64)")
    closed = encode_message(table, mq)
    source = as_tensor(np.asarray(mq.source, dtype=np.float64))
    rel = table.relation_rows(mq.relation)
    q = backend.reg_power

    def objective(x: torch.Tensor) -> torch.Tensor:
        if mq.direction == "h2t":
            psi = torch.sigmoid(score(backend, source.expand_as(x), rel, x))
        else:
            psi = torch.sigmoid(score(backend, x, rel, source.expand_as(x)))
        if mq.negated:
            psi = 1.0 - psi
        return psi - lam * torch.linalg.vector_norm(x, dim=-1) ** q

    gen = torch.Generator().manual_seed(seed)
    scale = max(float(np.linalg.norm(closed)), 1.0)
    inits = torch.randn(restarts, backend.dim, dtype=torch.float64, generator=gen)
    inits = inits * scale * torch.logspace(-1, 0.3, restarts,
                                           dtype=torch.float64).unsqueeze(1)
    x = inits.clone().requires_grad_(True)
    opt = torch.optim.Adam([x], lr=0.1)
    best_obj = torch.full((restarts,), -np.inf, dtype=torch.float64)
    best_x = inits.clone()
    for step in range(oracle_steps):
        opt.param_groups[0]["lr"] = 0.1 * (1.0 - step / oracle_steps)
        opt.zero_grad()
        obj = objective(x)
        (-obj.sum()).backward()
        opt.step()
        with torch.no_grad():
            cur = objective(x)
            better = cur > best_obj
            best_obj = torch.where(better, cur, best_obj)
            best_x[better] = x.detach()[better]
    winner = int(torch.argmax(best_obj))
    numeric = best_x[winner].numpy()
    if not np.isfinite(numeric).all() or np.linalg.norm(numeric) < 1e-12:
        raise VerificationError("argmax search did not converge",
                                best_gap=1.0 - _cosine(closed, numeric))
    gap = 1.0 - _cosine(closed, numeric)
    return VerifyResult(closed_form=closed, numeric_argmax=numeric,
                        cosine_gap=gap)
