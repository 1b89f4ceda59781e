"""Graph neural network over query graphs: node states start from
pretrained entity rows plus two learned variable vectors, then a shared
two-layer MLP repeatedly folds in aggregated one-hop messages. The free
variable's final state ranks entities by cosine similarity, and disjunctive
queries join per-conjunct rankings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import torch

from .backends import DTYPE, EmbeddingTable, as_tensor
from .errors import NumericError, ParseError
from .messages import message_tensor
from .queries import (
    EQUALITY,
    Constant,
    EFO1Query,
    Existential,
    QueryGraph,
    build_query_graph,
    query_depth,
)

MESSAGE_MODES = ("closed_form", "kgecat")
JOIN_MODES = ("max_score", "min_rank")


@dataclass
class LmpnnParams:
    """Shared MLP weights, the two variable vectors, and the self-loop
    weight. `cat_linear` only exists for the concatenation ablation."""

    w1: torch.Tensor
    b1: torch.Tensor
    w2: torch.Tensor
    b2: torch.Tensor
    v_x: torch.Tensor
    v_y: torch.Tensor
    epsilon: float
    cat_linear: torch.Tensor | None = None

    @property
    def dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def message_mode(self) -> str:
        return "closed_form" if self.cat_linear is None else "kgecat"

    def trainable(self) -> list[torch.Tensor]:
        ts = [self.w1, self.b1, self.w2, self.b2, self.v_x, self.v_y]
        if self.cat_linear is not None:
            ts.append(self.cat_linear)
        return ts

    def named_trainable(self) -> dict[str, torch.Tensor]:
        names = ["w1", "b1", "w2", "b2", "v_x", "v_y"]
        if self.cat_linear is not None:
            names.append("cat_linear")
        return {n: getattr(self, n) for n in names}

    def clone(self) -> "LmpnnParams":
        return LmpnnParams(
            w1=self.w1.detach().clone(), b1=self.b1.detach().clone(),
            w2=self.w2.detach().clone(), b2=self.b2.detach().clone(),
            v_x=self.v_x.detach().clone(), v_y=self.v_y.detach().clone(),
            epsilon=self.epsilon,
            cat_linear=None if self.cat_linear is None
            else self.cat_linear.detach().clone())

    def mlp(self, u: torch.Tensor) -> torch.Tensor:
        return torch.relu(u @ self.w1.T + self.b1) @ self.w2.T + self.b2


def init_params(dim: int, hidden: int, epsilon: float, seed: int,
                message_mode: str = "closed_form",
                relation_size: int | None = None) -> LmpnnParams:
    if message_mode not in MESSAGE_MODES:
        raise ValueError(f"message_mode must be one of {MESSAGE_MODES}")
    gen = torch.Generator().manual_seed(seed)

    def randn(*shape, fan_in):
        return torch.randn(*shape, dtype=DTYPE, generator=gen) * (2.0 / fan_in) ** 0.5

    cat_linear = None
    if message_mode == "kgecat":
        if relation_size is None:
            raise ValueError("kgecat mode needs the backend's relation_size")
        width = dim + relation_size + 2
        cat_linear = randn(dim, width, fan_in=width)
    # Small nonzero biases: an all-dead ReLU layer would otherwise emit an
    # exactly zero state, whose cosine is undefined.
    return LmpnnParams(
        w1=randn(hidden, dim, fan_in=dim),
        b1=0.01 * torch.randn(hidden, dtype=DTYPE, generator=gen),
        w2=randn(dim, hidden, fan_in=hidden),
        b2=0.01 * torch.randn(dim, dtype=DTYPE, generator=gen),
        v_x=randn(dim, fan_in=dim),
        v_y=randn(dim, fan_in=dim),
        epsilon=epsilon,
        cat_linear=cat_linear)


# ---------------------------------------------------------------------------
# Batching of structurally identical query graphs
# ---------------------------------------------------------------------------

def graph_signature(graph: QueryGraph):
    """Graphs with equal signatures differ only in their grounding ids."""
    kinds = tuple(
        ("x", t.index) if isinstance(t, Existential)
        else ("c",) if isinstance(t, Constant) else ("y",)
        for t in graph.nodes)
    edges = tuple((e.src, e.dst, e.negated, e.relation == EQUALITY)
                  for e in graph.edges)
    return kinds, edges


class GraphBatch:
    """A stack of same-shaped query graphs ready for one tensor forward."""

    def __init__(self, graphs: Sequence[QueryGraph]):
        if not graphs:
            raise ValueError("empty graph batch")
        sig = graph_signature(graphs[0])
        for g in graphs[1:]:
            if graph_signature(g) != sig:
                raise ValueError("graphs in one batch must share a signature")
        template = graphs[0]
        self.size = len(graphs)
        self.node_kinds, self.edge_struct = sig
        self.free_index = template.free_index
        self.const_positions = [i for i, k in enumerate(self.node_kinds)
                                if k == ("c",)]
        self.const_ids = torch.tensor(
            [[g.nodes[i].entity for i in self.const_positions] for g in graphs],
            dtype=torch.long).reshape(self.size, len(self.const_positions))
        self.rel_ids = torch.tensor(
            [[max(e.relation, 0) for e in g.edges] for g in graphs],
            dtype=torch.long).reshape(self.size, len(self.edge_struct))
        self.depth = query_depth(template)


def init_node_states(batch: GraphBatch, table: EmbeddingTable,
                     params: LmpnnParams) -> torch.Tensor:
    """Layer-0 states: entity rows for constants, v_x for every existential,
    v_y for the free node. Shape [batch, nodes, dim]."""
    cols = []
    const_slot = {pos: j for j, pos in enumerate(batch.const_positions)}
    for i, kind in enumerate(batch.node_kinds):
        if kind == ("c",):
            cols.append(table.entity_rows(batch.const_ids[:, const_slot[i]]))
        elif kind == ("y",):
            cols.append(params.v_y.unsqueeze(0).expand(batch.size, -1))
        else:
            cols.append(params.v_x.unsqueeze(0).expand(batch.size, -1))
    return torch.stack(cols, dim=1)


def _edge_messages(batch: GraphBatch, table: EmbeddingTable,
                   params: LmpnnParams, z: torch.Tensor, edge_index: int):
    """Messages along one edge, in both directions (src->dst, dst->src)."""
    src, dst, negated, is_eq = batch.edge_struct[edge_index]
    sign = -1.0 if negated else 1.0
    if is_eq:
        return sign * z[:, src], sign * z[:, dst]
    rel = batch.rel_ids[:, edge_index]
    if params.cat_linear is None:
        fwd = message_tensor(table.backend, z[:, src],
                             table.relation_rows(rel), negated)
        bwd = message_tensor(table.backend, z[:, dst],
                             table.relation_rows(rel, reciprocal=True), negated)
        return fwd, bwd
    rel_rows = table.relation_rows(rel)
    neg_bit = torch.full((batch.size, 1), float(negated), dtype=DTYPE)

    def cat_message(source, direction_bit):
        dir_col = torch.full((batch.size, 1), direction_bit, dtype=DTYPE)
        feat = torch.cat([source, rel_rows, dir_col, neg_bit], dim=-1)
        return feat @ params.cat_linear.T

    return cat_message(z[:, src], 0.0), cat_message(z[:, dst], 1.0)


def layer_update(batch: GraphBatch, table: EmbeddingTable, params: LmpnnParams,
                 z: torch.Tensor) -> torch.Tensor:
    """One simultaneous update: every node reads only the previous layer."""
    agg = params.epsilon * z
    for e_i, (src, dst, _neg, _eq) in enumerate(batch.edge_struct):
        fwd, bwd = _edge_messages(batch, table, params, z, e_i)
        agg = agg.index_add(1, torch.tensor([dst]), fwd.unsqueeze(1))
        agg = agg.index_add(1, torch.tensor([src]), bwd.unsqueeze(1))
    out = params.mlp(agg)
    if not torch.isfinite(out).all():
        bad = torch.nonzero(~torch.isfinite(out))[0]
        raise NumericError(f"non-finite state at node {int(bad[1])}")
    return out


def forward_conjunctive(batch: GraphBatch, table: EmbeddingTable,
                        params: LmpnnParams,
                        depth_override: int | None = None) -> torch.Tensor:
    """Unroll the layer as many times as the query is deep (at least once)
    and return the free node's final state, shape [batch, dim]."""
    layers = batch.depth if depth_override is None else depth_override
    layers = max(1, layers)
    z = init_node_states(batch, table, params)
    for _ in range(layers):
        z = layer_update(batch, table, params, z)
    return z[:, batch.free_index]


def forward_graph(graph: QueryGraph, table: EmbeddingTable, params: LmpnnParams,
                  depth_override: int | None = None) -> torch.Tensor:
    """Single-graph convenience wrapper; returns the free state [dim]."""
    return forward_conjunctive(GraphBatch([graph]), table, params,
                               depth_override)[0]


# ---------------------------------------------------------------------------
# Ranking
# ---------------------------------------------------------------------------

class Ranking(NamedTuple):
    ids: np.ndarray      # entity ids, best first
    scores: np.ndarray   # matching join scores

    def pairs(self) -> list[tuple[int, float]]:
        return list(zip(self.ids.tolist(), self.scores.tolist()))


def entity_cosines(zq: torch.Tensor, table: EmbeddingTable) -> torch.Tensor:
    """Cosine of zq rows against every entity row; zq is [dim] or [B, dim]."""
    single = zq.ndim == 1
    if single:
        zq = zq.unsqueeze(0)
    qn = torch.linalg.vector_norm(zq, dim=-1, keepdim=True)
    if (qn == 0).any():
        raise ValueError("zero-norm query embedding cannot be ranked")
    en = torch.linalg.vector_norm(table.entity, dim=-1, keepdim=True)
    cos = (zq / qn) @ (table.entity / en).T
    return cos[0] if single else cos


def _order(scores: np.ndarray) -> np.ndarray:
    """Descending by score, ties broken by ascending entity id."""
    ids = np.arange(scores.shape[0])
    return np.lexsort((ids, -scores))


def score_and_rank(zq, table: EmbeddingTable, exclude=frozenset()) -> Ranking:
    zq = as_tensor(np.asarray(zq, dtype=np.float64))
    scores = entity_cosines(zq, table).numpy()
    order = _order(scores)
    if exclude:
        keep = ~np.isin(order, np.fromiter(exclude, dtype=np.int64,
                                           count=len(exclude)))
        order = order[keep]
    return Ranking(ids=order, scores=scores[order])


def _join_rankings(cos: torch.Tensor, join: str) -> Ranking:
    """cos is [n_disjuncts, entity_count]; join folds disjuncts."""
    best = cos.max(dim=0).values.numpy()
    if join == "max_score":
        order = _order(best)
        return Ranking(ids=order, scores=best[order])
    if join == "min_rank":
        per = np.stack([_order(row.numpy()) for row in cos])
        ranks = np.empty_like(per)
        pos = np.arange(cos.shape[1])
        for d in range(per.shape[0]):
            ranks[d, per[d]] = pos
        joined = ranks.min(axis=0)
        order = np.lexsort((np.arange(cos.shape[1]), joined))
        return Ranking(ids=order, scores=best[order])
    raise ValueError(f"join must be one of {JOIN_MODES}")


def answer_dnf(query: EFO1Query, table: EmbeddingTable, params: LmpnnParams,
               depth_override: int | None = None,
               join: str = "max_score") -> Ranking:
    """Rank entities for a full query: per-conjunct forward passes whose
    cosine scores are joined by maximum (the union reading)."""
    cos_rows = []
    for cq in query.disjuncts:
        graph = build_query_graph(cq)
        zq = forward_graph(graph, table, params, depth_override)
        cos_rows.append(entity_cosines(zq, table))
    return _join_rankings(torch.stack(cos_rows), join)


def rank_queries(queries: Sequence[EFO1Query], table: EmbeddingTable,
                 params: LmpnnParams, depth_offset: int = 0,
                 join: str = "max_score") -> list[Ranking]:
    """answer_dnf over many queries, batching same-shaped conjuncts."""
    entries = []
    owners = []
    for qi, q in enumerate(queries):
        for cq in q.disjuncts:
            owners.append(qi)
            entries.append(build_query_graph(cq))
    groups: dict = {}
    for idx, g in enumerate(entries):
        groups.setdefault(graph_signature(g), []).append(idx)
    cos = torch.empty(len(entries), table.entity_count, dtype=DTYPE)
    with torch.no_grad():
        for idxs in groups.values():
            batch = GraphBatch([entries[i] for i in idxs])
            zq = forward_conjunctive(batch, table, params,
                                     max(1, batch.depth + depth_offset))
            cos[torch.tensor(idxs)] = entity_cosines(zq, table)
    out = []
    for qi in range(len(queries)):
        rows = cos[[i for i, o in enumerate(owners) if o == qi]]
        out.append(_join_rankings(rows, join))
    return out


def disjunct_embeddings(queries: Sequence[EFO1Query], table: EmbeddingTable,
                        params: LmpnnParams,
                        depth_offset: int = 0) -> tuple[torch.Tensor, list[list[int]]]:
    """Forward every conjunct of every query with signature batching.

    Returns the stacked free states [total_conjuncts, dim] (autograd
    intact) plus, per query, the row indices of its conjuncts.
    """
    entries = []
    owners: list[list[int]] = []
    for q in queries:
        rows = []
        for cq in q.disjuncts:
            rows.append(len(entries))
            entries.append(build_query_graph(cq))
        owners.append(rows)
    groups: dict = {}
    for idx, g in enumerate(entries):
        groups.setdefault(graph_signature(g), []).append(idx)
    chunks = []
    positions = []
    for idxs in groups.values():
        batch = GraphBatch([entries[i] for i in idxs])
        zq = forward_conjunctive(batch, table, params,
                                 max(1, batch.depth + depth_offset))
        chunks.append(zq)
        positions.extend(idxs)
    stacked = torch.cat(chunks, dim=0)
    inverse = torch.empty(len(entries), dtype=torch.long)
    inverse[torch.tensor(positions)] = torch.arange(len(entries))
    return stacked[inverse], owners


# ---------------------------------------------------------------------------
# Parameter checkpoints
# ---------------------------------------------------------------------------

def save_params(params: LmpnnParams, header_path, backend_kind: str = "") -> Path:
    header_path = Path(header_path)
    bin_path = header_path.with_suffix(".bin")
    header = {
        "dim": params.dim,
        "hidden": params.hidden,
        "epsilon": params.epsilon,
        "message_mode": params.message_mode,
        "backend": backend_kind,
        "blob": bin_path.name,
    }
    parts = [params.w1, params.b1, params.w2, params.b2, params.v_x, params.v_y]
    if params.cat_linear is not None:
        header["cat_width"] = params.cat_linear.shape[1]
        parts.append(params.cat_linear)
    header_path.write_text(json.dumps(header, sort_keys=True, indent=2) + "\n",
                           encoding="utf-8")
    blob = np.concatenate([p.detach().numpy().astype("<f4").ravel() for p in parts])
    bin_path.write_bytes(blob.tobytes())
    return header_path


def load_params(header_path) -> LmpnnParams:
    header_path = Path(header_path)
    try:
        header = json.loads(header_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{header_path}: invalid parameter header: {exc}") from None
    dim, hidden = header["dim"], header["hidden"]
    raw = np.frombuffer((header_path.parent / header["blob"]).read_bytes(),
                        dtype="<f4").astype(np.float64)
    sizes = [hidden * dim, hidden, dim * hidden, dim, dim, dim]
    if header.get("message_mode") == "kgecat":
        sizes.append(dim * header["cat_width"])
    if raw.size != sum(sizes):
        raise ParseError(f"{header_path}: blob holds {raw.size} floats, "
                         f"expected {sum(sizes)}")
    offs = np.cumsum([0] + sizes)
    chunk = [torch.as_tensor(raw[offs[i]:offs[i + 1]]) for i in range(len(sizes))]
    cat_linear = None
    if header.get("message_mode") == "kgecat":
        cat_linear = chunk[6].reshape(dim, header["cat_width"])
    return LmpnnParams(
        w1=chunk[0].reshape(hidden, dim), b1=chunk[1],
        w2=chunk[2].reshape(dim, hidden), b2=chunk[3],
        v_x=chunk[4], v_y=chunk[5],
        epsilon=header["epsilon"], cat_linear=cat_linear)
