"""Embedding backends behind one abstract interface: a scoring function,
a sigmoid truth value, a closed-form forward (tail) estimator, and analytic
reciprocal relation parameters.

Complex-valued kinds store coordinates as interleaved (real, imaginary)
pairs inside a flat real vector, so every backend exposes the same flat
embedding type of width ``dim``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError, ParseError

KINDS = ("complex", "distmult", "transe", "rescal", "rotate")
_DISTANCE_KINDS = frozenset({"transe", "rotate"})
_PAIRED_KINDS = frozenset({"complex", "rotate"})

DTYPE = torch.float64


@dataclass(frozen=True)
class Backend:
    """Backend family plus the hyperparameters its formulas need.

    ``gamma`` only matters for distance-based kinds; ``reg_weight`` and
    ``reg_power`` parameterize the norm penalty used in pretraining and in
    the numeric argmax verifier.
    """

    kind: str
    dim: int
    gamma: float = 9.0
    reg_weight: float = 0.001
    reg_power: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown backend kind {self.kind!r}; expected one of {KINDS}")
        if self.dim < 1:
            raise ConfigError("dim must be positive")
        if self.kind in _PAIRED_KINDS and self.dim % 2:
            raise ConfigError(f"{self.kind} needs an even dim (real+imaginary pairs)")
        if self.reg_weight < 0:
            raise ConfigError("reg_weight must be >= 0")
        if self.reg_power is None:
            object.__setattr__(self, "reg_power", 2 if self.is_distance else 3)
        if self.reg_power not in (2, 3):
            raise ConfigError("reg_power must be 2 or 3")

    @property
    def is_distance(self) -> bool:
        return self.kind in _DISTANCE_KINDS

    @property
    def relation_size(self) -> int:
        """Parameter count of one relation row."""
        if self.kind == "rescal":
            return self.dim * self.dim
        if self.kind == "rotate":
            return self.dim // 2
        return self.dim


def as_tensor(x) -> torch.Tensor:
    return torch.as_tensor(x, dtype=DTYPE)


def _pairs(x: torch.Tensor) -> torch.Tensor:
    """View a flat interleaved vector as [..., d, 2] (real, imaginary)."""
    return x.reshape(*x.shape[:-1], -1, 2)


def _flat(x: torch.Tensor) -> torch.Tensor:
    return x.reshape(*x.shape[:-2], -1)


def _cmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Elementwise complex product on [..., d, 2] pair views."""
    re = a[..., 0] * b[..., 0] - a[..., 1] * b[..., 1]
    im = a[..., 0] * b[..., 1] + a[..., 1] * b[..., 0]
    return torch.stack((re, im), dim=-1)


def _conj(a: torch.Tensor) -> torch.Tensor:
    return torch.stack((a[..., 0], -a[..., 1]), dim=-1)


def _check_shapes(backend: Backend, h: torch.Tensor, r: torch.Tensor):
    if h.shape[-1] != backend.dim:
        raise ValueError(
            f"entity embedding width {h.shape[-1]} does not match dim {backend.dim}")
    if r.shape[-1] != backend.relation_size:
        raise ValueError(
            f"relation width {r.shape[-1]} does not match "
            f"expected {backend.relation_size} for {backend.kind}")


def forward_estimate(backend: Backend, h, r) -> torch.Tensor:
    """Closed-form tail estimate f(h, r); batched over leading dimensions."""
    h, r = as_tensor(h), as_tensor(r)
    _check_shapes(backend, h, r)
    kind = backend.kind
    if kind == "transe":
        return h + r
    if kind == "distmult":
        return r * h
    if kind == "complex":
        return _flat(_cmul(_pairs(r), _pairs(h)))
    if kind == "rotate":
        rot = torch.stack((torch.cos(r), torch.sin(r)), dim=-1)
        return _flat(_cmul(rot, _pairs(h)))
    # rescal: relation row is a row-major d x d matrix
    d = backend.dim
    w = r.reshape(*r.shape[:-1], d, d)
    return (w @ h.unsqueeze(-1)).squeeze(-1)


def score(backend: Backend, h, r, t) -> torch.Tensor:
    """Triple plausibility score.

    Inner-product kinds score <f(h,r), t> (ComplEx takes the real part,
    which equals the flat real dot product in the interleaved layout);
    distance kinds score gamma - ||f(h,r) - t||_2.
    """
    t = as_tensor(t)
    if t.shape[-1] != backend.dim:
        raise ValueError(
            f"entity embedding width {t.shape[-1]} does not match dim {backend.dim}")
    f = forward_estimate(backend, h, r)
    shape = torch.broadcast_shapes(f.shape, t.shape)
    f, t = f.expand(shape), t.expand(shape)
    if backend.is_distance:
        return backend.gamma - torch.linalg.vector_norm(f - t, dim=-1)
    return (f * t).sum(dim=-1)


def truth_value(backend: Backend, h, r, t) -> torch.Tensor:
    """Sigmoid of the score; a continuous relaxation of the 0/1 truth value."""
    return torch.sigmoid(score(backend, h, r, t))


def reciprocal_embedding(backend: Backend, r) -> torch.Tensor:
    """Relation parameters of the reversed direction.

    Exact for every kind here: score(t, r_inv, h) == score(h, r, t).
    """
    r = as_tensor(r)
    if r.shape[-1] != backend.relation_size:
        raise ValueError(
            f"relation width {r.shape[-1]} does not match "
            f"expected {backend.relation_size} for {backend.kind}")
    kind = backend.kind
    if kind == "transe" or kind == "rotate":
        return -r
    if kind == "distmult":
        return r.clone()
    if kind == "complex":
        return _flat(_conj(_pairs(r)))
    d = backend.dim
    w = r.reshape(*r.shape[:-1], d, d)
    return w.transpose(-1, -2).reshape(*r.shape)


class EmbeddingTable:
    """Pretrained entity/relation/reciprocal rows for one backend.

    Immutable for inference; reciprocal rows are derived analytically from
    the relation rows so the reversed-score identity holds exactly.
    """

    def __init__(self, backend: Backend, entity, relation, reciprocal=None):
        self.backend = backend
        self.entity = as_tensor(entity)
        self.relation = as_tensor(relation)
        if self.entity.ndim != 2 or self.entity.shape[1] != backend.dim:
            raise ValueError("entity table must be [entity_count, dim]")
        if self.relation.ndim != 2 or self.relation.shape[1] != backend.relation_size:
            raise ValueError("relation table must be [relation_count, relation_size]")
        if reciprocal is None:
            reciprocal = reciprocal_embedding(backend, self.relation)
        self.reciprocal = as_tensor(reciprocal)
        if self.reciprocal.shape != self.relation.shape:
            raise ValueError("reciprocal table must match relation table shape")
        for name in ("entity", "relation", "reciprocal"):
            if not torch.isfinite(getattr(self, name)).all():
                raise ValueError(f"{name} table contains non-finite entries")

    @property
    def entity_count(self) -> int:
        return self.entity.shape[0]

    @property
    def relation_count(self) -> int:
        return self.relation.shape[0]

    def entity_rows(self, ids) -> torch.Tensor:
        ids = torch.as_tensor(ids, dtype=torch.long)
        if ids.numel() and (ids.min() < 0 or ids.max() >= self.entity_count):
            raise LookupError("entity id out of range")
        return self.entity[ids]

    def relation_rows(self, ids, reciprocal: bool = False) -> torch.Tensor:
        ids = torch.as_tensor(ids, dtype=torch.long)
        if ids.numel() and (ids.min() < 0 or ids.max() >= self.relation_count):
            raise LookupError("relation id out of range")
        return (self.reciprocal if reciprocal else self.relation)[ids]


def save_checkpoint(table: EmbeddingTable, header_path) -> Path:
    """Write a JSON header plus little-endian float32 blob.

    Blob layout is row-major: all entity rows, then relation rows, then
    reciprocal rows. The blob lives next to the header with a .bin suffix.
    """
    header_path = Path(header_path)
    bin_path = header_path.with_suffix(".bin")
    b = table.backend
    header = {
        "kind": b.kind,
        "dim": b.dim,
        "entity_count": table.entity_count,
        "relation_count": table.relation_count,
        "gamma": b.gamma,
        "reg_weight": b.reg_weight,
        "reg_power": b.reg_power,
        "blob": bin_path.name,
    }
    header_path.write_text(json.dumps(header, sort_keys=True, indent=2) + "\n",
                           encoding="utf-8")
    parts = [table.entity, table.relation, table.reciprocal]
    blob = np.concatenate([p.numpy().astype("<f4").ravel() for p in parts])
    bin_path.write_bytes(blob.tobytes())
    return header_path


def load_checkpoint(header_path) -> EmbeddingTable:
    header_path = Path(header_path)
    try:
        header = json.loads(header_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{header_path}: invalid checkpoint header: {exc}") from None
    try:
        backend = Backend(kind=header["kind"], dim=header["dim"],
                          gamma=header["gamma"], reg_weight=header["reg_weight"],
                          reg_power=header["reg_power"])
        ec, rc = header["entity_count"], header["relation_count"]
        blob_name = header["blob"]
    except KeyError as exc:
        raise ParseError(f"{header_path}: checkpoint header missing {exc}") from None
    raw = np.frombuffer((header_path.parent / blob_name).read_bytes(), dtype="<f4")
    sizes = (ec * backend.dim, rc * backend.relation_size, rc * backend.relation_size)
    if raw.size != sum(sizes):
        raise ParseError(
            f"{header_path}: blob holds {raw.size} floats, expected {sum(sizes)}")
    ent = raw[:sizes[0]].reshape(ec, backend.dim)
    rel = raw[sizes[0]:sizes[0] + sizes[1]].reshape(rc, backend.relation_size)
    rec = raw[sizes[0] + sizes[1]:].reshape(rc, backend.relation_size)
    return EmbeddingTable(backend, ent.astype(np.float64), rel.astype(np.float64),
                          rec.astype(np.float64))
