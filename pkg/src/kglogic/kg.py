"""Knowledge graph storage: dense integer id spaces, triple sets with
adjacency indices, observed/full splits, and synthetic graph generation."""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple

from .errors import ConfigError, ParseError


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


class KnowledgeGraph:
    """Immutable triple store with out/in adjacency indices.

    Duplicate triples in the input are silently dropped (triple sets are
    sets). Safe to share across concurrent readers once constructed.
    """

    def __init__(self, entity_count: int, relation_count: int,
                 triples: Iterable[Triple]):
        if entity_count < 0 or relation_count < 0:
            raise ConfigError("entity_count and relation_count must be >= 0")
        self.entity_count = entity_count
        self.relation_count = relation_count
        seen = set()
        ordered = []
        for t in triples:
            t = Triple(*t)
            self._check_ids(t)
            if t not in seen:
                seen.add(t)
                ordered.append(t)
        self.triples = frozenset(seen)
        # Deterministic iteration order for seeded sampling.
        self.triple_list = tuple(sorted(ordered))
        out: dict[tuple[int, int], list[int]] = {}
        inc: dict[tuple[int, int], list[int]] = {}
        for h, r, t in self.triple_list:
            out.setdefault((h, r), []).append(t)
            inc.setdefault((t, r), []).append(h)
        self.out_index = {k: tuple(v) for k, v in out.items()}
        self.in_index = {k: tuple(v) for k, v in inc.items()}

    def _check_ids(self, t: Triple):
        if not (0 <= t.head < self.entity_count and 0 <= t.tail < self.entity_count):
            raise ParseError(f"entity id out of range in triple {tuple(t)}")
        if not (0 <= t.relation < self.relation_count):
            raise ParseError(f"relation id out of range in triple {tuple(t)}")

    def __len__(self):
        return len(self.triples)

    def __contains__(self, triple):
        return Triple(*triple) in self.triples

    def neighbors(self, e: int, r: int, direction: str) -> tuple[int, ...]:
        """Sorted tails of (e, r, *) for h2t, sorted heads of (*, r, e) for t2h."""
        if not 0 <= e < self.entity_count:
            raise IndexError(f"entity id {e} out of range")
        if not 0 <= r < self.relation_count:
            raise IndexError(f"relation id {r} out of range")
        if direction == "h2t":
            return self.out_index.get((e, r), ())
        if direction == "t2h":
            return self.in_index.get((e, r), ())
        raise ValueError(f"direction must be 'h2t' or 't2h', got {direction!r}")


def neighbors(kg: KnowledgeGraph, e: int, r: int, direction: str) -> list[int]:
    return list(kg.neighbors(e, r, direction))


@dataclass(frozen=True)
class DatasetSplit:
    """Observed subgraph plus the full graph it was drawn from (OWA)."""

    observed: KnowledgeGraph
    full: KnowledgeGraph

    def __post_init__(self):
        if (self.observed.entity_count != self.full.entity_count
                or self.observed.relation_count != self.full.relation_count):
            raise ConfigError("observed and full graphs must share id spaces")
        if not self.observed.triples <= self.full.triples:
            raise ConfigError("observed triples must be a subset of full triples")


def read_triples(path, entity_count: int, relation_count: int) -> KnowledgeGraph:
    """Parse a tab-separated triples file (head\\trelation\\ttail per line)."""
    triples = []
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 tab-separated fields")
            try:
                h, r, t = (int(p) for p in parts)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-integer field") from None
            if not (0 <= h < entity_count and 0 <= t < entity_count):
                raise ParseError(f"{path}:{lineno}: entity id out of declared range")
            if not 0 <= r < relation_count:
                raise ParseError(f"{path}:{lineno}: relation id out of declared range")
            triples.append(Triple(h, r, t))
    return KnowledgeGraph(entity_count, relation_count, triples)


def write_triples(kg: KnowledgeGraph, path):
    with Path(path).open("w", encoding="utf-8") as fh:
        for h, r, t in kg.triple_list:
            fh.write(f"{h}\t{r}\t{t}\n")


def load_dataset(manifest_path) -> DatasetSplit:
    """Load a split from its JSON manifest.

    The manifest names the observed and full triple files (relative to its
    own directory) and declares the id spaces::

        {"entity_count": N, "relation_count": R,
         "observed": "observed.tsv", "full": "full.tsv"}
    """
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{manifest_path}: invalid JSON manifest: {exc}") from None
    for key in ("entity_count", "relation_count", "observed", "full"):
        if key not in manifest:
            raise ParseError(f"{manifest_path}: manifest missing key {key!r}")
    ec = manifest["entity_count"]
    rc = manifest["relation_count"]
    base = manifest_path.parent
    full = read_triples(base / manifest["full"], ec, rc)
    observed = read_triples(base / manifest["observed"], ec, rc)
    return DatasetSplit(observed=observed, full=full)


def save_dataset(split: DatasetSplit, out_dir, name: str = "split") -> Path:
    """Write observed/full triple files plus the manifest; returns its path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_triples(split.observed, out_dir / "observed.tsv")
    write_triples(split.full, out_dir / "full.tsv")
    manifest = {
        "entity_count": split.full.entity_count,
        "relation_count": split.full.relation_count,
        "observed": "observed.tsv",
        "full": "full.tsv",
    }
    manifest_path = out_dir / f"{name}.json"
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n",
                             encoding="utf-8")
    return manifest_path


@dataclass(frozen=True)
class SyntheticConfig:
    entity_count: int
    relation_count: int
    triple_count: int
    dropout_fraction: float = 0.0


def generate_synthetic(config: SyntheticConfig, seed: int) -> DatasetSplit:
    """Uniform random distinct triples; observed drops a seeded fraction.

    Rejection sampling against a seen-set guarantees distinctness, which
    matters more than speed at this scale. Pure function of (config, seed).
    """
    ec, rc, n = config.entity_count, config.relation_count, config.triple_count
    if not 0.0 <= config.dropout_fraction <= 1.0:
        raise ConfigError("dropout_fraction must be in [0, 1]")
    if ec < 1 or rc < 1:
        raise ConfigError("need at least one entity and one relation")
    if n > ec * ec * rc:
        raise ConfigError(
            f"cannot place {n} distinct triples in a {ec}x{rc}x{ec} space")
    rng = random.Random(seed)
    seen = set()
    ordered = []
    while len(ordered) < n:
        t = Triple(rng.randrange(ec), rng.randrange(rc), rng.randrange(ec))
        if t not in seen:
            seen.add(t)
            ordered.append(t)
    full = KnowledgeGraph(ec, rc, ordered)
    drop = math.ceil(config.dropout_fraction * n)
    dropped = set(rng.sample(range(n), drop))
    observed_triples = [t for i, t in enumerate(ordered) if i not in dropped]
    observed = KnowledgeGraph(ec, rc, observed_triples)
    return DatasetSplit(observed=observed, full=full)
