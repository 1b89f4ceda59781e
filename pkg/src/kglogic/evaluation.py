"""Filtered ranking metrics: per-type mean reciprocal rank over hard
answers, with easy answers (and, by default, the instance's other hard
answers) removed from each target's ranking, aggregated into positive-type
and negation-type averages."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ProtocolError
from .network import Ranking
from .queries import EPFO_TYPES, NEGATION_TYPES, CATALOG, QueryInstance


def filtered_rank(ranking: Ranking, easy: Iterable[int], target_hard: int,
                  other_hard: Iterable[int] = (), strict: bool = False) -> int:
    """1-based rank of the target after removing competitors.

    Removes the easy answers and, unless strict, the instance's other hard
    answers. Ties were already resolved deterministically upstream, so the
    rank is just the target's position among the survivors.
    """
    easy = frozenset(easy)
    if target_hard in easy:
        raise ProtocolError(f"target {target_hard} is marked easy")
    removed = set(easy)
    if not strict:
        removed |= set(other_hard) - {target_hard}
    ids = ranking.ids
    pos = np.nonzero(ids == target_hard)[0]
    if pos.size == 0:
        raise ProtocolError(f"target {target_hard} missing from the ranking")
    pos = int(pos[0])
    if removed:
        above = ids[:pos]
        removed_arr = np.fromiter(removed, dtype=ids.dtype, count=len(removed))
        return pos + 1 - int(np.isin(above, removed_arr).sum())
    return pos + 1


@dataclass(frozen=True)
class EvalReport:
    per_type: dict[str, float]
    a_p: float | None
    a_n: float | None
    instance_counts: dict[str, int] = field(default_factory=dict)
    strict_filtering: bool = False

    def to_json(self) -> str:
        payload = {
            "per_type": {k: self.per_type[k] for k in sorted(self.per_type)},
            "a_p": self.a_p,
            "a_n": self.a_n,
            "instance_counts": {k: self.instance_counts[k]
                                for k in sorted(self.instance_counts)},
            "strict_filtering": self.strict_filtering,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    @staticmethod
    def from_per_type(per_type: dict[str, float], instance_counts=None,
                      strict_filtering: bool = False) -> "EvalReport":
        def mean_over(names):
            vals = [per_type[n] for n in names if n in per_type]
            return sum(vals) / len(vals) if vals else None

        return EvalReport(per_type=dict(per_type),
                          a_p=mean_over(EPFO_TYPES),
                          a_n=mean_over(NEGATION_TYPES),
                          instance_counts=dict(instance_counts or {}),
                          strict_filtering=strict_filtering)


def evaluate(instances: Sequence[QueryInstance],
             answer_fn: Callable[[object], Ranking],
             strict: bool = False) -> EvalReport:
    """Per-instance MRR is the mean reciprocal filtered rank over the
    instance's hard answers; per-type MRR averages instances. Instances
    without hard answers are excluded; a type with no usable instances is
    absent from the report rather than zero."""
    by_type: dict[str, list[float]] = {}
    counts: dict[str, int] = {}
    for inst in instances:
        if not inst.hard:
            continue
        name = inst.type_name or "untyped"
        ranking = answer_fn(inst.query)
        rrs = [1.0 / filtered_rank(ranking, inst.easy, target,
                                   other_hard=inst.hard, strict=strict)
               for target in sorted(inst.hard)]
        by_type.setdefault(name, []).append(sum(rrs) / len(rrs))
        counts[name] = counts.get(name, 0) + 1
    per_type = {name: sum(vals) / len(vals) for name, vals in by_type.items()}
    return EvalReport.from_per_type(per_type, counts, strict_filtering=strict)


def format_report(report: EvalReport) -> str:
    """Aligned ASCII table in the canonical column order."""
    columns = [name.upper() for name in CATALOG] + ["A_P", "A_N"]
    values = []
    for name in CATALOG:
        v = report.per_type.get(name)
        values.append("--" if v is None else f"{v:.3f}")
    for v in (report.a_p, report.a_n):
        values.append("--" if v is None else f"{v:.3f}")
    widths = [max(len(c), len(v)) for c, v in zip(columns, values)]
    header = "  ".join(c.rjust(w) for c, w in zip(columns, widths))
    row = "  ".join(v.rjust(w) for v, w in zip(values, widths))
    return header + "\n" + row + "\n"
