"""Agreement statistics: judge-vs-gold alignment, chance-corrected
inter-annotator agreement, and rank correlations between score dimensions.

The inter-annotator statistic follows the coincidence-matrix formulation:
for each unit with m >= 2 values, every ordered value pair contributes
1/(m-1) to the coincidence count o_ck; with marginals n_c and n = sum n_c,

    observed disagreement  D_o = sum_ck o_ck d2(c,k) / n
    expected disagreement  D_e = sum_ck n_c n_k d2(c,k) / (n (n-1))
    alpha = 1 - D_o / D_e

with d2 the squared distance for the chosen level: 0/1 for nominal data,
and for ordinal data the squared sum of marginals between the two
categories minus half their own, computed on the category order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Hashable, Mapping, Sequence

import numpy as np

from mmqa.models import (
    DEFAULT_WEIGHTS,
    METRIC_FIELDS,
    METRIC_ORDER,
    AnnotationRecord,
    Metric,
    PredicateVector,
    RubricWeights,
)
from mmqa.rubric import principles_from_metrics


class DegenerateDataError(ValueError):
    """Agreement is undefined: fewer than two distinct values, or no pairable units."""


class KeyMismatchError(ValueError):
    def __init__(self, missing_in_verdicts: Sequence[str], missing_in_gold: Sequence[str]):
        parts = []
        if missing_in_verdicts:
            parts.append(f"missing from verdicts: {sorted(missing_in_verdicts)}")
        if missing_in_gold:
            parts.append(f"missing from gold: {sorted(missing_in_gold)}")
        super().__init__("verdicts and gold labels are keyed to different candidates; " + "; ".join(parts))
        self.missing_in_verdicts = tuple(missing_in_verdicts)
        self.missing_in_gold = tuple(missing_in_gold)


def krippendorff_alpha(
    rows: Sequence[Sequence[Hashable | None]], level: str = "nominal"
) -> float:
    """Chance-corrected agreement over an items-by-annotators matrix.

    `None` marks a missing cell; units with fewer than two values are
    skipped. Degenerate inputs (every value identical) raise
    DegenerateDataError rather than reporting perfect agreement.
    """
    if level not in ("nominal", "ordinal"):
        raise ValueError(f"level must be 'nominal' or 'ordinal', got {level!r}")

    units = [[v for v in row if v is not None] for row in rows]
    units = [u for u in units if len(u) >= 2]
    if not units:
        raise DegenerateDataError("no unit carries two or more values")

    if level == "ordinal":
        categories = sorted({v for unit in units for v in unit}, key=float)
    else:
        categories = sorted({v for unit in units for v in unit}, key=repr)
    if len(categories) < 2:
        raise DegenerateDataError("all values identical; agreement is undefined")
    index = {c: i for i, c in enumerate(categories)}
    m = len(categories)

    o = np.zeros((m, m))
    for unit in units:
        weight = 1.0 / (len(unit) - 1)
        for i, a in enumerate(unit):
            for j, b in enumerate(unit):
                if i != j:
                    o[index[a], index[b]] += weight
    marginals = o.sum(axis=1)
    n = marginals.sum()

    d2 = np.zeros((m, m))
    if level == "nominal":
        d2 = 1.0 - np.eye(m)
    else:
        for c in range(m):
            for k in range(m):
                if c == k:
                    continue
                lo, hi = min(c, k), max(c, k)
                span = marginals[lo : hi + 1].sum() - (marginals[c] + marginals[k]) / 2.0
                d2[c, k] = span * span

    observed = float((o * d2).sum()) / n
    expected = float((np.outer(marginals, marginals) * d2).sum()) / (n * (n - 1.0))
    if expected == 0.0:
        raise DegenerateDataError("expected disagreement is zero; agreement is undefined")
    return 1.0 - observed / expected


def average_ranks(values: Sequence[float]) -> np.ndarray:
    """Ranks 1..n with tied values sharing their mean rank."""
    array = np.asarray(values, dtype=float)
    order = np.argsort(array, kind="stable")
    ranks = np.empty(len(array), dtype=float)
    i = 0
    while i < len(array):
        j = i
        while j + 1 < len(array) and array[order[j + 1]] == array[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def srcc(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Rank correlation with average-rank tie handling.

    Returns None when either side is constant (correlation undefined).
    """
    if len(x) != len(y):
        raise ValueError("columns must have equal length")
    if len(x) < 3:
        raise ValueError("rank correlation requires at least 3 items")
    rx = average_ranks(x)
    ry = average_ranks(y)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    sx = float(np.dot(dx, dx))
    sy = float(np.dot(dy, dy))
    if sx == 0.0 or sy == 0.0:
        return None
    return float(np.dot(dx, dy) / np.sqrt(sx * sy))


@dataclass(frozen=True)
class SrccMatrix:
    labels: tuple[str, ...]
    cells: tuple[tuple[float | None, ...], ...]  # None marks undefined pairs

    def to_dict(self) -> dict[str, Any]:
        return {"labels": list(self.labels), "cells": [list(row) for row in self.cells]}


def srcc_matrix(columns: Mapping[str, Sequence[float]]) -> SrccMatrix:
    """Symmetric matrix of pairwise rank correlations; diagonal is 1.

    Pairs involving a constant column are flagged as None, never reported
    as silent zeros.
    """
    labels = tuple(columns.keys())
    if not labels:
        raise ValueError("no columns supplied")
    lengths = {len(columns[label]) for label in labels}
    if len(lengths) != 1:
        raise ValueError("all columns must have the same length")
    cells = []
    for a in labels:
        row: list[float | None] = []
        for b in labels:
            if a == b:
                row.append(1.0)
            else:
                row.append(srcc(columns[a], columns[b]))
        cells.append(tuple(row))
    return SrccMatrix(labels=labels, cells=tuple(cells))


@dataclass(frozen=True)
class AlignmentRow:
    """Per-judge agreement with gold: metric columns plus the principle columns."""

    judge_id: str
    metrics: dict[Metric, float]
    ic: float
    cm: float
    qt: float
    avg: float
    rank: int | None = None

    def presentation(self) -> dict[str, float]:
        out = {m.value: v * 100.0 for m, v in self.metrics.items()}
        out.update({"IC": self.ic * 100.0, "CM": self.cm * 100.0, "QT": self.qt * 100.0, "AVG": self.avg * 100.0})
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "judge_id": self.judge_id,
            "metrics": {m.value: v for m, v in self.metrics.items()},
            "ic": self.ic,
            "cm": self.cm,
            "qt": self.qt,
            "avg": self.avg,
            "rank": self.rank,
        }


def agreement(
    judge_id: str,
    verdicts: Mapping[str, PredicateVector],
    gold: Mapping[str, PredicateVector],
    weights: RubricWeights = DEFAULT_WEIGHTS,
) -> AlignmentRow:
    """Exact per-measurement agreement rate against the gold consensus.

    The redundancy category must match exactly; no adjacent-category
    credit. Principle columns reuse the aggregation arithmetic, so the
    row composes exactly like a published alignment table row.
    """
    missing_in_verdicts = sorted(set(gold) - set(verdicts))
    missing_in_gold = sorted(set(verdicts) - set(gold))
    if missing_in_verdicts or missing_in_gold:
        raise KeyMismatchError(missing_in_verdicts, missing_in_gold)
    if not gold:
        raise ValueError("agreement over an empty candidate set is undefined")

    keys = sorted(gold)
    columns = {
        metric: sum(1.0 for key in keys if verdicts[key].get(metric) == gold[key].get(metric)) / len(keys)
        for metric in METRIC_ORDER
    }
    ic, cm, qt, avg = principles_from_metrics(columns, weights)
    return AlignmentRow(judge_id=judge_id, metrics=columns, ic=ic, cm=cm, qt=qt, avg=avg)


def alignment_table(
    per_judge: Mapping[str, Mapping[str, PredicateVector]],
    gold: Mapping[str, PredicateVector],
    weights: RubricWeights = DEFAULT_WEIGHTS,
) -> list[AlignmentRow]:
    """All judges ranked by weighted agreement, best first."""
    rows = [agreement(judge_id, verdicts, gold, weights) for judge_id, verdicts in per_judge.items()]
    rows.sort(key=lambda r: (-r.avg, r.judge_id))
    return [
        AlignmentRow(
            judge_id=row.judge_id,
            metrics=row.metrics,
            ic=row.ic,
            cm=row.cm,
            qt=row.qt,
            avg=row.avg,
            rank=i + 1,
        )
        for i, row in enumerate(rows)
    ]


@dataclass(frozen=True)
class GoldLabel:
    """Human consensus measurement vector for one candidate."""

    candidate_ref: str
    consensus: PredicateVector
    contributing: tuple[str, ...]  # annotation ids
    resolution: str  # "agreement" | "third-annotator"

    def to_dict(self) -> dict[str, Any]:
        return {
            "candidate_ref": self.candidate_ref,
            "consensus": self.consensus.to_dict(),
            "contributing": list(self.contributing),
            "resolution": self.resolution,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "GoldLabel":
        return cls(
            candidate_ref=str(data["candidate_ref"]),
            consensus=PredicateVector.from_dict(data["consensus"]),
            contributing=tuple(data.get("contributing", ())),
            resolution=str(data.get("resolution", "agreement")),
        )


@dataclass(frozen=True)
class GoldResolution:
    status: str  # "resolved" | "needs-third" | "unresolvable"
    gold: GoldLabel | None
    disputed: tuple[Metric, ...]


def resolve_gold(annotations: Sequence[AnnotationRecord]) -> GoldResolution:
    """Dual-annotation consensus with per-metric third-annotator tie-breaks.

    The first two annotations are the primaries. Binary disagreements are
    always settled by the third annotator (its value necessarily matches
    one primary); a redundancy category on which the third matches neither
    primary leaves the item unresolvable for human review. Consensus
    values always trace back to at least one annotation.
    """
    if len(annotations) < 2:
        raise ValueError("gold resolution requires at least two annotations")
    candidates = {a.candidate_ref for a in annotations}
    if len(candidates) != 1:
        raise ValueError(f"annotations span multiple candidates: {sorted(candidates)}")
    candidate_ref = annotations[0].candidate_ref

    first, second = annotations[0], annotations[1]
    third = annotations[2] if len(annotations) >= 3 else None

    disputed = tuple(
        m for m in METRIC_ORDER if first.predicates.get(m) != second.predicates.get(m)
    )
    if not disputed:
        gold = GoldLabel(
            candidate_ref=candidate_ref,
            consensus=first.predicates,
            contributing=(first.annotation_id, second.annotation_id),
            resolution="agreement",
        )
        return GoldResolution(status="resolved", gold=gold, disputed=())

    if third is None:
        return GoldResolution(status="needs-third", gold=None, disputed=disputed)

    values: dict[str, Any] = {}
    unresolved: list[Metric] = []
    for metric in METRIC_ORDER:
        a, b = first.predicates.get(metric), second.predicates.get(metric)
        if a == b:
            values[METRIC_FIELDS[metric]] = a
            continue
        t = third.predicates.get(metric)
        if t == a or t == b:
            values[METRIC_FIELDS[metric]] = t
        else:
            unresolved.append(metric)

    if unresolved:
        return GoldResolution(status="unresolvable", gold=None, disputed=tuple(unresolved))
    gold = GoldLabel(
        candidate_ref=candidate_ref,
        consensus=PredicateVector(**values),
        contributing=(first.annotation_id, second.annotation_id, third.annotation_id),
        resolution="third-annotator",
    )
    return GoldResolution(status="resolved", gold=gold, disputed=disputed)
