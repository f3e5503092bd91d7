"""Scoring rules for transformed question-image pairs.

Three principles are computed from the nine raw measurements:

* information consistency: the complement of the violation rate of the
  loss/addition pair, ``1 - (loss + addition) / 2``;
* cross-modal integration: ``((1 - solvable_text) + (1 - solvable_image)
  + beta[redundancy]) / 3``, where beta maps the overlap category to a
  weight (defaults: partial 0.75, none 0.25, complete 0);
* standalone quality: the mean pass rate of the four text/image quality
  checks.

The total is the alpha-weighted sum of the three principles, kept on
[0, 1] internally and multiplied by 100 only for presentation. Under the
default weights the attainable maximum is exactly 0.975 (97.5 presented)
because the best redundancy category carries beta 0.75, not 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

from mmqa.models import (
    DEFAULT_WEIGHTS,
    METRIC_ORDER,
    Metric,
    PredicateVector,
    Redundancy,
    RubricScore,
    RubricWeights,
)


def score_ic(vector: PredicateVector) -> float:
    """Information consistency: 1 minus the fraction of violated fidelity checks."""
    violations = int(vector.info_loss) + int(vector.info_add)
    return 1.0 - violations / 2.0


def score_cm(vector: PredicateVector, weights: RubricWeights = DEFAULT_WEIGHTS) -> float:
    """Cross-modal integration: single-modal solvability is the failure direction."""
    return (
        (1.0 - int(vector.solvable_text))
        + (1.0 - int(vector.solvable_image))
        + weights.beta(vector.redundancy)
    ) / 3.0


def score_qt(vector: PredicateVector) -> float:
    """Standalone quality: mean pass rate of the four quality checks."""
    passes = int(vector.natural) + int(vector.technical) + int(vector.aesthetic) + int(vector.semantic)
    return passes / 4.0


def score_total(vector: PredicateVector, weights: RubricWeights = DEFAULT_WEIGHTS) -> RubricScore:
    ic = score_ic(vector)
    cm = score_cm(vector, weights)
    qt = score_qt(vector)
    avg = weights.alpha_ic * ic + weights.alpha_cm * cm + weights.alpha_qt * qt
    return RubricScore(ic=ic, cm=cm, qt=qt, avg=avg)


def pass_rate(scores: Sequence[RubricScore], tau: float) -> float:
    """Fraction of scores whose presented total reaches the threshold.

    The comparison is >=, matching the loop's acceptance test; `tau` is on
    the 0-100 scale.
    """
    if not scores:
        raise ValueError("pass_rate over an empty score list is undefined")
    hits = sum(1 for s in scores if s.presentation_avg >= tau)
    return hits / len(scores)


def metric_pass(vector: PredicateVector, metric: Metric) -> bool:
    """Whether the raw value sits at the desirable pole of its metric.

    Loss, addition and single-modal solvability are failures when true;
    the quality checks are passes when true; redundancy passes only in
    the partial category (the highest-weighted one).
    """
    value = vector.get(metric)
    if metric is Metric.RE:
        return value is Redundancy.PARTIAL
    if metric in (Metric.IL, Metric.IA, Metric.SI, Metric.SQ):
        return not value
    return bool(value)


def non_pass_metrics(vector: PredicateVector) -> list[Metric]:
    """Metrics below their maximum; these require a textual justification."""
    return [m for m in METRIC_ORDER if not metric_pass(vector, m)]


def metric_value(vector: PredicateVector, metric: Metric, weights: RubricWeights = DEFAULT_WEIGHTS) -> float:
    """Column contribution of one item: pass indicator, or beta for redundancy."""
    if metric is Metric.RE:
        return weights.beta(vector.redundancy)
    return 1.0 if metric_pass(vector, metric) else 0.0


_IC_METRICS = (Metric.IL, Metric.IA)
_CM_METRICS = (Metric.SI, Metric.SQ, Metric.RE)
_QT_METRICS = (Metric.NE, Metric.TQ, Metric.AQ, Metric.SC)


def principles_from_metrics(
    metrics: Mapping[Metric, float], weights: RubricWeights = DEFAULT_WEIGHTS
) -> tuple[float, float, float, float]:
    """Collapse metric columns into (ic, cm, qt, avg).

    Principle columns are unweighted means of their metric columns; the
    total is the alpha-weighted sum. Works on any scale (the published
    tables use 0-100) since the arithmetic is scale-free.
    """
    ic = sum(metrics[m] for m in _IC_METRICS) / len(_IC_METRICS)
    cm = sum(metrics[m] for m in _CM_METRICS) / len(_CM_METRICS)
    qt = sum(metrics[m] for m in _QT_METRICS) / len(_QT_METRICS)
    avg = weights.alpha_ic * ic + weights.alpha_cm * cm + weights.alpha_qt * qt
    return ic, cm, qt, avg


@dataclass(frozen=True)
class AggregateRow:
    """Dataset-level column means: metric pass rates plus principle and total columns."""

    metrics: dict[Metric, float]
    ic: float
    cm: float
    qt: float
    avg: float
    count: int

    def presentation(self) -> dict[str, float]:
        out = {m.value: v * 100.0 for m, v in self.metrics.items()}
        out.update({"IC": self.ic * 100.0, "CM": self.cm * 100.0, "QT": self.qt * 100.0, "AVG": self.avg * 100.0})
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "metrics": {m.value: v for m, v in self.metrics.items()},
            "ic": self.ic,
            "cm": self.cm,
            "qt": self.qt,
            "avg": self.avg,
            "count": self.count,
        }


def aggregate(vectors: Iterable[PredicateVector], weights: RubricWeights = DEFAULT_WEIGHTS) -> AggregateRow:
    """Column means over a batch of complete measurement vectors.

    Because every column is a mean and the total is linear in the
    principle columns, the aggregate total equals the mean of the
    per-item totals.
    """
    items = list(vectors)
    if not items:
        raise ValueError("aggregate over an empty vector list is undefined")
    columns = {
        metric: sum(metric_value(v, metric, weights) for v in items) / len(items)
        for metric in METRIC_ORDER
    }
    ic, cm, qt, avg = principles_from_metrics(columns, weights)
    return AggregateRow(metrics=columns, ic=ic, cm=cm, qt=qt, avg=avg, count=len(items))
