"""Closed generate-judge-revise loop over one source question.

Each pass regenerates a fresh batch of candidates conditioned on the
controller's latest revision instructions, scores every candidate with the
judge panel, keeps the best seen so far across passes, and stops as soon
as the best reaches the acceptance threshold or the pass budget runs out.
The controller turns failed measurements into tiered instructions:
fidelity and factual problems first, modal-balance problems second,
stylistic polish last.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Sequence

from mmqa.gateway import FamilyProfile, GatewayError, ModelGateway, wall_clock
from mmqa.judging import EnsembleFailure, EnsembleVerdict, judge_ensemble
from mmqa.models import (
    DEFAULT_WEIGHTS,
    METRIC_ORDER,
    AgentConfig,
    Metric,
    MmqaCandidate,
    RubricScore,
    RubricWeights,
    TqaRecord,
)
from mmqa.rubric import non_pass_metrics, score_total
from mmqa.transform import ModalTransformer, TransformError

# Tier 1: factual/fidelity failures; tier 2: modal balance; tier 3: polish.
_METRIC_TIERS: dict[Metric, int] = {
    Metric.IL: 1,
    Metric.IA: 1,
    Metric.SC: 1,
    Metric.SQ: 2,
    Metric.SI: 2,
    Metric.RE: 2,
    Metric.NE: 3,
    Metric.TQ: 3,
    Metric.AQ: 3,
}

_METRIC_INSTRUCTIONS: dict[Metric, str] = {
    Metric.IL: "Restore the missing information: every fact needed to solve the original question "
               "must survive in the modified text or in the image.",
    Metric.IA: "Remove content that cannot be inferred from the original question; introduce no new facts.",
    Metric.SC: "Correct the scientific content of the image: it must be plausible, unambiguous and "
               "factually accurate for the subject area.",
    Metric.SQ: "Move more of the load-bearing information into the image; the modified text alone "
               "must not suffice to solve the question.",
    Metric.SI: "Keep the image from giving the answer away on its own; the text must remain necessary.",
    Metric.RE: "Rebalance the overlap between text and image toward calibrated partial redundancy: "
               "neither full duplication nor zero shared context.",
    Metric.NE: "Rewrite the modified question so it reads fluently and coherently.",
    Metric.TQ: "Regenerate a technically clean image: no artifacts, fractures, noise or distorted glyphs.",
    Metric.AQ: "Improve the composition and layout so the image reads clearly at a glance.",
}

DIVERSITY_HINT = (
    "No blocking issues were raised, but the acceptance bar was not met. "
    "Produce a substantially different batch: vary which content moves into the image "
    "and how the scene is composed."
)


class AgentFailure(Exception):
    """Every candidate of every pass failed to generate or to be judged."""

    def __init__(self, message: str, traces: tuple["IterationTrace", ...]):
        super().__init__(message)
        self.traces = traces


@dataclass(frozen=True)
class FeedbackIssue:
    metric: Metric
    tier: int
    instruction: str
    evidence: tuple[tuple[str, str], ...]  # (judge id, verbatim justification)

    def to_dict(self) -> dict[str, Any]:
        return {
            "metric": self.metric.value,
            "tier": self.tier,
            "instruction": self.instruction,
            "evidence": [[judge, quote] for judge, quote in self.evidence],
        }


@dataclass(frozen=True)
class FeedbackDocument:
    issues: tuple[FeedbackIssue, ...]

    @property
    def empty(self) -> bool:
        return not self.issues

    def render(self) -> str:
        """Deterministic text block handed to the planner on the next pass."""
        lines: list[str] = []
        for i, issue in enumerate(self.issues, start=1):
            lines.append(f"{i}. [{issue.metric.value}, severity {issue.tier}] {issue.instruction}")
            for judge, quote in issue.evidence:
                lines.append(f'   - {judge}: "{quote}"')
        return "\n".join(lines)

    def to_dict(self) -> dict[str, Any]:
        return {"issues": [issue.to_dict() for issue in self.issues]}


def synthesize_feedback(verdicts: Sequence[EnsembleVerdict]) -> FeedbackDocument:
    """Group failed measurements across the batch into one issue per metric.

    Evidence quotes come verbatim from the member justifications of the
    judges that raised the metric; issues are ordered by severity tier,
    then canonical metric order.
    """
    if not verdicts:
        raise ValueError("feedback synthesis requires at least one ensemble verdict")
    evidence: dict[Metric, list[tuple[str, str]]] = {}
    for verdict in verdicts:
        for metric in non_pass_metrics(verdict.predicates):
            entries = evidence.setdefault(metric, [])
            entries.extend(verdict.justifications.get(metric, ()))

    issues = [
        FeedbackIssue(
            metric=metric,
            tier=_METRIC_TIERS[metric],
            instruction=_METRIC_INSTRUCTIONS[metric],
            evidence=tuple(evidence[metric]),
        )
        for metric in sorted(evidence, key=lambda m: (_METRIC_TIERS[m], METRIC_ORDER.index(m)))
    ]
    return FeedbackDocument(issues=tuple(issues))


def select_best(
    batch: Sequence[tuple[MmqaCandidate, RubricScore]]
) -> tuple[int, MmqaCandidate, RubricScore]:
    """Highest presented total wins; ties go to the lowest batch index."""
    if not batch:
        raise ValueError("select_best over an empty batch is undefined")
    best_index = 0
    for i in range(1, len(batch)):
        if batch[i][1].presentation_avg > batch[best_index][1].presentation_avg:
            best_index = i
    candidate, score = batch[best_index]
    return best_index, candidate, score


@dataclass(frozen=True)
class IterationTrace:
    index: int
    candidate_ids: tuple[str, ...]
    candidate_scores: tuple[float, ...]  # presented totals, aligned with candidate_ids
    failed_candidates: tuple[str, ...]
    best_candidate_id: str | None
    best_score_current: float | None
    global_best_id: str | None
    global_best_score: float | None
    feedback: str | None

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "candidate_ids": list(self.candidate_ids),
            "candidate_scores": list(self.candidate_scores),
            "failed_candidates": list(self.failed_candidates),
            "best_candidate_id": self.best_candidate_id,
            "best_score_current": self.best_score_current,
            "global_best_id": self.global_best_id,
            "global_best_score": self.global_best_score,
            "feedback": self.feedback,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "IterationTrace":
        return cls(
            index=int(data["index"]),
            candidate_ids=tuple(data.get("candidate_ids", ())),
            candidate_scores=tuple(float(s) for s in data.get("candidate_scores", ())),
            failed_candidates=tuple(data.get("failed_candidates", ())),
            best_candidate_id=data.get("best_candidate_id"),
            best_score_current=data.get("best_score_current"),
            global_best_id=data.get("global_best_id"),
            global_best_score=data.get("global_best_score"),
            feedback=data.get("feedback"),
        )


@dataclass(frozen=True)
class EvaluatedCandidate:
    candidate: MmqaCandidate
    score: RubricScore
    verdict: EnsembleVerdict


@dataclass(frozen=True)
class AgentResult:
    status: str  # "pass" | "exhausted"
    candidate: MmqaCandidate
    score: RubricScore
    traces: tuple[IterationTrace, ...]
    evaluated: tuple[EvaluatedCandidate, ...]

    @property
    def iterations(self) -> int:
        return len(self.traces)


class RefinementLoop:
    """Planner / judge-panel / controller loop for one record at a time."""

    def __init__(
        self,
        gateway: ModelGateway,
        planner: FamilyProfile,
        judges: Sequence[FamilyProfile],
        config: AgentConfig = AgentConfig(),
        weights: RubricWeights = DEFAULT_WEIGHTS,
        planner_temperature: float = 0.7,
        judge_temperature: float = 0.0,
        clock=wall_clock,
        checkpoint: Callable[[IterationTrace], None] | None = None,
    ):
        if len(judges) != config.ensemble_size:
            raise ValueError(f"{len(judges)} judges supplied but ensemble_size is {config.ensemble_size}")
        self.gateway = gateway
        self.planner = planner
        self.judges = tuple(judges)
        self.config = config
        self.weights = weights
        self.judge_temperature = judge_temperature
        self.transformer = ModalTransformer(gateway, temperature=planner_temperature, clock=clock)
        self._checkpoint = checkpoint

    def run(self, tqa: TqaRecord) -> AgentResult:
        config = self.config
        feedback_text: str | None = None
        best_candidate: MmqaCandidate | None = None
        best_score: RubricScore | None = None
        best_presented = -math.inf
        traces: list[IterationTrace] = []
        evaluated: list[EvaluatedCandidate] = []

        for iteration in range(1, config.max_iterations + 1):
            batch: list[EvaluatedCandidate] = []
            failures: list[str] = []
            for k in range(config.candidates_per_iteration):
                try:
                    candidate = self.transformer.transform(
                        tqa, feedback_text, self.planner, iteration=iteration, candidate_index=k
                    )
                except (TransformError, GatewayError) as err:
                    failures.append(f"candidate {k}: {err}")
                    continue
                try:
                    verdict = judge_ensemble(
                        candidate, tqa, self.judges, self.gateway, temperature=self.judge_temperature
                    )
                except (EnsembleFailure, GatewayError) as err:
                    failures.append(f"{candidate.id}: {err}")
                    continue
                batch.append(EvaluatedCandidate(candidate, score_total(verdict.predicates, self.weights), verdict))

            evaluated.extend(batch)

            best_current_id: str | None = None
            best_current: float | None = None
            if batch:
                _, current_candidate, current_score = select_best([(e.candidate, e.score) for e in batch])
                best_current_id = current_candidate.id
                best_current = current_score.presentation_avg
                if current_score.presentation_avg > best_presented:
                    best_presented = current_score.presentation_avg
                    best_candidate = current_candidate
                    best_score = current_score

            accepted = best_presented >= config.tau
            feedback_out: str | None = None
            if not accepted:
                if batch:
                    document = synthesize_feedback([e.verdict for e in batch])
                    feedback_out = DIVERSITY_HINT if document.empty else document.render()
                    feedback_text = feedback_out
                else:
                    # Nothing to learn from this pass; carry the last instructions forward.
                    feedback_out = feedback_text

            trace = IterationTrace(
                index=iteration,
                candidate_ids=tuple(e.candidate.id for e in batch),
                candidate_scores=tuple(e.score.presentation_avg for e in batch),
                failed_candidates=tuple(failures),
                best_candidate_id=best_current_id,
                best_score_current=best_current,
                global_best_id=best_candidate.id if best_candidate else None,
                global_best_score=best_presented if best_candidate else None,
                feedback=feedback_out,
            )
            traces.append(trace)
            if self._checkpoint is not None:
                self._checkpoint(trace)
            if accepted:
                break

        if best_candidate is None or best_score is None:
            raise AgentFailure(
                f"no candidate of {tqa.id} survived generation and judging in "
                f"{config.max_iterations} iterations",
                traces=tuple(traces),
            )
        status = "pass" if best_presented >= config.tau else "exhausted"
        return AgentResult(
            status=status,
            candidate=best_candidate,
            score=best_score,
            traces=tuple(traces),
            evaluated=tuple(evaluated),
        )
