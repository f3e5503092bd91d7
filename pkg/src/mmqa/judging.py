"""Staged review protocol: nine prompts per judge, one measurement each.

Stage order and answer tags are fixed; the stage table is a bijection onto
the nine rubric metrics. Answers are parsed with a tolerant grammar
(case-insensitive, whitespace- and bracket-forgiving); a stage that fails
to parse is re-asked once, after which the whole verdict is excluded from
ensemble aggregation. Ensembles aggregate booleans by strict majority and
the redundancy category by the median of its ordinal codes.
"""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Sequence

from mmqa.gateway import ChatRequest, FamilyProfile, ModelGateway
from mmqa.models import (
    DEFAULT_WEIGHTS,
    METRIC_FIELDS,
    JudgeVerdict,
    Metric,
    MmqaCandidate,
    ParseStatus,
    PredicateVector,
    Redundancy,
    RubricScore,
    RubricWeights,
    StageTranscript,
    TqaRecord,
)
from mmqa.prompting import load_prompt
from mmqa.rubric import score_total


class StageParseError(Exception):
    pass


class EnsembleFailure(Exception):
    """Too few clean verdicts, or no decisive vote, for an ensemble result."""


@dataclass(frozen=True)
class StageSpec:
    """One protocol stage: its metric, answer tag, and prompt resource."""

    index: int
    metric: Metric
    tag: str
    kind: str  # "yesno" | "code"
    template: str
    needs_options: bool = False


STAGES: tuple[StageSpec, ...] = (
    StageSpec(1, Metric.IL, "a", "yesno", "judge_stage1_v1.txt"),
    StageSpec(2, Metric.IA, "b", "yesno", "judge_stage2_v1.txt"),
    StageSpec(3, Metric.SI, "c", "yesno", "judge_stage3_v1.txt", needs_options=True),
    StageSpec(4, Metric.SQ, "d", "yesno", "judge_stage4_v1.txt", needs_options=True),
    StageSpec(5, Metric.RE, "e", "code", "judge_stage5_v1.txt"),
    StageSpec(6, Metric.NE, "f", "yesno", "judge_stage6_v1.txt"),
    StageSpec(7, Metric.TQ, "h1", "yesno", "judge_stage7_v1.txt"),
    StageSpec(8, Metric.AQ, "h2", "yesno", "judge_stage8_v1.txt"),
    StageSpec(9, Metric.SC, "i", "yesno", "judge_stage9_v1.txt"),
)

_JUSTIFICATION_RE = re.compile(r"^\s*\{?\s*l\s*[\)\].:]\s*(.*)$", re.IGNORECASE | re.MULTILINE)

RETRY_SUFFIX = (
    "\n\nYour previous reply did not follow the required format. "
    "Answer strictly in the required format."
)


def _answer_re(tag: str, kind: str) -> re.Pattern[str]:
    body = r"(yes|no)" if kind == "yesno" else r"([012])"
    return re.compile(
        rf"^\s*\{{?\s*{re.escape(tag)}\s*[\)\].:]\s*\[?\s*{body}\b",
        re.IGNORECASE | re.MULTILINE,
    )


_ANSWER_RES = {(s.tag, s.kind): _answer_re(s.tag, s.kind) for s in STAGES}


def parse_stage_response(stage: StageSpec, text: str) -> tuple[bool | Redundancy, str]:
    """Extract (raw answer, justification) from a stage reply.

    The raw answer keeps protocol polarity: yes at stage 1 means loss
    exists, yes at stage 6 means the text passes. Justification is
    optional and defaults to empty.
    """
    match = _ANSWER_RES[(stage.tag, stage.kind)].search(text)
    if match is None:
        raise StageParseError(
            f"stage {stage.index} ({stage.metric.value}): no '{stage.tag})' answer found"
        )
    token = match.group(1).lower()
    value: bool | Redundancy
    if stage.kind == "yesno":
        value = token == "yes"
    else:
        value = Redundancy.from_code(int(token))

    justification = ""
    jmatch = _JUSTIFICATION_RE.search(text)
    if jmatch:
        tail = text[jmatch.start(1):].strip()
        tail = tail.rstrip("}").strip()
        if tail.startswith("[") and tail.endswith("]"):
            tail = tail[1:-1].strip()
        justification = tail
    return value, justification


def build_stage_prompt(
    stage: StageSpec, source: TqaRecord, candidate: MmqaCandidate
) -> tuple[str, str]:
    prompt = load_prompt(stage.template)
    image_url = ", ".join(img.image_ref for img in candidate.images)
    slots: dict[str, str] = {
        "question": source.question,
        "modified_question": candidate.modified_question,
        "image_url": image_url,
    }
    if stage.needs_options:
        # The options block carries the original question text; that is how
        # the upstream protocol fills this slot and we keep it verbatim.
        if source.options:
            slots["options_block"] = f'(if have) Options:\n"{source.question}"\n'
        else:
            slots["options_block"] = ""
    return prompt.system, prompt.render_user(**slots)


def judge_one(
    candidate: MmqaCandidate,
    source: TqaRecord,
    judge: FamilyProfile,
    gateway: ModelGateway,
    temperature: float = 0.0,
) -> JudgeVerdict:
    """Run all nine stages in order against one judge model."""
    values: dict[Metric, bool | Redundancy] = {}
    justifications: dict[Metric, str] = {}
    transcripts: list[StageTranscript] = []
    status: dict[int, ParseStatus] = {}
    image_refs = tuple(img.image_ref for img in candidate.images)

    for stage in STAGES:
        system, user = build_stage_prompt(stage, source, candidate)
        request = ChatRequest(system=system, user=user, image_refs=image_refs, temperature=temperature)
        response = gateway.complete(judge, request)
        transcripts.append(StageTranscript(stage.index, system, user, response.text))
        try:
            value, justification = parse_stage_response(stage, response.text)
            status[stage.index] = ParseStatus.CLEAN
        except StageParseError:
            retry = ChatRequest(
                system=system, user=user + RETRY_SUFFIX, image_refs=image_refs, temperature=temperature
            )
            retry_response = gateway.complete(judge, retry)
            transcripts.append(StageTranscript(stage.index, system, retry.user, retry_response.text))
            try:
                value, justification = parse_stage_response(stage, retry_response.text)
                status[stage.index] = ParseStatus.REPAIRED
            except StageParseError:
                status[stage.index] = ParseStatus.FAILED
                continue
        values[stage.metric] = value
        if justification:
            justifications[stage.metric] = justification

    predicates = None
    if all(status[s.index] is not ParseStatus.FAILED for s in STAGES):
        predicates = PredicateVector(**{METRIC_FIELDS[m]: values[m] for m in values})
    return JudgeVerdict(
        judge_id=judge.family_name,
        candidate_ref=candidate.id,
        predicates=predicates,
        justifications=justifications,
        transcripts=tuple(transcripts),
        parse_status=status,
    )


def majority_bool(votes: Sequence[bool]) -> bool | None:
    """Strict majority; None when the vote is tied (even membership only)."""
    yes = sum(1 for v in votes if v)
    no = len(votes) - yes
    if yes == no:
        return None
    return yes > no


def median_code(codes: Sequence[int]) -> int | None:
    """Categorical median of ordinal codes; None when no single category is the median."""
    ordered = sorted(codes)
    n = len(ordered)
    if n % 2 == 1:
        return ordered[n // 2]
    low, high = ordered[n // 2 - 1], ordered[n // 2]
    return low if low == high else None


@dataclass(frozen=True)
class EnsembleVerdict:
    """Aggregated view over an odd panel of judges for one candidate."""

    candidate_ref: str
    members: tuple[JudgeVerdict, ...]
    predicates: PredicateVector
    votes: dict[Metric, dict[str, int]]
    justifications: dict[Metric, tuple[tuple[str, str], ...]]
    excluded: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "candidate_ref": self.candidate_ref,
            "members": [m.to_dict() for m in self.members],
            "predicates": self.predicates.to_dict(),
            "votes": {m.value: dict(v) for m, v in self.votes.items()},
            "justifications": {
                m.value: [[judge, text] for judge, text in pairs]
                for m, pairs in self.justifications.items()
            },
            "excluded": list(self.excluded),
        }


def aggregate_verdicts(verdicts: Sequence[JudgeVerdict], total_members: int | None = None) -> EnsembleVerdict:
    """Majority/median aggregation over the clean members of a panel.

    `total_members` is the panel size before exclusions; at least half of
    it (rounded up) must have survived.
    """
    total = total_members if total_members is not None else len(verdicts)
    if total < 1:
        raise EnsembleFailure("ensemble requires at least one judge")
    clean = [v for v in verdicts if v.clean]
    required = (total + 1) // 2
    if len(clean) < required:
        raise EnsembleFailure(
            f"only {len(clean)} of {total} verdicts parsed cleanly; need at least {required}"
        )

    values: dict[Metric, bool | Redundancy] = {}
    votes: dict[Metric, dict[str, int]] = {}
    for metric in Metric:
        member_values = [v.predicates.get(metric) for v in clean]  # type: ignore[union-attr]
        if metric is Metric.RE:
            codes = [value.code for value in member_values]  # type: ignore[union-attr]
            votes[metric] = {str(c): codes.count(c) for c in sorted(set(codes))}
            decided = median_code(codes)
            if decided is None:
                raise EnsembleFailure(f"no categorical median for {metric.value} over codes {sorted(codes)}")
            values[metric] = Redundancy.from_code(decided)
        else:
            bools = [bool(value) for value in member_values]
            votes[metric] = {"true": sum(bools), "false": len(bools) - sum(bools)}
            majority = majority_bool(bools)
            if majority is None:
                raise EnsembleFailure(f"tied vote on {metric.value} with {len(bools)} members")
            values[metric] = majority

    digest: dict[Metric, tuple[tuple[str, str], ...]] = {}
    for metric in Metric:
        entries = [
            (v.judge_id, v.justifications[metric])
            for v in clean
            if metric in v.justifications and v.justifications[metric]
        ]
        if entries:
            digest[metric] = tuple(entries)

    return EnsembleVerdict(
        candidate_ref=clean[0].candidate_ref,
        members=tuple(verdicts),
        predicates=PredicateVector(**{METRIC_FIELDS[m]: values[m] for m in values}),
        votes=votes,
        justifications=digest,
        excluded=tuple(v.judge_id for v in verdicts if not v.clean),
    )


def judge_ensemble(
    candidate: MmqaCandidate,
    source: TqaRecord,
    judges: Sequence[FamilyProfile],
    gateway: ModelGateway,
    temperature: float = 0.0,
    max_workers: int = 1,
) -> EnsembleVerdict:
    """Fan out one judge_one per panel member and aggregate.

    Judges run sequentially by default so scripted runs replay exactly;
    raise `max_workers` for real providers.
    """
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            futures = [pool.submit(judge_one, candidate, source, judge, gateway, temperature) for judge in judges]
            verdicts = [f.result() for f in futures]
    else:
        verdicts = [judge_one(candidate, source, judge, gateway, temperature) for judge in judges]
    return aggregate_verdicts(verdicts, total_members=len(judges))


def score_ensemble(verdict: EnsembleVerdict, weights: RubricWeights = DEFAULT_WEIGHTS) -> RubricScore:
    return score_total(verdict.predicates, weights)
