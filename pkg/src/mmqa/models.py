"""Shared domain records exchanged between the pipeline stages.

Everything here is an immutable value object with a JSON round-trip
(`to_dict` / `from_dict`); the canonical on-disk encoding is one object
per line (JSONL). Candidate interchange keeps the exact field names used
by the planner output contract (`modified_question`, `images[].placeholder`,
`images[].original_text`, `images[].image_description`, `explanation`).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Iterable, Mapping

# Image descriptions must stay strictly below this many characters.
MAX_IMAGE_DESCRIPTION = 1024

_PLACEHOLDER_RE = re.compile(r"^\[IMAGE_([1-9][0-9]*)\]$")

ALPHA_SUM_TOLERANCE = 1e-12


class Tier(str, Enum):
    EXPERT = "Expert"
    GRAD = "Grad"


class Redundancy(str, Enum):
    """Degree of information overlap between text and image."""

    NONE = "None"
    PARTIAL = "Partial"
    COMPLETE = "Complete"

    @property
    def code(self) -> int:
        """Ordinal judge-protocol code: 0 none, 1 partial, 2 complete."""
        return _REDUNDANCY_CODES[self]

    @classmethod
    def from_code(cls, code: int) -> "Redundancy":
        for value, c in _REDUNDANCY_CODES.items():
            if c == int(code):
                return value
        raise ValueError(f"redundancy code must be 0, 1 or 2, got {code!r}")

    @classmethod
    def from_human_scale(cls, value: int) -> "Redundancy":
        """Map the ordinal human annotation scale (1 / 50 / 0) onto categories."""
        mapping = {1: cls.NONE, 50: cls.PARTIAL, 0: cls.COMPLETE}
        try:
            return mapping[int(value)]
        except KeyError:
            raise ValueError(f"human redundancy scale value must be 1, 50 or 0, got {value!r}") from None


_REDUNDANCY_CODES = {Redundancy.NONE: 0, Redundancy.PARTIAL: 1, Redundancy.COMPLETE: 2}


class Metric(str, Enum):
    """The nine rubric measurements, in canonical column order."""

    IL = "IL"  # information loss
    IA = "IA"  # information addition
    SI = "SI"  # solvable from image alone
    SQ = "SQ"  # solvable from text alone
    RE = "RE"  # redundancy-synergy
    NE = "NE"  # natural expression
    TQ = "TQ"  # technical quality
    AQ = "AQ"  # aesthetic quality
    SC = "SC"  # semantic clarity


# Metric -> PredicateVector attribute carrying its raw value.
METRIC_FIELDS: dict[Metric, str] = {
    Metric.IL: "info_loss",
    Metric.IA: "info_add",
    Metric.SI: "solvable_image",
    Metric.SQ: "solvable_text",
    Metric.RE: "redundancy",
    Metric.NE: "natural",
    Metric.TQ: "technical",
    Metric.AQ: "aesthetic",
    Metric.SC: "semantic",
}

METRIC_ORDER: tuple[Metric, ...] = tuple(Metric)


class ParseStatus(str, Enum):
    CLEAN = "Clean"
    REPAIRED = "Repaired"
    FAILED = "Failed"


def canonical_json(value: Any) -> str:
    """Stable JSON encoding used for traces and checksummable records."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def dump_jsonl(records: Iterable[Mapping[str, Any]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(canonical_json(record) + "\n")


def load_jsonl(path) -> list[dict[str, Any]]:
    out: list[dict[str, Any]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


@dataclass(frozen=True)
class TqaRecord:
    """Source text-only question with its answer and split metadata."""

    id: str
    source: str
    subject: str
    tier: Tier
    question: str
    options: tuple[str, ...] = ()
    answer: str = ""
    visualizable: bool | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "source": self.source,
            "subject": self.subject,
            "tier": self.tier.value,
            "question": self.question,
            "options": list(self.options),
            "answer": self.answer,
            "visualizable": self.visualizable,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TqaRecord":
        return cls(
            id=str(data["id"]),
            source=str(data.get("source", "")),
            subject=str(data.get("subject", "")),
            tier=Tier(data["tier"]),
            question=str(data["question"]),
            options=tuple(str(o) for o in data.get("options", []) or []),
            answer=str(data.get("answer", "")),
            visualizable=data.get("visualizable"),
        )


@dataclass(frozen=True)
class ImageSpec:
    """One planned image: placeholder token, removed text, and the prompt for the image model."""

    placeholder: str
    original_text: str
    image_description: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "placeholder": self.placeholder,
            "original_text": self.original_text,
            "image_description": self.image_description,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ImageSpec":
        return cls(
            placeholder=str(data["placeholder"]),
            original_text=str(data["original_text"]),
            image_description=str(data["image_description"]),
        )


@dataclass(frozen=True)
class CandidateImage:
    """An ImageSpec joined with the content hash of its rendered artifact."""

    spec: ImageSpec
    image_ref: str

    def to_dict(self) -> dict[str, Any]:
        out = self.spec.to_dict()
        out["image_ref"] = self.image_ref
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CandidateImage":
        return cls(spec=ImageSpec.from_dict(data), image_ref=str(data.get("image_ref", "")))


@dataclass(frozen=True)
class GenerationMeta:
    family: str
    iteration: int
    candidate_index: int
    created_at: str
    temperature: float | None = None
    seed: int | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "family": self.family,
            "iteration": self.iteration,
            "candidate_index": self.candidate_index,
            "created_at": self.created_at,
            "temperature": self.temperature,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "GenerationMeta":
        return cls(
            family=str(data.get("family", "")),
            iteration=int(data.get("iteration", 0)),
            candidate_index=int(data.get("candidate_index", 0)),
            created_at=str(data.get("created_at", "")),
            temperature=data.get("temperature"),
            seed=data.get("seed"),
        )


@dataclass(frozen=True)
class MmqaCandidate:
    """A transformed question: modified text with placeholders plus rendered images."""

    id: str
    source_id: str
    modified_question: str
    images: tuple[CandidateImage, ...]
    explanation: str
    generation_meta: GenerationMeta

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "source_id": self.source_id,
            "modified_question": self.modified_question,
            "images": [img.to_dict() for img in self.images],
            "explanation": self.explanation,
            "generation_meta": self.generation_meta.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MmqaCandidate":
        return cls(
            id=str(data["id"]),
            source_id=str(data["source_id"]),
            modified_question=str(data["modified_question"]),
            images=tuple(CandidateImage.from_dict(i) for i in data.get("images", [])),
            explanation=str(data.get("explanation", "")),
            generation_meta=GenerationMeta.from_dict(data.get("generation_meta", {})),
        )


@dataclass(frozen=True)
class Violation:
    """One failed candidate rule; `field` names the offending location."""

    field: str
    rule: str
    message: str

    def to_dict(self) -> dict[str, str]:
        return {"field": self.field, "rule": self.rule, "message": self.message}


def validate_candidate(
    candidate: MmqaCandidate,
    ref_exists: Callable[[str], bool] | None = None,
) -> list[Violation]:
    """Report every violated candidate invariant; never raises.

    `ref_exists` optionally checks image refs against an artifact store;
    without it only structural rules are applied.
    """
    violations: list[Violation] = []
    if not candidate.modified_question.strip():
        violations.append(Violation("modified_question", "non-empty", "modified question is empty"))
    if not candidate.images:
        violations.append(Violation("images", "non-empty", "candidate declares no images"))

    seen: set[str] = set()
    for i, image in enumerate(candidate.images):
        spec = image.spec
        loc = f"images[{i}]"
        if not _PLACEHOLDER_RE.match(spec.placeholder):
            violations.append(
                Violation(f"{loc}.placeholder", "placeholder-grammar",
                          f"placeholder {spec.placeholder!r} does not match [IMAGE_k] with k >= 1")
            )
        if spec.placeholder in seen:
            violations.append(
                Violation(f"{loc}.placeholder", "placeholder-duplicate",
                          f"placeholder {spec.placeholder!r} declared more than once")
            )
        seen.add(spec.placeholder)
        if len(spec.image_description) >= MAX_IMAGE_DESCRIPTION:
            violations.append(
                Violation(f"{loc}.image_description", "max-length",
                          f"image description has {len(spec.image_description)} characters; "
                          f"must be strictly less than {MAX_IMAGE_DESCRIPTION}")
            )
        count = candidate.modified_question.count(spec.placeholder)
        if count != 1:
            violations.append(
                Violation("modified_question", "placeholder-count",
                          f"placeholder {spec.placeholder!r} occurs {count} times; expected exactly once")
            )
        if not image.image_ref:
            violations.append(Violation(f"{loc}.image_ref", "ref-missing", "image ref is empty"))
        elif ref_exists is not None and not ref_exists(image.image_ref):
            violations.append(
                Violation(f"{loc}.image_ref", "ref-unresolvable",
                          f"image ref {image.image_ref!r} does not resolve in the artifact store")
            )
    return violations


@dataclass(frozen=True)
class PredicateVector:
    """Raw answers to the nine rubric measurements for one candidate.

    Booleans store the literal predicate truth value ("is there loss?" ->
    True means loss exists); desirability polarity is applied by the
    scoring rules, not here.
    """

    info_loss: bool
    info_add: bool
    solvable_text: bool
    solvable_image: bool
    redundancy: Redundancy
    natural: bool
    technical: bool
    aesthetic: bool
    semantic: bool

    def get(self, metric: Metric) -> bool | Redundancy:
        return getattr(self, METRIC_FIELDS[metric])

    def to_dict(self) -> dict[str, Any]:
        return {
            "info_loss": self.info_loss,
            "info_add": self.info_add,
            "solvable_text": self.solvable_text,
            "solvable_image": self.solvable_image,
            "redundancy": self.redundancy.value,
            "natural": self.natural,
            "technical": self.technical,
            "aesthetic": self.aesthetic,
            "semantic": self.semantic,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PredicateVector":
        return cls(
            info_loss=bool(data["info_loss"]),
            info_add=bool(data["info_add"]),
            solvable_text=bool(data["solvable_text"]),
            solvable_image=bool(data["solvable_image"]),
            redundancy=Redundancy(data["redundancy"]),
            natural=bool(data["natural"]),
            technical=bool(data["technical"]),
            aesthetic=bool(data["aesthetic"]),
            semantic=bool(data["semantic"]),
        )


@dataclass(frozen=True)
class RubricWeights:
    """Principle weights (alpha) and redundancy category weights (beta)."""

    alpha_ic: float = 0.3
    alpha_cm: float = 0.3
    alpha_qt: float = 0.4
    beta_none: float = 0.25
    beta_partial: float = 0.75
    beta_complete: float = 0.0

    def __post_init__(self) -> None:
        for name in ("alpha_ic", "alpha_cm", "alpha_qt", "beta_none", "beta_partial", "beta_complete"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
        total = self.alpha_ic + self.alpha_cm + self.alpha_qt
        if abs(total - 1.0) > ALPHA_SUM_TOLERANCE:
            raise ValueError(f"alpha weights must sum to 1 (got {total!r})")

    def beta(self, redundancy: Redundancy) -> float:
        if redundancy is Redundancy.NONE:
            return self.beta_none
        if redundancy is Redundancy.PARTIAL:
            return self.beta_partial
        return self.beta_complete

    def to_dict(self) -> dict[str, float]:
        return {
            "alpha_ic": self.alpha_ic,
            "alpha_cm": self.alpha_cm,
            "alpha_qt": self.alpha_qt,
            "beta_none": self.beta_none,
            "beta_partial": self.beta_partial,
            "beta_complete": self.beta_complete,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RubricWeights":
        return cls(**{k: float(v) for k, v in data.items()})


DEFAULT_WEIGHTS = RubricWeights()


@dataclass(frozen=True)
class RubricScore:
    """Principle scores and their weighted total, on [0, 1]."""

    ic: float
    cm: float
    qt: float
    avg: float

    def presentation(self) -> dict[str, float]:
        """The same scores rescaled to the 0-100 reporting range."""
        return {"ic": self.ic * 100.0, "cm": self.cm * 100.0, "qt": self.qt * 100.0, "avg": self.avg * 100.0}

    @property
    def presentation_avg(self) -> float:
        return self.avg * 100.0

    def to_dict(self) -> dict[str, float]:
        return {"ic": self.ic, "cm": self.cm, "qt": self.qt, "avg": self.avg}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RubricScore":
        return cls(ic=float(data["ic"]), cm=float(data["cm"]), qt=float(data["qt"]), avg=float(data["avg"]))


@dataclass(frozen=True)
class StageTranscript:
    """Verbatim record of one judge-stage exchange (re-asks appear as extra entries)."""

    stage: int
    system: str
    user: str
    response: str

    def to_dict(self) -> dict[str, Any]:
        return {"stage": self.stage, "system": self.system, "user": self.user, "response": self.response}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "StageTranscript":
        return cls(
            stage=int(data["stage"]),
            system=str(data.get("system", "")),
            user=str(data.get("user", "")),
            response=str(data.get("response", "")),
        )


@dataclass(frozen=True)
class JudgeVerdict:
    """One judge's staged answers for one candidate."""

    judge_id: str
    candidate_ref: str
    predicates: PredicateVector | None
    justifications: dict[Metric, str]
    transcripts: tuple[StageTranscript, ...]
    parse_status: dict[int, ParseStatus]

    @property
    def clean(self) -> bool:
        """True when every stage parsed and the vector is complete."""
        return self.predicates is not None and all(
            status is not ParseStatus.FAILED for status in self.parse_status.values()
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "judge_id": self.judge_id,
            "candidate_ref": self.candidate_ref,
            "predicates": self.predicates.to_dict() if self.predicates else None,
            "justifications": {m.value: t for m, t in self.justifications.items()},
            "transcripts": [t.to_dict() for t in self.transcripts],
            "parse_status": {str(k): v.value for k, v in self.parse_status.items()},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "JudgeVerdict":
        predicates = data.get("predicates")
        return cls(
            judge_id=str(data["judge_id"]),
            candidate_ref=str(data["candidate_ref"]),
            predicates=PredicateVector.from_dict(predicates) if predicates else None,
            justifications={Metric(k): str(v) for k, v in data.get("justifications", {}).items()},
            transcripts=tuple(StageTranscript.from_dict(t) for t in data.get("transcripts", [])),
            parse_status={int(k): ParseStatus(v) for k, v in data.get("parse_status", {}).items()},
        )


@dataclass(frozen=True)
class AnnotationRecord:
    """One human annotator's submitted rubric form for one candidate."""

    annotation_id: str
    task_id: str
    annotator_id: str
    candidate_ref: str
    predicates: PredicateVector
    justifications: dict[Metric, str]
    submitted_at: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "annotation_id": self.annotation_id,
            "task_id": self.task_id,
            "annotator_id": self.annotator_id,
            "candidate_ref": self.candidate_ref,
            "predicates": self.predicates.to_dict(),
            "justifications": {m.value: t for m, t in self.justifications.items()},
            "submitted_at": self.submitted_at,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "AnnotationRecord":
        return cls(
            annotation_id=str(data["annotation_id"]),
            task_id=str(data["task_id"]),
            annotator_id=str(data["annotator_id"]),
            candidate_ref=str(data["candidate_ref"]),
            predicates=PredicateVector.from_dict(data["predicates"]),
            justifications={Metric(k): str(v) for k, v in data.get("justifications", {}).items()},
            submitted_at=str(data.get("submitted_at", "")),
        )


@dataclass(frozen=True)
class AgentConfig:
    """Knobs for the closed refinement loop.

    `tau` lives on the 0-100 presentation scale. Profile names are resolved
    against the run configuration's profile table.
    """

    tau: float = 80.0
    max_iterations: int = 5
    candidates_per_iteration: int = 4
    ensemble_size: int = 3
    planner_family: str | None = None
    judge_families: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.candidates_per_iteration < 1:
            raise ValueError("candidates_per_iteration must be >= 1")
        if self.ensemble_size < 1 or self.ensemble_size % 2 == 0:
            raise ValueError("ensemble_size must be >= 1 and odd so majority voting is well-defined")
        if not 0.0 <= self.tau <= 100.0:
            raise ValueError("tau must lie in [0, 100]")
        if self.judge_families and len(self.judge_families) != self.ensemble_size:
            raise ValueError(
                f"{len(self.judge_families)} judge families configured but ensemble_size is {self.ensemble_size}"
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "tau": self.tau,
            "max_iterations": self.max_iterations,
            "candidates_per_iteration": self.candidates_per_iteration,
            "ensemble_size": self.ensemble_size,
            "planner_family": self.planner_family,
            "judge_families": list(self.judge_families),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "AgentConfig":
        return cls(
            tau=float(data.get("tau", 80.0)),
            max_iterations=int(data.get("max_iterations", 5)),
            candidates_per_iteration=int(data.get("candidates_per_iteration", 4)),
            ensemble_size=int(data.get("ensemble_size", 3)),
            planner_family=data.get("planner_family"),
            judge_families=tuple(data.get("judge_families", ()) or ()),
        )
