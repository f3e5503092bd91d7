"""Pydantic request/response models for the HTTP API."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field

from mmqa.models import Metric, PredicateVector, Redundancy, RubricWeights


class PredicatesModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    info_loss: bool
    info_add: bool
    solvable_text: bool
    solvable_image: bool
    redundancy: Literal["None", "Partial", "Complete"]
    natural: bool
    technical: bool
    aesthetic: bool
    semantic: bool

    def to_vector(self) -> PredicateVector:
        return PredicateVector(
            info_loss=self.info_loss,
            info_add=self.info_add,
            solvable_text=self.solvable_text,
            solvable_image=self.solvable_image,
            redundancy=Redundancy(self.redundancy),
            natural=self.natural,
            technical=self.technical,
            aesthetic=self.aesthetic,
            semantic=self.semantic,
        )

    @classmethod
    def from_vector(cls, vector: PredicateVector) -> "PredicatesModel":
        return cls(**vector.to_dict())


class WeightsModel(BaseModel):
    alpha_ic: float = 0.3
    alpha_cm: float = 0.3
    alpha_qt: float = 0.4
    beta_none: float = 0.25
    beta_partial: float = 0.75
    beta_complete: float = 0.0

    def to_weights(self) -> RubricWeights:
        return RubricWeights(**self.model_dump())


class ScoreRequest(BaseModel):
    predicates: PredicatesModel
    weights: WeightsModel | None = None


class ScoreResponse(BaseModel):
    ic: float
    cm: float
    qt: float
    avg: float
    presentation: dict[str, float]


class AggregateRequest(BaseModel):
    vectors: list[PredicatesModel] = Field(min_length=1)
    weights: WeightsModel | None = None


class AggregateResponse(BaseModel):
    metrics: dict[str, float]
    ic: float
    cm: float
    qt: float
    avg: float
    count: int
    presentation: dict[str, float]


class AlignmentRequest(BaseModel):
    judges: dict[str, dict[str, PredicatesModel]]
    gold: dict[str, PredicatesModel]
    weights: WeightsModel | None = None


class AlignmentRowModel(BaseModel):
    judge_id: str
    metrics: dict[str, float]
    ic: float
    cm: float
    qt: float
    avg: float
    rank: int | None
    presentation: dict[str, float]


class TaskImage(BaseModel):
    placeholder: str
    image_url: str


class TaskSource(BaseModel):
    id: str
    question: str
    options: list[str]
    answer: str


class TaskCandidate(BaseModel):
    modified_question: str
    images: list[TaskImage]
    explanation: str


class TaskView(BaseModel):
    task_id: str
    candidate_ref: str
    role: str
    source: TaskSource
    candidate: TaskCandidate


class AnnotationSubmission(BaseModel):
    model_config = ConfigDict(extra="forbid")

    task_id: str = Field(min_length=1)
    predicates: PredicatesModel
    justifications: dict[Literal["IL", "IA", "SI", "SQ", "RE", "NE", "TQ", "AQ", "SC"], str] = {}

    def justification_map(self) -> dict[Metric, str]:
        return {Metric(k): v for k, v in self.justifications.items()}


class SubmissionResult(BaseModel):
    task_id: str
    status: str
    escalated: bool
    resolved: bool


class ProgressView(BaseModel):
    annotator_id: str
    completed: int
    pending: int


class IaaView(BaseModel):
    per_metric: dict[str, float | None]
    mean: float | None
    items: int
    status: Literal["ok", "insufficient-data"]
