"""HTTP API over the datastore and scoring core.

Annotation endpoints are bearer-token authenticated; a token maps to one
annotator identity. Task payloads never include another annotator's
scores, and nothing here exposes per-item annotations before resolution.
"""

from __future__ import annotations

from typing import Mapping

from fastapi import Depends, FastAPI, Header, HTTPException, Response
from fastapi.responses import PlainTextResponse

from mmqa.alignment import alignment_table
from mmqa.datastore import (
    AlreadySubmitted,
    Datastore,
    JustificationRequired,
    NotTaskOwner,
    TaskNotFound,
)
from mmqa.models import DEFAULT_WEIGHTS, RubricWeights, canonical_json
from mmqa.rubric import aggregate, score_total
from mmqa.service.schemas import (
    AggregateRequest,
    AggregateResponse,
    AlignmentRequest,
    AlignmentRowModel,
    AnnotationSubmission,
    IaaView,
    ProgressView,
    ScoreRequest,
    ScoreResponse,
    SubmissionResult,
    TaskCandidate,
    TaskImage,
    TaskSource,
    TaskView,
)


def create_app(
    datastore: Datastore,
    tokens: Mapping[str, str],
    weights: RubricWeights = DEFAULT_WEIGHTS,
) -> FastAPI:
    app = FastAPI(title="mmqa service", version="0.1.0")

    def annotator(authorization: str | None = Header(default=None)) -> str:
        if not authorization or not authorization.startswith("Bearer "):
            raise HTTPException(status_code=401, detail="missing bearer token")
        token = authorization.removeprefix("Bearer ").strip()
        try:
            return tokens[token]
        except KeyError:
            raise HTTPException(status_code=401, detail="unknown token") from None

    @app.get("/healthz")
    def healthz() -> dict[str, str]:
        return {"status": "ok"}

    # -- scoring core -----------------------------------------------------

    @app.post("/rubric/score", response_model=ScoreResponse)
    def rubric_score(request: ScoreRequest) -> ScoreResponse:
        w = request.weights.to_weights() if request.weights else weights
        score = score_total(request.predicates.to_vector(), w)
        return ScoreResponse(**score.to_dict(), presentation=score.presentation())

    @app.post("/rubric/aggregate", response_model=AggregateResponse)
    def rubric_aggregate(request: AggregateRequest) -> AggregateResponse:
        w = request.weights.to_weights() if request.weights else weights
        row = aggregate([p.to_vector() for p in request.vectors], w)
        return AggregateResponse(
            metrics={m.value: v for m, v in row.metrics.items()},
            ic=row.ic,
            cm=row.cm,
            qt=row.qt,
            avg=row.avg,
            count=row.count,
            presentation=row.presentation(),
        )

    @app.post("/alignment/table", response_model=list[AlignmentRowModel])
    def alignment_rows(request: AlignmentRequest) -> list[AlignmentRowModel]:
        w = request.weights.to_weights() if request.weights else weights
        per_judge = {
            judge: {ref: model.to_vector() for ref, model in verdicts.items()}
            for judge, verdicts in request.judges.items()
        }
        gold = {ref: model.to_vector() for ref, model in request.gold.items()}
        try:
            rows = alignment_table(per_judge, gold, w)
        except ValueError as err:
            raise HTTPException(status_code=422, detail=str(err)) from err
        return [
            AlignmentRowModel(
                judge_id=row.judge_id,
                metrics={m.value: v for m, v in row.metrics.items()},
                ic=row.ic,
                cm=row.cm,
                qt=row.qt,
                avg=row.avg,
                rank=row.rank,
                presentation=row.presentation(),
            )
            for row in rows
        ]

    # -- annotation protocol ----------------------------------------------

    @app.get("/tasks/next", response_model=TaskView, responses={204: {"description": "no pending task"}})
    def tasks_next(annotator_id: str = Depends(annotator)) -> TaskView | Response:
        task = datastore.next_task(annotator_id)
        if task is None:
            return Response(status_code=204)
        candidate = datastore.candidate(task.candidate_ref)
        source = datastore.tqa(candidate.source_id)
        return TaskView(
            task_id=task.task_id,
            candidate_ref=task.candidate_ref,
            role=task.role,
            source=TaskSource(
                id=source.id, question=source.question, options=list(source.options), answer=source.answer
            ),
            candidate=TaskCandidate(
                modified_question=candidate.modified_question,
                images=[
                    TaskImage(placeholder=img.spec.placeholder, image_url=f"/images/{img.image_ref}")
                    for img in candidate.images
                ],
                explanation=candidate.explanation,
            ),
        )

    @app.post("/annotations", response_model=SubmissionResult, status_code=201)
    def submit_annotation(
        submission: AnnotationSubmission, annotator_id: str = Depends(annotator)
    ) -> SubmissionResult:
        try:
            outcome = datastore.submit(
                submission.task_id,
                annotator_id,
                submission.predicates.to_vector(),
                submission.justification_map(),
            )
        except TaskNotFound as err:
            raise HTTPException(status_code=404, detail=str(err)) from err
        except NotTaskOwner as err:
            raise HTTPException(status_code=403, detail=str(err)) from err
        except AlreadySubmitted as err:
            raise HTTPException(status_code=409, detail=str(err)) from err
        except JustificationRequired as err:
            raise HTTPException(status_code=422, detail=str(err)) from err
        return SubmissionResult(
            task_id=outcome.task_id,
            status=outcome.status,
            escalated=outcome.escalated,
            resolved=outcome.resolved,
        )

    @app.get("/progress", response_model=ProgressView)
    def progress(annotator_id: str = Depends(annotator)) -> ProgressView:
        counts = datastore.progress(annotator_id)
        return ProgressView(annotator_id=annotator_id, **counts)

    @app.get("/iaa", response_model=IaaView)
    def iaa(annotator_id: str = Depends(annotator)) -> IaaView:
        report = datastore.iaa()
        status = "ok" if report["mean"] is not None else "insufficient-data"
        return IaaView(per_metric=report["per_metric"], mean=report["mean"], items=report["items"], status=status)

    @app.get("/gold/export")
    def gold_export() -> PlainTextResponse:
        lines = "".join(canonical_json(label.to_dict()) + "\n" for label in datastore.export_gold())
        return PlainTextResponse(lines, media_type="application/x-ndjson")

    @app.get("/images/{ref}")
    def image(ref: str) -> Response:
        try:
            data = datastore.images.get(ref)
        except KeyError as err:
            raise HTTPException(status_code=404, detail=str(err)) from err
        return Response(content=data, media_type=datastore.images.media_type(ref))

    return app
