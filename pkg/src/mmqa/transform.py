"""Two-stage conversion of a text-only question into a multi-modal candidate.

Stage one prompts the chat model with the planner instructions and parses
its structured JSON output; stage two renders every planned image through
the same family's image model. Parsing is defensive: direct JSON, then
fenced-block extraction, then first-balanced-braces extraction, then one
re-ask demanding bare JSON. Over-long image descriptions get one
compression re-ask; they are never silently truncated, because truncation
loses exactly the information the scoring rules penalize.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Any, Mapping

from mmqa.gateway import ChatRequest, FamilyProfile, ImageRequest, ModelGateway, wall_clock
from mmqa.models import (
    MAX_IMAGE_DESCRIPTION,
    CandidateImage,
    GenerationMeta,
    ImageSpec,
    MmqaCandidate,
    TqaRecord,
    validate_candidate,
)
from mmqa.prompting import PromptTemplate, load_prompt

_PLACEHOLDER_RE = re.compile(r"^\[IMAGE_([1-9][0-9]*)\]$")
_FENCE_RE = re.compile(r"```(?:json)?\s*\n(.*?)```", re.DOTALL | re.IGNORECASE)

REVISION_HEADER = "=== Revision instructions ==="
REVISION_FOOTER = "=== End revision instructions ==="


class TransformError(Exception):
    pass


class MalformedPlannerOutput(TransformError):
    """Planner output failed parsing or schema validation; names the fields."""

    def __init__(self, message: str, fields: tuple[str, ...] = ()):
        super().__init__(message)
        self.fields = fields


@dataclass(frozen=True)
class PlannerPlan:
    """Schema-validated planner output, prior to image rendering."""

    images: tuple[ImageSpec, ...]
    modified_question: str
    explanation: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "images": [spec.to_dict() for spec in self.images],
            "modified_question": self.modified_question,
            "explanation": self.explanation,
        }


def extract_json_object(text: str) -> dict[str, Any] | None:
    """Parse-repair ladder: direct parse, fenced block, first balanced braces."""
    text = text.strip()
    try:
        parsed = json.loads(text)
        if isinstance(parsed, dict):
            return parsed
    except ValueError:
        pass

    for match in _FENCE_RE.finditer(text):
        try:
            parsed = json.loads(match.group(1))
            if isinstance(parsed, dict):
                return parsed
        except ValueError:
            continue

    start = text.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
            elif ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    try:
                        parsed = json.loads(text[start : i + 1])
                        if isinstance(parsed, dict):
                            return parsed
                    except ValueError:
                        pass
                    break
        start = text.find("{", start + 1)
    return None


def plan_from_payload(payload: Mapping[str, Any]) -> PlannerPlan:
    """Validate the planner's JSON against the output contract.

    Description over-length is deliberately NOT checked here; it has its
    own recovery path (a compression re-ask) in `plan_conversion`.
    """
    problems: list[str] = []

    modified = payload.get("modified_question")
    if not isinstance(modified, str) or not modified.strip():
        problems.append("modified_question")
    explanation = payload.get("explanation")
    if not isinstance(explanation, str):
        problems.append("explanation")

    raw_images = payload.get("images")
    specs: list[ImageSpec] = []
    if not isinstance(raw_images, list) or not raw_images:
        problems.append("images")
    else:
        for i, entry in enumerate(raw_images):
            if not isinstance(entry, Mapping):
                problems.append(f"images[{i}]")
                continue
            entry_problems = []
            for key in ("placeholder", "original_text", "image_description"):
                if not isinstance(entry.get(key), str) or not entry.get(key):
                    entry_problems.append(f"images[{i}].{key}")
            if entry_problems:
                problems.extend(entry_problems)
                continue
            spec = ImageSpec(
                placeholder=entry["placeholder"],
                original_text=entry["original_text"],
                image_description=entry["image_description"],
            )
            if not _PLACEHOLDER_RE.match(spec.placeholder):
                problems.append(f"images[{i}].placeholder")
            specs.append(spec)

    if isinstance(modified, str):
        for i, spec in enumerate(specs):
            if modified.count(spec.placeholder) != 1:
                problems.append(f"modified_question: placeholder {spec.placeholder} count != 1")
            # Non-overlap rule: the removed span must not survive in the text.
            if spec.original_text.strip() and spec.original_text.strip() in modified:
                problems.append(f"images[{i}].original_text appears verbatim in modified_question")

    if problems:
        raise MalformedPlannerOutput(
            "planner output violates the output contract: " + "; ".join(problems),
            fields=tuple(problems),
        )
    return PlannerPlan(images=tuple(specs), modified_question=modified, explanation=explanation)


def _render_options(tqa: TqaRecord) -> str:
    if not tqa.options:
        return "(none)"
    return "\n".join(f"{chr(ord('A') + i)}. {opt}" for i, opt in enumerate(tqa.options))


def render_revision_block(feedback: str | None) -> str:
    if feedback is None:
        return ""
    return f"{REVISION_HEADER}\n{feedback}\n{REVISION_FOOTER}\n\n"


class ModalTransformer:
    """Runs the plan-then-render pipeline against one model family."""

    def __init__(
        self,
        gateway: ModelGateway,
        prompt_name: str = "planner_v1.txt",
        temperature: float = 0.7,
        seed: int | None = None,
        clock=wall_clock,
    ):
        self.gateway = gateway
        self.prompt: PromptTemplate = load_prompt(prompt_name)
        self.temperature = temperature
        self.seed = seed
        self._clock = clock

    def build_planner_request(self, tqa: TqaRecord, feedback: str | None) -> ChatRequest:
        """Prompt assembly is referentially transparent in (tqa, feedback)."""
        user = self.prompt.render_user(
            revision_block=render_revision_block(feedback),
            question=tqa.question,
            options=_render_options(tqa),
            answer=tqa.answer,
        )
        return ChatRequest(
            system=self.prompt.system,
            user=user,
            temperature=self.temperature,
            seed=self.seed,
        )

    def _ask(self, profile: FamilyProfile, request: ChatRequest) -> dict[str, Any] | None:
        response = self.gateway.complete(profile, request)
        return extract_json_object(response.text)

    def plan_conversion(self, tqa: TqaRecord, feedback: str | None, profile: FamilyProfile) -> PlannerPlan:
        request = self.build_planner_request(tqa, feedback)
        payload = self._ask(profile, request)
        if payload is None:
            retry = ChatRequest(
                system=request.system,
                user=request.user + "\n\nReturn only the JSON object.",
                temperature=request.temperature,
                seed=request.seed,
            )
            payload = self._ask(profile, retry)
            if payload is None:
                raise MalformedPlannerOutput("planner returned no parsable JSON object after re-ask")

        plan = plan_from_payload(payload)

        over = [i for i, s in enumerate(plan.images) if len(s.image_description) >= MAX_IMAGE_DESCRIPTION]
        if over:
            compress = ChatRequest(
                system=request.system,
                user=request.user
                + "\n\nEvery image_description must be strictly less than 1024 characters."
                + " Return the same JSON with each image_description compressed below that limit.",
                temperature=request.temperature,
                seed=request.seed,
            )
            payload = self._ask(profile, compress)
            if payload is None:
                raise MalformedPlannerOutput("planner returned no parsable JSON object on compression re-ask")
            plan = plan_from_payload(payload)
            still_over = [i for i, s in enumerate(plan.images) if len(s.image_description) >= MAX_IMAGE_DESCRIPTION]
            if still_over:
                raise MalformedPlannerOutput(
                    "image descriptions still too long after compression re-ask: "
                    + ", ".join(f"images[{i}].image_description" for i in still_over),
                    fields=tuple(f"images[{i}].image_description" for i in still_over),
                )
        return plan

    def realize(
        self,
        tqa: TqaRecord,
        plan: PlannerPlan,
        profile: FamilyProfile,
        iteration: int = 1,
        candidate_index: int = 0,
    ) -> MmqaCandidate:
        images = []
        for spec in plan.images:
            result = self.gateway.generate_image(profile, ImageRequest(description=spec.image_description))
            images.append(CandidateImage(spec=spec, image_ref=result.ref))
        candidate = MmqaCandidate(
            id=f"{tqa.id}-it{iteration}-c{candidate_index}",
            source_id=tqa.id,
            modified_question=plan.modified_question,
            images=tuple(images),
            explanation=plan.explanation,
            generation_meta=GenerationMeta(
                family=profile.family_name,
                iteration=iteration,
                candidate_index=candidate_index,
                created_at=self._clock(),
                temperature=self.temperature,
                seed=self.seed,
            ),
        )
        violations = validate_candidate(candidate, self.gateway.store.exists)
        if violations:
            raise TransformError(
                "realized candidate failed validation: "
                + "; ".join(f"{v.field}: {v.message}" for v in violations)
            )
        return candidate

    def transform(
        self,
        tqa: TqaRecord,
        feedback: str | None,
        profile: FamilyProfile,
        iteration: int = 1,
        candidate_index: int = 0,
    ) -> MmqaCandidate:
        plan = self.plan_conversion(tqa, feedback, profile)
        return self.realize(tqa, plan, profile, iteration=iteration, candidate_index=candidate_index)
