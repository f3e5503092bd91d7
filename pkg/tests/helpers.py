"""Shared fixture builders: planner payloads, staged judge responses, and
full mock scripts that drive the refinement loop to designed scores."""

from __future__ import annotations

import json
from typing import Sequence

from mmqa.agent import RefinementLoop
from mmqa.gateway import MockScript, ModelGateway, TickClock, mock_backend
from mmqa.models import AgentConfig, Metric, PredicateVector, Redundancy, Tier, TqaRecord
from mmqa.store import ArtifactStore

# Named measurement vectors with hand-computed presented totals under the
# default weights (ic/cm/qt each verified by direct evaluation of the
# scoring rules):
#   best   97.5 : no violations, partial redundancy, all quality passes
#   v875   87.5 : semantic fail only
#   v825   82.5 : information loss only
#   v775   77.5 : text-solvable, one quality fail
#   v75    75.0 : loss + complete redundancy
#   v725   72.5 : loss + semantic fail
#   v70    70.0 : complete redundancy, two quality fails
#   v675   67.5 : loss + addition
#   worst   0.0 : everything at the bad pole
VEC_BEST = PredicateVector(False, False, False, False, Redundancy.PARTIAL, True, True, True, True)
VEC_875 = PredicateVector(False, False, False, False, Redundancy.PARTIAL, True, True, True, False)
VEC_825 = PredicateVector(True, False, False, False, Redundancy.PARTIAL, True, True, True, True)
VEC_775 = PredicateVector(False, False, True, False, Redundancy.PARTIAL, True, True, True, False)
VEC_75 = PredicateVector(True, False, False, False, Redundancy.COMPLETE, True, True, True, True)
VEC_725 = PredicateVector(True, False, False, False, Redundancy.PARTIAL, True, True, True, False)
VEC_70 = PredicateVector(False, False, False, False, Redundancy.COMPLETE, True, True, False, False)
VEC_675 = PredicateVector(True, True, False, False, Redundancy.PARTIAL, True, True, True, True)
VEC_60 = PredicateVector(False, False, True, False, Redundancy.COMPLETE, True, True, False, False)
VEC_55 = PredicateVector(True, False, False, False, Redundancy.COMPLETE, True, True, False, False)
VEC_50 = PredicateVector(False, False, True, True, Redundancy.COMPLETE, True, True, False, False)
VEC_45 = PredicateVector(True, False, True, True, Redundancy.COMPLETE, True, True, True, False)
VEC_40 = PredicateVector(True, True, True, True, Redundancy.COMPLETE, True, True, True, True)
VEC_WORST = PredicateVector(True, True, True, True, Redundancy.COMPLETE, False, False, False, False)


def make_tqa(record_id: str = "phys-001", tier: Tier = Tier.EXPERT, options: bool = True) -> TqaRecord:
    return TqaRecord(
        id=record_id,
        source="fixture-bank",
        subject="Physics",
        tier=tier,
        question=(
            "A projectile is launched from level ground at 45 degrees above the horizontal "
            "with an initial speed of 20 m/s. Neglecting air resistance, what is its range?"
        ),
        options=("40.8 m", "20.4 m", "80.6 m", "10.2 m") if options else (),
        answer="40.8 m",
    )


def planner_payload(
    n_images: int = 1,
    description: str = "A clean physics diagram of a projectile arc over level ground, axes labeled, launch angle marked.",
) -> dict:
    images = []
    placeholders = []
    for k in range(1, n_images + 1):
        images.append(
            {
                "placeholder": f"[IMAGE_{k}]",
                "original_text": f"launched at 45 degrees with an initial speed of 20 m/s (part {k})",
                "image_description": f"{description} (panel {k})",
            }
        )
        placeholders.append(f"[IMAGE_{k}]")
    slots = " and ".join(placeholders)
    return {
        "images": images,
        "modified_question": (
            f"Consider the launch shown in {slots}. Neglecting air resistance, what is the projectile's range?"
        ),
        "explanation": "The launch parameters live in the image; the text carries the task.",
    }


def planner_response(n_images: int = 1, **kwargs) -> str:
    return json.dumps(planner_payload(n_images=n_images, **kwargs))


_STAGE_TAGS = ("a", "b", "c", "d", "e", "f", "h1", "h2", "i")
_STAGE_METRICS = (
    Metric.IL,
    Metric.IA,
    Metric.SI,
    Metric.SQ,
    Metric.RE,
    Metric.NE,
    Metric.TQ,
    Metric.AQ,
    Metric.SC,
)


def stage_responses(vector: PredicateVector, justify: str = "as observed") -> list[str]:
    """Nine protocol replies, in stage order, that parse back to `vector`."""
    replies = []
    for tag, metric in zip(_STAGE_TAGS, _STAGE_METRICS):
        value = vector.get(metric)
        if metric is Metric.RE:
            answer = str(value.code)
        else:
            answer = "yes" if value else "no"
        replies.append(f"{{\n{tag}) {answer}\nl) {metric.value}: {justify}\n}}")
    return replies


def chat_steps(texts: Sequence[str]) -> list[dict]:
    return [{"text": t} for t in texts]


def agent_script_section(
    iteration_vectors: Sequence[Sequence[PredicateVector]],
    n_judges: int,
    planner_description: str | None = None,
) -> dict:
    """Mock script section driving one record's loop to designed vectors.

    `iteration_vectors[i][k]` is the measurement vector every judge returns
    for candidate k of iteration i+1 (unanimous panels).
    """
    planner_chat: list[dict] = []
    planner_image: list[dict] = []
    judge_chats: list[list[dict]] = [[] for _ in range(n_judges)]
    for vectors in iteration_vectors:
        for k, vector in enumerate(vectors):
            kwargs = {} if planner_description is None else {"description": planner_description}
            planner_chat.append({"text": planner_response(**kwargs)})
            planner_image.append({"derive": True})
            for j in range(n_judges):
                judge_chats[j].extend(chat_steps(stage_responses(vector)))
    return {
        "planner": {"chat": planner_chat, "image": planner_image},
        "judges": [{"chat": steps} for steps in judge_chats],
    }


def build_loop(tmp_path, iteration_vectors, config: AgentConfig, seed: int = 0):
    """A RefinementLoop wired to mocks that judge candidates to the designed
    vectors; returns (loop, gateway)."""
    section = agent_script_section(iteration_vectors, config.ensemble_size)
    gateway = ModelGateway(ArtifactStore(tmp_path / "store"), sleep=lambda _: None)
    planner, provider = mock_backend(MockScript.from_dict(section["planner"]), seed, "planner")
    gateway.register(planner, provider, provider)
    judges = []
    for j in range(config.ensemble_size):
        judge, judge_provider = mock_backend(MockScript.from_dict(section["judges"][j]), seed, f"judge-{j}")
        gateway.register(judge, judge_provider, judge_provider)
        judges.append(judge)
    loop = RefinementLoop(gateway, planner, judges, config=config, clock=TickClock())
    return loop, gateway
