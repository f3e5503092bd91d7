import pytest

from helpers import (
    VEC_40,
    VEC_45,
    VEC_50,
    VEC_55,
    VEC_60,
    VEC_70,
    VEC_75,
    VEC_725,
    VEC_775,
    VEC_825,
    VEC_875,
    VEC_BEST,
    agent_script_section,
    make_tqa,
)
from mmqa.agent import (
    DIVERSITY_HINT,
    AgentFailure,
    RefinementLoop,
    select_best,
    synthesize_feedback,
)
from mmqa.gateway import MockScript, ModelGateway, TickClock, mock_backend
from mmqa.judging import aggregate_verdicts
from mmqa.models import AgentConfig, Metric, ParseStatus, PredicateVector, Redundancy, RubricScore
from mmqa.store import ArtifactStore
from mmqa.transform import REVISION_FOOTER, REVISION_HEADER

TQA = make_tqa()


def make_loop(tmp_path, iteration_vectors, config: AgentConfig, seed=0):
    """Wire a loop whose judges unanimously return the designed vectors."""
    n_judges = config.ensemble_size
    section = agent_script_section(iteration_vectors, n_judges)
    gateway = ModelGateway(ArtifactStore(tmp_path / "store"), sleep=lambda _: None)
    planner, planner_provider = mock_backend(MockScript.from_dict(section["planner"]), seed, "planner")
    gateway.register(planner, planner_provider, planner_provider)
    judges = []
    for j in range(n_judges):
        judge, provider = mock_backend(MockScript.from_dict(section["judges"][j]), seed, f"judge-{j}")
        gateway.register(judge, provider, provider)
        judges.append(judge)
    return RefinementLoop(gateway, planner, judges, config=config, clock=TickClock()), gateway


def verdict_with(vector, justifications=None, judge_id="j0"):
    from mmqa.judging import STAGES
    from mmqa.models import JudgeVerdict

    member = JudgeVerdict(
        judge_id=judge_id,
        candidate_ref="cand",
        predicates=vector,
        justifications=justifications or {},
        transcripts=(),
        parse_status={s.index: ParseStatus.CLEAN for s in STAGES},
    )
    return aggregate_verdicts([member])


class TestSelectBest:
    def test_tie_breaks_to_lowest_index(self):
        scores = [RubricScore(0, 0, 0, s) for s in (0.81, 0.81, 0.79)]
        batch = [(f"c{i}", s) for i, s in enumerate(scores)]
        index, candidate, _ = select_best(batch)
        assert index == 0 and candidate == "c0"

    def test_singleton(self):
        batch = [("only", RubricScore(0, 0, 0, 0.5))]
        assert select_best(batch)[1] == "only"

    def test_max_wins(self):
        scores = [RubricScore(0, 0, 0, s) for s in (0.10, 0.975, 0.50)]
        batch = [(f"c{i}", s) for i, s in enumerate(scores)]
        assert select_best(batch)[0] == 1

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            select_best([])


class TestFeedbackSynthesis:
    def test_single_semantic_failure_is_tier_one(self):
        vector = PredicateVector(False, False, False, False, Redundancy.PARTIAL, True, True, True, False)
        verdict = verdict_with(vector, {Metric.SC: "the diagram contradicts conservation of momentum"})
        document = synthesize_feedback([verdict])
        assert len(document.issues) == 1
        issue = document.issues[0]
        assert issue.metric is Metric.SC and issue.tier == 1
        assert issue.evidence == (("j0", "the diagram contradicts conservation of momentum"),)

    def test_tier_ordering_puts_loss_before_aesthetics(self):
        vector = PredicateVector(True, False, False, False, Redundancy.PARTIAL, True, True, False, True)
        document = synthesize_feedback([verdict_with(vector)])
        assert [issue.metric for issue in document.issues] == [Metric.IL, Metric.AQ]

    def test_same_metric_across_verdicts_merges_with_both_provenances(self):
        vector = PredicateVector(True, False, False, False, Redundancy.PARTIAL, True, True, True, True)
        v1 = verdict_with(vector, {Metric.IL: "speed value missing"}, judge_id="j0")
        v2 = verdict_with(vector, {Metric.IL: "angle dropped"}, judge_id="j1")
        document = synthesize_feedback([v1, v2])
        # Oracle: plain group-by-metric over the fixture verdicts.
        assert len(document.issues) == 1
        assert document.issues[0].evidence == (
            ("j0", "speed value missing"),
            ("j1", "angle dropped"),
        )

    def test_no_failures_is_empty_document(self):
        document = synthesize_feedback([verdict_with(VEC_BEST)])
        assert document.empty
        assert document.render() == ""

    def test_render_is_deterministic(self):
        vector = PredicateVector(True, True, False, False, Redundancy.NONE, True, True, True, False)
        verdict = verdict_with(vector, {Metric.IL: "a", Metric.SC: "b"})
        assert synthesize_feedback([verdict]).render() == synthesize_feedback([verdict]).render()


class TestLoopSemantics:
    def test_early_exit_on_first_iteration(self, tmp_path):
        config = AgentConfig(tau=80.0, max_iterations=5, candidates_per_iteration=1, ensemble_size=1)
        loop, _ = make_loop(tmp_path, [[VEC_875]], config)
        result = loop.run(TQA)
        assert result.status == "pass"
        assert result.iterations == 1
        assert result.traces[0].feedback is None
        assert result.score.presentation_avg == pytest.approx(87.5)

    def test_designed_improvement_stops_at_iteration_four(self, tmp_path):
        """Hand simulation: bests 70, 75, 77.5, 82.5 -> exit at pass 4 with 82.5."""
        config = AgentConfig(tau=80.0, max_iterations=5, candidates_per_iteration=1, ensemble_size=1)
        loop, _ = make_loop(tmp_path, [[VEC_70], [VEC_75], [VEC_775], [VEC_825], [VEC_BEST]], config)
        result = loop.run(TQA)
        assert result.status == "pass"
        assert result.iterations == 4
        assert result.score.presentation_avg == pytest.approx(82.5)
        bests = [t.global_best_score for t in result.traces]
        assert bests == pytest.approx([70.0, 75.0, 77.5, 82.5])

    def test_monotone_decreasing_keeps_first_candidate(self, tmp_path):
        config = AgentConfig(tau=80.0, max_iterations=5, candidates_per_iteration=1, ensemble_size=1)
        loop, _ = make_loop(tmp_path, [[VEC_60], [VEC_55], [VEC_50], [VEC_45], [VEC_40]], config)
        result = loop.run(TQA)
        assert result.status == "exhausted"
        assert result.iterations == 5
        assert result.score.presentation_avg == pytest.approx(60.0)
        assert result.candidate.id.endswith("-it1-c0")
        assert [t.global_best_score for t in result.traces] == pytest.approx([60.0] * 5)

    def test_batch_best_takes_max_of_candidates(self, tmp_path):
        config = AgentConfig(tau=80.0, max_iterations=2, candidates_per_iteration=3, ensemble_size=1)
        loop, _ = make_loop(tmp_path, [[VEC_70, VEC_875, VEC_725]], config)
        result = loop.run(TQA)
        assert result.status == "pass"
        assert result.candidate.id.endswith("-it1-c1")

    def test_feedback_reaches_next_iteration_prompts_verbatim(self, tmp_path):
        config = AgentConfig(tau=80.0, max_iterations=3, candidates_per_iteration=2, ensemble_size=1)
        loop, gateway = make_loop(tmp_path, [[VEC_725, VEC_70], [VEC_BEST, VEC_70]], config)
        result = loop.run(TQA)
        feedback = result.traces[0].feedback
        assert feedback
        planner_calls = [c for c in gateway.transcript if c.kind == "chat" and c.family == "planner"]
        second_batch = planner_calls[2:4]
        block = f"{REVISION_HEADER}\n{feedback}\n{REVISION_FOOTER}"
        for call in second_batch:
            assert block in call.user
        for call in planner_calls[0:2]:
            assert REVISION_HEADER not in call.user

    def test_sub_tau_with_no_failed_predicates_emits_diversity_hint(self, tmp_path):
        # Perfect vector but tau above the 97.5 ceiling: defensive branch.
        config = AgentConfig(tau=99.0, max_iterations=2, candidates_per_iteration=1, ensemble_size=1)
        loop, _ = make_loop(tmp_path, [[VEC_BEST], [VEC_BEST]], config)
        result = loop.run(TQA)
        assert result.status == "exhausted"
        assert result.traces[0].feedback == DIVERSITY_HINT

    def test_all_candidates_failed_iteration_counts_against_budget(self, tmp_path):
        config = AgentConfig(tau=80.0, max_iterations=2, candidates_per_iteration=1, ensemble_size=1)
        section = agent_script_section([[VEC_875]], 1)
        # First planner call errors out terminally; second succeeds.
        section["planner"]["chat"].insert(0, {"error": "auth"})
        gateway = ModelGateway(ArtifactStore(tmp_path / "store"), sleep=lambda _: None)
        planner, p = mock_backend(MockScript.from_dict(section["planner"]), 0, "planner")
        gateway.register(planner, p, p)
        judge, jp = mock_backend(MockScript.from_dict(section["judges"][0]), 0, "judge-0")
        gateway.register(judge, jp, jp)
        loop = RefinementLoop(gateway, planner, [judge], config=config, clock=TickClock())
        result = loop.run(TQA)
        assert result.iterations == 2
        assert result.traces[0].candidate_ids == ()
        assert result.traces[0].failed_candidates
        assert result.status == "pass"

    def test_total_failure_raises_agent_failure_with_traces(self, tmp_path):
        config = AgentConfig(tau=80.0, max_iterations=2, candidates_per_iteration=1, ensemble_size=1)
        gateway = ModelGateway(ArtifactStore(tmp_path / "store"), sleep=lambda _: None)
        planner, p = mock_backend(
            MockScript.from_dict({"chat": [{"error": "auth"}, {"error": "auth"}]}), 0, "planner"
        )
        gateway.register(planner, p, p)
        judge, jp = mock_backend(MockScript(), 0, "judge-0")
        gateway.register(judge, jp, jp)
        loop = RefinementLoop(gateway, planner, [judge], config=config, clock=TickClock())
        with pytest.raises(AgentFailure) as err:
            loop.run(TQA)
        assert len(err.value.traces) == 2

    def test_budget_bound_on_clean_scripts(self, tmp_path):
        config = AgentConfig(tau=80.0, max_iterations=3, candidates_per_iteration=2, ensemble_size=3)
        vectors = [[VEC_70, VEC_70], [VEC_70, VEC_70], [VEC_70, VEC_70]]
        loop, gateway = make_loop(tmp_path, vectors, config)
        result = loop.run(TQA)
        assert result.status == "exhausted"
        n, k, m = config.max_iterations, config.candidates_per_iteration, config.ensemble_size
        assert gateway.chat_calls == n * k * (1 + m * 9)
        assert gateway.image_calls == n * k

    def test_ensemble_majority_beats_single_dissenter(self, tmp_path):
        config = AgentConfig(tau=80.0, max_iterations=1, candidates_per_iteration=1, ensemble_size=3)
        section = agent_script_section([[VEC_875]], 3)
        from helpers import VEC_WORST, chat_steps, stage_responses

        section["judges"][2] = {"chat": chat_steps(stage_responses(VEC_WORST))}
        gateway = ModelGateway(ArtifactStore(tmp_path / "store"), sleep=lambda _: None)
        planner, p = mock_backend(MockScript.from_dict(section["planner"]), 0, "planner")
        gateway.register(planner, p, p)
        judges = []
        for j in range(3):
            judge, jp = mock_backend(MockScript.from_dict(section["judges"][j]), 0, f"judge-{j}")
            gateway.register(judge, jp, jp)
            judges.append(judge)
        loop = RefinementLoop(gateway, planner, judges, config=config, clock=TickClock())
        result = loop.run(TQA)
        assert result.score.presentation_avg == pytest.approx(87.5)


class TestTraceShape:
    def test_trace_round_trip(self, tmp_path):
        from mmqa.agent import IterationTrace

        config = AgentConfig(tau=80.0, max_iterations=2, candidates_per_iteration=1, ensemble_size=1)
        loop, _ = make_loop(tmp_path, [[VEC_70], [VEC_875]], config)
        result = loop.run(TQA)
        for trace in result.traces:
            assert IterationTrace.from_dict(trace.to_dict()) == trace

    def test_checkpoint_called_per_iteration(self, tmp_path):
        seen = []
        config = AgentConfig(tau=80.0, max_iterations=2, candidates_per_iteration=1, ensemble_size=1)
        section = agent_script_section([[VEC_70], [VEC_875]], 1)
        gateway = ModelGateway(ArtifactStore(tmp_path / "store"), sleep=lambda _: None)
        planner, p = mock_backend(MockScript.from_dict(section["planner"]), 0, "planner")
        gateway.register(planner, p, p)
        judge, jp = mock_backend(MockScript.from_dict(section["judges"][0]), 0, "judge-0")
        gateway.register(judge, jp, jp)
        loop = RefinementLoop(
            gateway, planner, [judge], config=config, clock=TickClock(), checkpoint=seen.append
        )
        result = loop.run(TQA)
        assert [t.index for t in seen] == [1, 2]
        assert tuple(seen) == result.traces
