"""Operator command line.

Four subcommands: `transform` (batch one-shot conversion), `agent` (the
closed refinement loop), `bench-align` (judge-vs-gold reports), and
`annotate-serve` (the annotation HTTP service). Configuration lives in a
single JSON file; `env:NAME` string values are resolved from the
environment at load time so secrets stay out of files, and command-line
flags override file values.

Exit codes are a stable contract: 0 success, 1 usage or configuration
problem, 2 data problem, 3 provider failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Mapping

from mmqa.agent import AgentFailure, IterationTrace, RefinementLoop
from mmqa.alignment import KeyMismatchError, alignment_table, srcc_matrix
from mmqa.datastore import DEFAULT_DISCIPLINES, Datastore, DatastoreError, IngestError
from mmqa.gateway import (
    FamilyProfile,
    GatewayError,
    MockProvider,
    MockScript,
    ModelGateway,
    TickClock,
    wall_clock,
)
from mmqa.models import (
    AgentConfig,
    PredicateVector,
    RubricWeights,
    TqaRecord,
    canonical_json,
    load_jsonl,
)
from mmqa.store import ArtifactStore
from mmqa.transform import ModalTransformer, TransformError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_PROVIDER = 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class ProviderFailure(Exception):
    pass


# -- configuration ----------------------------------------------------------


def _resolve_env(value: Any) -> Any:
    import os

    if isinstance(value, str) and value.startswith("env:"):
        name = value[len("env:"):]
        resolved = os.environ.get(name)
        if resolved is None:
            raise UsageError(f"config references environment variable {name!r}, which is not set")
        return resolved
    if isinstance(value, dict):
        return {k: _resolve_env(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_resolve_env(v) for v in value]
    return value


def load_config(path: str | Path) -> dict[str, Any]:
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise UsageError(f"cannot read config {path}: {err}") from err
    try:
        config = json.loads(raw)
    except ValueError as err:
        raise UsageError(f"config {path} is not valid JSON: {err}") from err
    if not isinstance(config, dict):
        raise UsageError(f"config {path} must contain a JSON object")
    return _resolve_env(config)


def _weights(config: Mapping[str, Any]) -> RubricWeights:
    try:
        return RubricWeights.from_dict(config.get("weights", {})) if config.get("weights") else RubricWeights()
    except (TypeError, ValueError) as err:
        raise UsageError(f"invalid weights in config: {err}") from err


def _agent_config(config: Mapping[str, Any], tau_override: float | None = None) -> AgentConfig:
    data = dict(config.get("agent", {}))
    if tau_override is not None:
        data["tau"] = tau_override
    try:
        return AgentConfig.from_dict(data)
    except (TypeError, ValueError) as err:
        raise UsageError(f"invalid agent section in config: {err}") from err


def _profile(config: Mapping[str, Any], name: str) -> FamilyProfile:
    profiles = config.get("profiles", {})
    if name not in profiles:
        raise UsageError(f"config declares no profile named {name!r}")
    try:
        return FamilyProfile.from_dict({"family_name": name, **profiles[name]})
    except (TypeError, KeyError, ValueError) as err:
        raise UsageError(f"profile {name!r} is malformed: {err}") from err


def _is_mock(profile: FamilyProfile) -> bool:
    return profile.chat.provider == "mock"


def _load_dataset(path: str | Path) -> list[TqaRecord]:
    try:
        rows = load_jsonl(path)
    except OSError as err:
        raise DataError(f"cannot read dataset {path}: {err}") from err
    try:
        records = [TqaRecord.from_dict(row) for row in rows]
    except (KeyError, ValueError) as err:
        raise DataError(f"dataset {path} contains a malformed record: {err}") from err
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise DataError(f"dataset {path} contains duplicate ids: {dupes}")
    return records


class MockWiring:
    """Per-record mock providers keyed to the config's profile names."""

    def __init__(self, config: Mapping[str, Any], config_dir: Path):
        mock = config.get("mock")
        if not mock or "script" not in mock:
            raise UsageError("mock profiles configured but the config has no mock.script entry")
        script_path = Path(mock["script"])
        if not script_path.is_absolute():
            script_path = config_dir / script_path
        try:
            self.script_data = json.loads(script_path.read_text(encoding="utf-8"))
        except OSError as err:
            raise UsageError(f"cannot read mock script {script_path}: {err}") from err
        except ValueError as err:
            raise UsageError(f"mock script {script_path} is not valid JSON: {err}") from err
        self.seed = int(mock.get("seed", 0))

    def _section(self, record_id: str) -> Mapping[str, Any]:
        per_record = self.script_data.get("per_record", {})
        if record_id in per_record:
            return per_record[record_id]
        if "default" in self.script_data:
            return self.script_data["default"]
        raise DataError(f"mock script has no section for record {record_id!r} and no default")

    def register(
        self,
        gateway: ModelGateway,
        record_id: str,
        planner: FamilyProfile,
        judges: list[FamilyProfile] | None = None,
    ) -> None:
        section = self._section(record_id)
        planner_script = MockScript.from_dict(section.get("planner", {}))
        provider = MockProvider(planner_script, self.seed)
        gateway.register(planner, provider, provider)
        if judges:
            scripts = section.get("judges", [])
            if len(scripts) < len(judges):
                raise DataError(
                    f"mock script section for {record_id!r} has {len(scripts)} judge scripts; "
                    f"{len(judges)} judges configured"
                )
            for judge, judge_script in zip(judges, scripts):
                judge_provider = MockProvider(MockScript.from_dict(judge_script), self.seed)
                gateway.register(judge, judge_provider, judge_provider)


# -- transform ---------------------------------------------------------------


def cmd_transform(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    records = _load_dataset(args.dataset)
    planner = _profile(config, args.profile or config.get("planner_profile", "planner"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.dry_run:
        transformer = ModalTransformer(ModelGateway(ArtifactStore(out / "artifacts")))
        for record in sorted(records, key=lambda r: r.id):
            request = transformer.build_planner_request(record, None)
            print(f"=== {record.id} ===")
            print("[system]")
            print(request.system)
            print("[user]")
            print(request.user)
        return EXIT_OK

    mock = MockWiring(config, Path(args.config).parent) if _is_mock(planner) else None
    store = ArtifactStore(out / "artifacts")
    done: dict[str, dict[str, Any]] = {}
    candidates_path = out / "candidates.jsonl"
    if args.resume and candidates_path.exists():
        for row in load_jsonl(candidates_path):
            done[row["source_id"]] = row

    def run_one(record: TqaRecord) -> tuple[str, dict[str, Any] | None, str | None]:
        if record.id in done:
            return record.id, done[record.id], None
        gateway = ModelGateway(store)
        clock = TickClock() if mock else wall_clock
        if mock:
            mock.register(gateway, record.id, planner)
        transformer = ModalTransformer(gateway, clock=clock)
        try:
            candidate = transformer.transform(record, None, planner)
        except (TransformError, GatewayError) as err:
            return record.id, None, str(err)
        return record.id, candidate.to_dict(), None

    results: dict[str, dict[str, Any] | None] = {}
    failures: dict[str, str] = {}
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        for record_id, payload, error in pool.map(run_one, records):
            if error is not None:
                failures[record_id] = error
            else:
                results[record_id] = payload

    with candidates_path.open("w", encoding="utf-8") as fh:
        for record_id in sorted(results):
            fh.write(canonical_json(results[record_id]) + "\n")

    summary = {
        "records": len(records),
        "converted": len(results),
        "failed": len(failures),
        "failures": {k: failures[k] for k in sorted(failures)},
        "out": str(out),
    }
    (out / "summary.json").write_text(canonical_json(summary), encoding="utf-8")
    print(f"converted {len(results)}/{len(records)} records into {candidates_path}")
    for record_id in sorted(failures):
        print(f"  failed {record_id}: {failures[record_id]}", file=sys.stderr)
    return EXIT_OK


# -- agent --------------------------------------------------------------------


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def cmd_agent(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    records = _load_dataset(args.dataset)
    weights = _weights(config)
    agent_config = _agent_config(config, tau_override=args.tau)
    planner_name = config.get("planner_profile") or agent_config.planner_family or "planner"
    planner = _profile(config, planner_name)
    judge_names = config.get("judge_profiles") or list(agent_config.judge_families)
    if not judge_names:
        raise UsageError("config must list judge_profiles for the agent command")
    judges = [_profile(config, name) for name in judge_names]
    if len(judges) != agent_config.ensemble_size:
        raise UsageError(
            f"{len(judges)} judge_profiles configured but ensemble_size is {agent_config.ensemble_size}"
        )

    out = Path(args.out)
    records_dir = out / "records"
    records_dir.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(canonical_json({"agent": agent_config.to_dict(), "weights": weights.to_dict()}), encoding="utf-8")

    mock = MockWiring(config, Path(args.config).parent) if _is_mock(planner) else None
    store = ArtifactStore(out / "artifacts")

    def run_one(record: TqaRecord) -> tuple[str, dict[str, Any]]:
        record_dir = records_dir / record.id
        result_path = record_dir / "result.json"
        if args.resume and result_path.exists():
            return record.id, json.loads(result_path.read_text(encoding="utf-8"))

        record_dir.mkdir(parents=True, exist_ok=True)
        traces_path = record_dir / "traces.jsonl"
        traces_path.write_text("", encoding="utf-8")

        def checkpoint(trace: IterationTrace) -> None:
            with traces_path.open("a", encoding="utf-8") as fh:
                fh.write(canonical_json(trace.to_dict()) + "\n")

        gateway = ModelGateway(store)
        clock = TickClock() if mock else wall_clock
        if mock:
            mock.register(gateway, record.id, planner, judges)
        loop = RefinementLoop(
            gateway, planner, judges, config=agent_config, weights=weights, clock=clock, checkpoint=checkpoint
        )
        try:
            outcome = loop.run(record)
        except (AgentFailure, GatewayError) as err:
            result = {"record_id": record.id, "status": "failed", "error": str(err)}
            result_path.write_text(canonical_json(result), encoding="utf-8")
            return record.id, result

        with (record_dir / "candidates.jsonl").open("w", encoding="utf-8") as fh:
            for evaluated in outcome.evaluated:
                fh.write(canonical_json(evaluated.candidate.to_dict()) + "\n")
        with (record_dir / "verdicts.jsonl").open("w", encoding="utf-8") as fh:
            for evaluated in outcome.evaluated:
                fh.write(canonical_json(evaluated.verdict.to_dict()) + "\n")

        result = {
            "record_id": record.id,
            "status": outcome.status,
            "best_candidate": outcome.candidate.to_dict(),
            "score": outcome.score.to_dict(),
            "score_presentation": outcome.score.presentation(),
            "iterations": outcome.iterations,
            "traces": [t.to_dict() for t in outcome.traces],
        }
        result_path.write_text(canonical_json(result), encoding="utf-8")
        return record.id, result

    results: dict[str, dict[str, Any]] = {}
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        for record_id, result in pool.map(run_one, records):
            results[record_id] = result

    ordered = [results[record_id] for record_id in sorted(results)]
    succeeded = [r for r in ordered if r["status"] in ("pass", "exhausted")]
    failed = [r for r in ordered if r["status"] == "failed"]
    if not succeeded and failed:
        print("every record failed in generation or judging", file=sys.stderr)
        return EXIT_PROVIDER

    tau = agent_config.tau
    final_scores = [r["score_presentation"]["avg"] for r in succeeded]
    first_bests: list[float] = []
    max_iterations = max((len(r["traces"]) for r in succeeded), default=0)
    best_by_iteration: list[list[float]] = [[] for _ in range(max_iterations)]
    for r in succeeded:
        traces = r["traces"]
        if traces and traces[0]["best_score_current"] is not None:
            first_bests.append(traces[0]["best_score_current"])
        else:
            first_bests.append(-math.inf)
        running = -math.inf
        for i in range(max_iterations):
            if i < len(traces) and traces[i]["global_best_score"] is not None:
                running = traces[i]["global_best_score"]
            best_by_iteration[i].append(running)

    summary = {
        "records": len(records),
        "succeeded": len(succeeded),
        "failed": len(failed),
        "tau": tau,
        "pass_rate_final": (sum(1 for s in final_scores if s >= tau) / len(final_scores)) if final_scores else None,
        "pass_rate_iteration_1": (sum(1 for s in first_bests if s >= tau) / len(first_bests)) if first_bests else None,
        "mean_avg_final": _mean(final_scores),
        "mean_avg_final_unit": _mean([s / 100.0 for s in final_scores]),
        "mean_best_by_iteration": [_mean(values) for values in best_by_iteration],
        "per_record": {r["record_id"]: r["status"] for r in ordered},
    }
    (out / "summary.json").write_text(canonical_json(summary), encoding="utf-8")

    print(f"agent finished: {len(succeeded)} records, tau={tau}")
    if summary["pass_rate_iteration_1"] is not None:
        print(f"  pass rate: iteration 1 {summary['pass_rate_iteration_1']:.2%} -> final {summary['pass_rate_final']:.2%}")
    if summary["mean_avg_final"] is not None:
        print(f"  mean total: {summary['mean_avg_final_unit']:.4f} ({summary['mean_avg_final']:.2f}/100)")
    for r in failed:
        print(f"  failed {r['record_id']}: {r.get('error', '')}", file=sys.stderr)
    return EXIT_OK


# -- bench-align ---------------------------------------------------------------


def _load_gold(path: str | Path) -> dict[str, PredicateVector]:
    gold: dict[str, PredicateVector] = {}
    try:
        rows = load_jsonl(path)
    except OSError as err:
        raise DataError(f"cannot read gold labels {path}: {err}") from err
    for row in rows:
        ref = row.get("candidate_ref") or row.get("candidate_id")
        payload = row.get("consensus") or row.get("predicates")
        if not ref or payload is None:
            raise DataError(f"gold line is missing candidate_ref/consensus: {row}")
        gold[str(ref)] = PredicateVector.from_dict(payload)
    return gold


def _load_verdicts(path: str | Path) -> dict[str, dict[str, PredicateVector]]:
    per_judge: dict[str, dict[str, PredicateVector]] = {}
    try:
        rows = load_jsonl(path)
    except OSError as err:
        raise DataError(f"cannot read verdicts {path}: {err}") from err
    for row in rows:
        if row.get("predicates") is None:
            continue  # excluded verdicts carry no vector
        judge = str(row.get("judge_id", ""))
        ref = str(row.get("candidate_ref", ""))
        if not judge or not ref:
            raise DataError(f"verdict line is missing judge_id/candidate_ref: {row}")
        per_judge.setdefault(judge, {})[ref] = PredicateVector.from_dict(row["predicates"])
    return per_judge


def cmd_bench_align(args: argparse.Namespace) -> int:
    weights = _weights(load_config(args.config)) if args.config else RubricWeights()
    gold = _load_gold(args.gold)
    per_judge = _load_verdicts(args.verdicts)
    if not gold:
        raise DataError(f"no gold labels in {args.gold}")
    if not per_judge:
        raise DataError(f"no verdicts in {args.verdicts}")

    try:
        rows = alignment_table(per_judge, gold, weights)
    except (KeyMismatchError, ValueError) as err:
        raise DataError(str(err)) from err

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "alignment.json").write_text(
        canonical_json([{**row.to_dict(), "presentation": row.presentation()} for row in rows]),
        encoding="utf-8",
    )
    metric_names = [m.value for m in rows[0].metrics]
    with (out / "alignment.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "judge_id", *metric_names, "IC", "CM", "QT", "AVG"])
        for row in rows:
            pres = row.presentation()
            writer.writerow(
                [row.rank, row.judge_id]
                + [f"{pres[name]:.2f}" for name in metric_names]
                + [f"{pres['IC']:.2f}", f"{pres['CM']:.2f}", f"{pres['QT']:.2f}", f"{pres['AVG']:.2f}"]
            )

    # Rank-correlation matrices between score dimensions, one per judge.
    srcc_report: dict[str, Any] = {}
    keys = sorted(gold)
    if len(keys) >= 3:
        from mmqa.models import METRIC_ORDER
        from mmqa.rubric import metric_value, score_total

        for judge_id, verdicts in sorted(per_judge.items()):
            columns: dict[str, list[float]] = {}
            if args.srcc_dims == "metrics":
                for metric in METRIC_ORDER:
                    columns[metric.value] = [metric_value(verdicts[key], metric, weights) for key in keys]
            else:
                columns = {"IC": [], "CM": [], "QT": []}
                for key in keys:
                    score = score_total(verdicts[key], weights)
                    columns["IC"].append(score.ic)
                    columns["CM"].append(score.cm)
                    columns["QT"].append(score.qt)
            srcc_report[judge_id] = srcc_matrix(columns).to_dict()
    (out / "srcc.json").write_text(canonical_json(srcc_report), encoding="utf-8")

    print(f"{'rank':<5} {'judge':<28} {'AVG':>7}")
    for row in rows:
        print(f"{row.rank:<5} {row.judge_id:<28} {row.presentation()['AVG']:>7.2f}")
    return EXIT_OK


# -- annotate-serve --------------------------------------------------------------


def cmd_annotate_serve(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    service = config.get("service")
    if not isinstance(service, dict) or "root" not in service:
        raise UsageError("config must contain a service section with a root entry")
    disciplines = config.get("disciplines") or list(DEFAULT_DISCIPLINES)
    datastore = Datastore(service["root"], disciplines=disciplines)

    if args.export_gold:
        labels = datastore.export_gold()
        with open(args.export_gold, "w", encoding="utf-8") as fh:
            for label in labels:
                fh.write(canonical_json(label.to_dict()) + "\n")
        print(f"exported {len(labels)} gold labels to {args.export_gold}")
        return EXIT_OK

    # Config maps annotator id -> bearer token (token values may be env-indirect);
    # the app wants the inverse lookup.
    by_annotator = service.get("tokens", {})
    if not by_annotator:
        raise UsageError("service section must map annotator ids to bearer tokens")
    tokens = {token: annotator for annotator, token in by_annotator.items()}
    if len(tokens) != len(by_annotator):
        raise UsageError("service tokens must be unique per annotator")

    from mmqa.service.app import create_app

    app = create_app(datastore, tokens, _weights(config))
    host = service.get("host", "127.0.0.1")
    port = int(service.get("port", 8321))
    print(f"annotation service listening on http://{host}:{port}")
    import uvicorn

    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    except SystemExit as err:
        raise UsageError(f"service failed to start on {host}:{port}") from err
    except OSError as err:
        raise UsageError(f"cannot bind {host}:{port}: {err}") from err
    return EXIT_OK


# -- entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmqa", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    transform = sub.add_parser("transform", help="convert a dataset of text-only records once each")
    transform.add_argument("--dataset", required=True)
    transform.add_argument("--config", required=True)
    transform.add_argument("--out", required=True)
    transform.add_argument("--profile", default=None, help="planner profile name (default from config)")
    transform.add_argument("--jobs", type=int, default=1)
    transform.add_argument("--resume", action="store_true")
    transform.add_argument("--dry-run", action="store_true", help="print prompts without any model calls")
    transform.set_defaults(func=cmd_transform)

    agent = sub.add_parser("agent", help="run the closed refinement loop per record")
    agent.add_argument("--dataset", required=True)
    agent.add_argument("--config", required=True)
    agent.add_argument("--out", required=True)
    agent.add_argument("--jobs", type=int, default=1)
    agent.add_argument("--resume", action="store_true")
    agent.add_argument("--tau", type=float, default=None, help="override the acceptance threshold")
    agent.set_defaults(func=cmd_agent)

    bench = sub.add_parser("bench-align", help="score judges against gold labels")
    bench.add_argument("--verdicts", required=True)
    bench.add_argument("--gold", required=True)
    bench.add_argument("--out", required=True)
    bench.add_argument("--config", default=None)
    bench.add_argument(
        "--srcc-dims",
        choices=("principles", "metrics"),
        default="principles",
        help="which per-item columns feed the rank-correlation matrix",
    )
    bench.set_defaults(func=cmd_bench_align)

    serve = sub.add_parser("annotate-serve", help="serve the annotation HTTP API")
    serve.add_argument("--config", required=True)
    serve.add_argument("--export-gold", default=None, help="write gold JSONL to this path and exit")
    serve.set_defaults(func=cmd_annotate_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return EXIT_USAGE if err.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, IngestError, DatastoreError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (GatewayError, ProviderFailure) as err:
        print(f"provider failure: {err}", file=sys.stderr)
        return EXIT_PROVIDER


if __name__ == "__main__":
    sys.exit(main())
