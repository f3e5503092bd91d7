"""Dataset ingestion and the annotation protocol state machine.

Storage is plain JSONL plus a content-addressed image store: records and
candidates are written once, task status changes and resolutions are
appended as superseding events, and submitted annotations are immutable.
The whole state is replayed into memory on open, which is plenty at the
few-hundred-item scale this protocol runs at.

Protocol rules enforced here: every candidate is scored by exactly two
primary annotators assigned by seeded randomization, a third annotator is
pulled in per item only on disagreement, annotators never see each
other's scores, and every non-pass metric requires a textual
justification.
"""

from __future__ import annotations

import json
import random
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from mmqa.alignment import DegenerateDataError, GoldLabel, krippendorff_alpha, resolve_gold
from mmqa.gateway import wall_clock
from mmqa.models import (
    METRIC_ORDER,
    AnnotationRecord,
    Metric,
    MmqaCandidate,
    PredicateVector,
    TqaRecord,
    canonical_json,
)
from mmqa.rubric import non_pass_metrics
from mmqa.store import ArtifactStore

# Default discipline tag set; deployments override it in configuration.
DEFAULT_DISCIPLINES: tuple[str, ...] = (
    "Physics",
    "Chemistry",
    "Biology",
    "Mathematics",
    "Astronomy",
    "Astrophysics",
    "Geology",
    "Earth Science",
    "Environmental Science",
    "Ecology",
    "Genetics",
    "Molecular Biology",
    "Neuroscience",
    "Immunology",
    "Biochemistry",
    "Materials Science",
    "Computer Science",
    "Electrical Engineering",
    "Mechanical Engineering",
    "Chemical Engineering",
    "Medicine",
    "Statistics",
)


class DatastoreError(Exception):
    pass


class IngestError(DatastoreError):
    """One or more records violate the ingestion rules; lists all of them."""

    def __init__(self, problems: Sequence[str]):
        super().__init__("ingestion rejected: " + "; ".join(problems))
        self.problems = tuple(problems)


class TaskNotFound(DatastoreError):
    pass


class NotTaskOwner(DatastoreError):
    pass


class AlreadySubmitted(DatastoreError):
    pass


class JustificationRequired(DatastoreError):
    def __init__(self, metrics: Sequence[Metric]):
        names = ", ".join(m.value for m in metrics)
        super().__init__(f"non-pass metrics require a textual justification: {names}")
        self.metrics = tuple(metrics)


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    total: int
    tier_counts: dict[str, int]
    discipline_histogram: dict[str, int]
    source_manifests: dict[str, list]
    notes: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "total": self.total,
            "tier_counts": dict(self.tier_counts),
            "discipline_histogram": dict(self.discipline_histogram),
            "source_manifests": {k: list(v) for k, v in self.source_manifests.items()},
            "notes": self.notes,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DatasetManifest":
        return cls(
            name=str(data["name"]),
            total=int(data["total"]),
            tier_counts=dict(data.get("tier_counts", {})),
            discipline_histogram=dict(data.get("discipline_histogram", {})),
            source_manifests={k: list(v) for k, v in data.get("source_manifests", {}).items()},
            notes=str(data.get("notes", "")),
        )


@dataclass
class AnnotationTask:
    task_id: str
    candidate_ref: str
    annotator_id: str
    role: str  # "primary" | "third"
    status: str  # "pending" | "submitted"
    seq: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "candidate_ref": self.candidate_ref,
            "annotator_id": self.annotator_id,
            "role": self.role,
            "status": self.status,
            "seq": self.seq,
        }


@dataclass(frozen=True)
class SubmitOutcome:
    task_id: str
    status: str  # always "submitted" on success
    escalated: bool
    resolved: bool
    gold: GoldLabel | None


class Datastore:
    def __init__(self, root: str | Path, disciplines: Sequence[str] = DEFAULT_DISCIPLINES):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.disciplines = tuple(disciplines)
        self.images = ArtifactStore(self.root / "images")
        self._lock = threading.RLock()

        self._tqas: dict[str, TqaRecord] = {}
        self._manifest: DatasetManifest | None = None
        self._candidates: dict[str, MmqaCandidate] = {}
        self._candidate_order: list[str] = []
        self._tasks: dict[str, AnnotationTask] = {}
        self._annotations: dict[str, AnnotationRecord] = {}
        self._gold: dict[str, GoldLabel] = {}
        self._unresolvable: dict[str, list[str]] = {}
        self._annotator_pool: list[str] = []
        self._seq = 0
        self._replay()

    # -- persistence ------------------------------------------------------

    def _path(self, name: str) -> Path:
        return self.root / name

    def _append(self, name: str, payload: Mapping[str, Any]) -> None:
        with self._path(name).open("a", encoding="utf-8") as fh:
            fh.write(canonical_json(payload) + "\n")

    def _read_lines(self, name: str) -> Iterable[dict[str, Any]]:
        path = self._path(name)
        if not path.exists():
            return []
        out = []
        with path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    out.append(json.loads(line))
        return out

    def _replay(self) -> None:
        manifest_path = self._path("manifest.json")
        if manifest_path.exists():
            self._manifest = DatasetManifest.from_dict(json.loads(manifest_path.read_text(encoding="utf-8")))
        for row in self._read_lines("tqas.jsonl"):
            record = TqaRecord.from_dict(row)
            self._tqas[record.id] = record
        for row in self._read_lines("candidates.jsonl"):
            candidate = MmqaCandidate.from_dict(row)
            self._candidates[candidate.id] = candidate
            self._candidate_order.append(candidate.id)
        for row in self._read_lines("tasks.jsonl"):
            if row["event"] == "pool":
                for annotator in row["annotators"]:
                    if annotator not in self._annotator_pool:
                        self._annotator_pool.append(annotator)
            elif row["event"] == "created":
                task = AnnotationTask(
                    task_id=row["task_id"],
                    candidate_ref=row["candidate_ref"],
                    annotator_id=row["annotator_id"],
                    role=row["role"],
                    status="pending",
                    seq=int(row["seq"]),
                )
                self._tasks[task.task_id] = task
                self._seq = max(self._seq, task.seq + 1)
            elif row["event"] == "status":
                self._tasks[row["task_id"]].status = row["status"]
        for row in self._read_lines("annotations.jsonl"):
            record = AnnotationRecord.from_dict(row)
            self._annotations[record.annotation_id] = record
        for row in self._read_lines("resolutions.jsonl"):
            if row["status"] == "resolved":
                gold = GoldLabel.from_dict(row["gold"])
                self._gold[gold.candidate_ref] = gold
            elif row["status"] == "unresolvable":
                self._unresolvable[row["candidate_ref"]] = list(row.get("disputed", []))

    # -- ingestion --------------------------------------------------------

    def ingest(
        self,
        records: Sequence[TqaRecord],
        name: str,
        source_manifests: Mapping[str, Sequence] | None = None,
        notes: str = "",
    ) -> DatasetManifest:
        problems: list[str] = []
        seen: set[str] = set(self._tqas)
        for record in records:
            if record.id in seen:
                problems.append(f"duplicate id {record.id!r}")
            seen.add(record.id)
            if not record.question.strip():
                problems.append(f"record {record.id!r} has an empty question")
            if record.subject not in self.disciplines:
                problems.append(f"record {record.id!r} has unknown discipline {record.subject!r}")
            if not record.tier:
                problems.append(f"record {record.id!r} is missing its tier")
        if problems:
            raise IngestError(problems)

        with self._lock:
            for record in records:
                self._tqas[record.id] = record
                self._append("tqas.jsonl", record.to_dict())
            tier_counts: dict[str, int] = {}
            histogram: dict[str, int] = {}
            for record in self._tqas.values():
                tier_counts[record.tier.value] = tier_counts.get(record.tier.value, 0) + 1
                histogram[record.subject] = histogram.get(record.subject, 0) + 1
            manifest = DatasetManifest(
                name=name,
                total=len(self._tqas),
                tier_counts=tier_counts,
                discipline_histogram=histogram,
                source_manifests={k: list(v) for k, v in (source_manifests or {}).items()},
                notes=notes,
            )
            self._path("manifest.json").write_text(canonical_json(manifest.to_dict()), encoding="utf-8")
            self._manifest = manifest
        return manifest

    @property
    def manifest(self) -> DatasetManifest | None:
        return self._manifest

    def tqa(self, record_id: str) -> TqaRecord:
        return self._tqas[record_id]

    def add_candidates(self, candidates: Sequence[MmqaCandidate]) -> None:
        with self._lock:
            for candidate in candidates:
                if candidate.id in self._candidates:
                    raise DatastoreError(f"candidate {candidate.id!r} already stored")
                if candidate.source_id not in self._tqas:
                    raise DatastoreError(f"candidate {candidate.id!r} references unknown record {candidate.source_id!r}")
                self._candidates[candidate.id] = candidate
                self._candidate_order.append(candidate.id)
                self._append("candidates.jsonl", candidate.to_dict())

    def candidate(self, candidate_id: str) -> MmqaCandidate:
        return self._candidates[candidate_id]

    # -- task assignment --------------------------------------------------

    def assign_tasks(self, annotators: Sequence[str], seed: int) -> list[AnnotationTask]:
        """Give every unassigned candidate two distinct primary annotators.

        Seeded shuffling randomizes who sees what while keeping the
        assignment replayable; walking the shuffled pool two slots at a
        time keeps per-annotator load within one task of even.
        """
        pool = list(dict.fromkeys(annotators))
        if len(pool) < 2:
            raise DatastoreError("annotator pool must contain at least two distinct annotators")
        rng = random.Random(seed)
        rng.shuffle(pool)
        assigned_refs = {t.candidate_ref for t in self._tasks.values()}
        pending = [ref for ref in self._candidate_order if ref not in assigned_refs]
        rng.shuffle(pending)

        created: list[AnnotationTask] = []
        with self._lock:
            new_names = [a for a in pool if a not in self._annotator_pool]
            if new_names:
                self._annotator_pool.extend(new_names)
                self._append("tasks.jsonl", {"event": "pool", "annotators": sorted(new_names)})
            cursor = 0
            for ref in pending:
                for annotator in (pool[cursor % len(pool)], pool[(cursor + 1) % len(pool)]):
                    task = AnnotationTask(
                        task_id=f"task-{self._seq:06d}",
                        candidate_ref=ref,
                        annotator_id=annotator,
                        role="primary",
                        status="pending",
                        seq=self._seq,
                    )
                    self._seq += 1
                    self._tasks[task.task_id] = task
                    self._append("tasks.jsonl", {"event": "created", **task.to_dict()})
                    created.append(task)
                cursor += 2
        return created

    def _spawn_third_task(self, candidate_ref: str) -> AnnotationTask | None:
        """One third-annotator task per escalated item, to the least-loaded outsider."""
        primaries = {
            t.annotator_id for t in self._tasks.values() if t.candidate_ref == candidate_ref
        }
        loads = {annotator: 0 for annotator in self._annotator_pool}
        for task in self._tasks.values():
            if task.status == "pending":
                loads[task.annotator_id] = loads.get(task.annotator_id, 0) + 1
        candidates = sorted(
            (annotator for annotator in loads if annotator not in primaries),
            key=lambda a: (loads[a], a),
        )
        if not candidates:
            return None  # parked: no eligible third annotator yet
        task = AnnotationTask(
            task_id=f"task-{self._seq:06d}",
            candidate_ref=candidate_ref,
            annotator_id=candidates[0],
            role="third",
            status="pending",
            seq=self._seq,
        )
        self._seq += 1
        self._tasks[task.task_id] = task
        self._append("tasks.jsonl", {"event": "created", **task.to_dict()})
        return task

    # -- annotation flow --------------------------------------------------

    def next_task(self, annotator_id: str) -> AnnotationTask | None:
        """The annotator's oldest pending task; blind by construction."""
        with self._lock:
            mine = [
                t for t in self._tasks.values() if t.annotator_id == annotator_id and t.status == "pending"
            ]
            if not mine:
                return None
            return min(mine, key=lambda t: t.seq)

    def task(self, task_id: str) -> AnnotationTask:
        try:
            return self._tasks[task_id]
        except KeyError:
            raise TaskNotFound(f"unknown task {task_id!r}") from None

    def submit(
        self,
        task_id: str,
        annotator_id: str,
        predicates: PredicateVector,
        justifications: Mapping[Metric, str],
        clock=wall_clock,
    ) -> SubmitOutcome:
        with self._lock:
            task = self.task(task_id)
            if task.annotator_id != annotator_id:
                raise NotTaskOwner(f"task {task_id!r} is not assigned to {annotator_id!r}")
            if task.status != "pending":
                raise AlreadySubmitted(f"task {task_id!r} was already submitted")

            missing = [
                m for m in non_pass_metrics(predicates) if not str(justifications.get(m, "")).strip()
            ]
            if missing:
                raise JustificationRequired(missing)

            annotation = AnnotationRecord(
                annotation_id=f"ann-{len(self._annotations):06d}",
                task_id=task_id,
                annotator_id=annotator_id,
                candidate_ref=task.candidate_ref,
                predicates=predicates,
                justifications={m: str(t) for m, t in justifications.items() if str(t).strip()},
                submitted_at=clock(),
            )
            self._annotations[annotation.annotation_id] = annotation
            self._append("annotations.jsonl", annotation.to_dict())
            task.status = "submitted"
            self._append("tasks.jsonl", {"event": "status", "task_id": task_id, "status": "submitted"})

            return self._maybe_resolve(task.candidate_ref)

    def _annotations_for(self, candidate_ref: str) -> list[AnnotationRecord]:
        ordered = sorted(self._annotations.values(), key=lambda a: a.annotation_id)
        primaries = [a for a in ordered if a.candidate_ref == candidate_ref and self._tasks[a.task_id].role == "primary"]
        thirds = [a for a in ordered if a.candidate_ref == candidate_ref and self._tasks[a.task_id].role == "third"]
        return primaries + thirds

    def _maybe_resolve(self, candidate_ref: str) -> SubmitOutcome:
        annotations = self._annotations_for(candidate_ref)
        task_id = annotations[-1].task_id
        if len(annotations) < 2:
            return SubmitOutcome(task_id=task_id, status="submitted", escalated=False, resolved=False, gold=None)

        resolution = resolve_gold(annotations)
        if resolution.status == "resolved":
            gold = resolution.gold
            assert gold is not None
            if candidate_ref not in self._gold:
                self._gold[candidate_ref] = gold
                self._append("resolutions.jsonl", {"status": "resolved", "candidate_ref": candidate_ref, "gold": gold.to_dict()})
            return SubmitOutcome(task_id=task_id, status="submitted", escalated=False, resolved=True, gold=gold)
        if resolution.status == "needs-third":
            already = any(
                t.candidate_ref == candidate_ref and t.role == "third" for t in self._tasks.values()
            )
            if not already:
                self._spawn_third_task(candidate_ref)
            return SubmitOutcome(task_id=task_id, status="submitted", escalated=True, resolved=False, gold=None)
        # unresolvable: parked for human review
        self._unresolvable[candidate_ref] = [m.value for m in resolution.disputed]
        self._append(
            "resolutions.jsonl",
            {"status": "unresolvable", "candidate_ref": candidate_ref, "disputed": [m.value for m in resolution.disputed]},
        )
        return SubmitOutcome(task_id=task_id, status="submitted", escalated=True, resolved=False, gold=None)

    # -- reporting --------------------------------------------------------

    def progress(self, annotator_id: str) -> dict[str, int]:
        mine = [t for t in self._tasks.values() if t.annotator_id == annotator_id]
        return {
            "completed": sum(1 for t in mine if t.status == "submitted"),
            "pending": sum(1 for t in mine if t.status == "pending"),
        }

    def iaa(self) -> dict[str, Any]:
        """Per-metric chance-corrected agreement over pre-consensus annotations."""
        annotators = sorted({a.annotator_id for a in self._annotations.values()})
        by_candidate: dict[str, dict[str, AnnotationRecord]] = {}
        for annotation in self._annotations.values():
            by_candidate.setdefault(annotation.candidate_ref, {})[annotation.annotator_id] = annotation

        per_metric: dict[str, float | None] = {}
        usable = [c for c, annos in by_candidate.items() if len(annos) >= 2]
        for metric in METRIC_ORDER:
            rows = []
            for ref in sorted(usable):
                annos = by_candidate[ref]
                row = []
                for annotator in annotators:
                    record = annos.get(annotator)
                    if record is None:
                        row.append(None)
                    else:
                        value = record.predicates.get(metric)
                        row.append(value.code if metric is Metric.RE else bool(value))
                rows.append(row)
            level = "ordinal" if metric is Metric.RE else "nominal"
            try:
                per_metric[metric.value] = krippendorff_alpha(rows, level=level) if rows else None
            except DegenerateDataError:
                per_metric[metric.value] = None

        defined = [v for v in per_metric.values() if v is not None]
        return {
            "per_metric": per_metric,
            "mean": sum(defined) / len(defined) if defined else None,
            "items": len(usable),
        }

    def export_gold(self) -> list[GoldLabel]:
        return [self._gold[ref] for ref in sorted(self._gold)]

    def unresolvable_items(self) -> dict[str, list[str]]:
        return dict(self._unresolvable)
