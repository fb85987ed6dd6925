"""Human verification campaign: sampling machine-classified images into
labeling tasks, single-assessor lease assignment, two-stage judgments, and
team-lead QA review.

Every severe/mild canonical first seen in a sampled window gets exactly one
task across the whole campaign; a seeded fraction of the window's no-damage
class rides along. Duplicates never reach assessors. Assignments are leases:
a task with no judgment before the lease expires reverts to open so shift
churn cannot starve the queue. Accepted judgments are immutable; QA overrides
are stored separately.
"""

from __future__ import annotations

import json
import random
import threading
import warnings
from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Protocol

from .inference import DamageLabel
from .ingest import parse_timestamp


class TaskStatus(Enum):
    OPEN = "open"
    ASSIGNED = "assigned"
    COMPLETED = "completed"
    QA_REVIEWED = "qa_reviewed"


class Verdict(Enum):
    DAMAGE = "damage"
    NO_DAMAGE = "no_damage"
    DONT_KNOW = "dont_know"


@dataclass(frozen=True)
class SamplerConfig:
    window_hours: float
    none_fraction: float = 0.10
    seed: int = 0
    lease_minutes: float = 30.0

    def __post_init__(self):
        if self.window_hours <= 0:
            raise ValueError("window_hours must be positive")
        if not 0.0 <= self.none_fraction <= 1.0:
            raise ValueError("none_fraction must be in [0, 1]")
        if self.lease_minutes <= 0:
            raise ValueError("lease_minutes must be positive")


def load_sampler_config(path: str | Path) -> SamplerConfig:
    """Campaign config file (TOML): window_hours, none_fraction, seed,
    lease_minutes. window_hours is deliberately unfixed, so it is required."""
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib

    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    if "window_hours" not in raw:
        raise ValueError(f"campaign config {path} must set window_hours")
    return SamplerConfig(
        window_hours=float(raw["window_hours"]),
        none_fraction=float(raw.get("none_fraction", 0.10)),
        seed=int(raw.get("seed", 0)),
        lease_minutes=float(raw.get("lease_minutes", 30.0)),
    )


@dataclass
class LabelingTask:
    task_id: str
    image_id: str
    machine_damage: DamageLabel
    created_at: datetime
    status: TaskStatus = TaskStatus.OPEN
    assessor_id: str | None = None
    lease_expires_at: datetime | None = None


@dataclass(frozen=True)
class HumanJudgment:
    task_id: str
    assessor_id: str
    verdict: Verdict
    severity: DamageLabel | None = None
    comment: str | None = None
    submitted_at: datetime | None = None

    @property
    def excluded_from_metrics(self) -> bool:
        return self.verdict is Verdict.DONT_KNOW


@dataclass(frozen=True)
class QaOverride:
    task_id: str
    lead_id: str
    verdict: Verdict
    severity: DamageLabel | None
    note: str | None
    reviewed_at: datetime


@dataclass(frozen=True)
class SubmitResult:
    accepted: bool
    reason: str | None = None


REJECT_NOT_FOUND = "NotFound"
REJECT_NOT_YOURS = "NotYours"
REJECT_ALREADY_JUDGED = "AlreadyJudged"
REJECT_INVALID = "InvalidVerdict"


@dataclass(frozen=True)
class JudgmentExport:
    """One line of the judgment export; the interchange record evaluation
    consumes."""

    task_id: str
    image_id: str
    machine_damage: DamageLabel
    verdict: Verdict
    severity: DamageLabel | None
    assessor_id: str
    dontknow: bool
    comment: str | None
    submitted_at: datetime

    def to_json(self) -> str:
        return json.dumps(
            {
                "task_id": self.task_id,
                "image_id": self.image_id,
                "machine_damage": self.machine_damage.value,
                "verdict": self.verdict.value,
                "severity": self.severity.value if self.severity else None,
                "assessor_id": self.assessor_id,
                "dontknow": self.dontknow,
                "comment": self.comment,
                "submitted_at": self.submitted_at.isoformat(),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "JudgmentExport":
        obj = json.loads(line)
        severity = obj.get("severity")
        return cls(
            task_id=obj["task_id"],
            image_id=obj["image_id"],
            machine_damage=DamageLabel(obj["machine_damage"]),
            verdict=Verdict(obj["verdict"]),
            severity=DamageLabel(severity) if severity else None,
            assessor_id=obj["assessor_id"],
            dontknow=bool(obj["dontknow"]),
            comment=obj.get("comment"),
            submitted_at=parse_timestamp(obj["submitted_at"]),
        )


def write_judgments(path: str | Path, judgments: Iterable[JudgmentExport]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for j in judgments:
            fh.write(j.to_json() + "\n")
            n += 1
    return n


def read_judgments(path: str | Path) -> Iterator[JudgmentExport]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield JudgmentExport.from_json(line)


class ClassifiedImage(Protocol):
    """What the sampler needs to know about a pipeline image state."""

    image_id: str
    first_seen_at: datetime
    is_cluster_canonical: bool
    damage: DamageLabel | None


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


class TaskStore:
    """Campaign store: task queue, judgments, QA records.

    All transitions happen under one lock, giving linearizable
    multi-consumer assignment: a task is never handed to two assessors, and
    exactly one judgment can ever be accepted per task.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._tasks: dict[str, LabelingTask] = {}
        self._order: list[str] = []
        self._sampled_images: set[str] = set()
        self._judgments: dict[str, HumanJudgment] = {}
        self._overrides: list[QaOverride] = []

    # -- sampling --------------------------------------------------------

    def draw_sample(
        self,
        window_start: datetime,
        window_end: datetime,
        images: Iterable[ClassifiedImage],
        cfg: SamplerConfig,
        now: datetime | None = None,
    ) -> list[LabelingTask]:
        """Create tasks for a time window: all severe/mild canonicals plus a
        seeded ``none_fraction`` sample of the window's no-damage canonicals.

        Already-sampled images are never re-issued, so re-running a window
        adds zero tasks.
        """
        now = now or _utcnow()
        must_sample: list[ClassifiedImage] = []
        none_pool: list[ClassifiedImage] = []
        for img in images:
            if not img.is_cluster_canonical or img.damage is None:
                continue
            if not window_start <= img.first_seen_at < window_end:
                continue
            if img.damage in (DamageLabel.SEVERE, DamageLabel.MILD):
                if img.image_id not in self._sampled_images:
                    must_sample.append(img)
            elif img.damage is DamageLabel.NONE:
                # the fraction draw runs over the window's whole no-damage
                # pool (sampled included) so re-drawing a window is a no-op
                none_pool.append(img)
        none_pool.sort(key=lambda i: i.image_id)
        k = round(cfg.none_fraction * len(none_pool))
        rng = random.Random(f"{cfg.seed}:{window_start.isoformat()}")
        chosen_none = rng.sample(none_pool, k) if k else []
        created = []
        with self._lock:
            for img in must_sample + chosen_none:
                if img.image_id in self._sampled_images:
                    continue
                task = LabelingTask(
                    task_id=f"task-{img.image_id}",
                    image_id=img.image_id,
                    machine_damage=img.damage,
                    created_at=now,
                )
                self._tasks[task.task_id] = task
                self._order.append(task.task_id)
                self._sampled_images.add(img.image_id)
                created.append(task)
        return created

    # -- assignment --------------------------------------------------------

    def _expire_stale(self, now: datetime) -> int:
        expired = 0
        for task in self._tasks.values():
            if (
                task.status is TaskStatus.ASSIGNED
                and task.lease_expires_at is not None
                and task.lease_expires_at <= now
            ):
                task.status = TaskStatus.OPEN
                task.assessor_id = None
                task.lease_expires_at = None
                expired += 1
        return expired

    def expire_stale(self, now: datetime | None = None) -> int:
        with self._lock:
            return self._expire_stale(now or _utcnow())

    def next_task(
        self,
        assessor_id: str,
        lease_minutes: float = 30.0,
        now: datetime | None = None,
    ) -> LabelingTask | None:
        """Atomically hand one open task to the assessor, or None when the
        queue is drained."""
        now = now or _utcnow()
        with self._lock:
            self._expire_stale(now)
            for task_id in self._order:
                task = self._tasks[task_id]
                if task.status is TaskStatus.OPEN:
                    task.status = TaskStatus.ASSIGNED
                    task.assessor_id = assessor_id
                    task.lease_expires_at = now + timedelta(minutes=lease_minutes)
                    return task
        return None

    # -- judgments --------------------------------------------------------

    def submit_judgment(
        self, judgment: HumanJudgment, now: datetime | None = None
    ) -> SubmitResult:
        now = now or _utcnow()
        if judgment.verdict is Verdict.DAMAGE:
            if judgment.severity not in (DamageLabel.SEVERE, DamageLabel.MILD):
                return SubmitResult(False, REJECT_INVALID)
        elif judgment.severity is not None:
            return SubmitResult(False, REJECT_INVALID)
        with self._lock:
            task = self._tasks.get(judgment.task_id)
            if task is None:
                return SubmitResult(False, REJECT_NOT_FOUND)
            if judgment.task_id in self._judgments:
                return SubmitResult(False, REJECT_ALREADY_JUDGED)
            if task.status is not TaskStatus.ASSIGNED or task.assessor_id != judgment.assessor_id:
                return SubmitResult(False, REJECT_NOT_YOURS)
            stored = judgment if judgment.submitted_at else replace(judgment, submitted_at=now)
            self._judgments[judgment.task_id] = stored
            task.status = TaskStatus.COMPLETED
            task.lease_expires_at = None
            return SubmitResult(True)

    def judgment_for(self, task_id: str) -> HumanJudgment | None:
        return self._judgments.get(task_id)

    # -- QA ----------------------------------------------------------------

    def qa_sample(self, k: int, seed: int) -> list[LabelingTask]:
        """Seeded uniform sample (without replacement) of completed tasks for
        lead review; sampled tasks transition to QA_REVIEWED.

        Previously reviewed tasks stay eligible so the same seed reproduces
        the same sample.
        """
        with self._lock:
            eligible = sorted(
                (
                    t
                    for t in self._tasks.values()
                    if t.status in (TaskStatus.COMPLETED, TaskStatus.QA_REVIEWED)
                ),
                key=lambda t: t.task_id,
            )
            if k > len(eligible):
                warnings.warn(
                    f"qa_sample: requested {k} of {len(eligible)} completed tasks; clamping"
                )
                k = len(eligible)
            rng = random.Random(seed)
            chosen = rng.sample(eligible, k)
            for task in chosen:
                task.status = TaskStatus.QA_REVIEWED
            return chosen

    def add_override(self, override: QaOverride) -> None:
        """Lead corrections never mutate the original judgment."""
        with self._lock:
            if override.task_id not in self._tasks:
                raise KeyError(override.task_id)
            self._overrides.append(override)

    @property
    def overrides(self) -> list[QaOverride]:
        return list(self._overrides)

    # -- views ---------------------------------------------------------------

    def tasks(self) -> list[LabelingTask]:
        return [self._tasks[tid] for tid in self._order]

    def get_task(self, task_id: str) -> LabelingTask | None:
        return self._tasks.get(task_id)

    def counts(self) -> dict[str, int]:
        out = {status.value: 0 for status in TaskStatus}
        for task in self._tasks.values():
            out[task.status.value] += 1
        return out

    def export_judgments(self) -> list[JudgmentExport]:
        with self._lock:
            out = []
            for task_id in self._order:
                judgment = self._judgments.get(task_id)
                if judgment is None:
                    continue
                task = self._tasks[task_id]
                out.append(
                    JudgmentExport(
                        task_id=task_id,
                        image_id=task.image_id,
                        machine_damage=task.machine_damage,
                        verdict=judgment.verdict,
                        severity=judgment.severity,
                        assessor_id=judgment.assessor_id,
                        dontknow=judgment.excluded_from_metrics,
                        comment=judgment.comment,
                        submitted_at=judgment.submitted_at,
                    )
                )
            return out


def task_to_dict(task: LabelingTask) -> dict:
    return {
        "task_id": task.task_id,
        "image_id": task.image_id,
        "machine_damage": task.machine_damage.value,
        "created_at": task.created_at.isoformat(),
        "status": task.status.value,
    }


def task_from_dict(obj: dict) -> LabelingTask:
    return LabelingTask(
        task_id=obj["task_id"],
        image_id=obj["image_id"],
        machine_damage=DamageLabel(obj["machine_damage"]),
        created_at=parse_timestamp(obj["created_at"]),
        status=TaskStatus(obj.get("status", "open")),
    )


def write_tasks(path: str | Path, tasks: Iterable[LabelingTask]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for task in tasks:
            fh.write(json.dumps(task_to_dict(task), sort_keys=True) + "\n")
            n += 1
    return n


def load_tasks(path: str | Path, store: TaskStore) -> int:
    """Seed a store from a tasks file (campaign continuity across runs)."""
    n = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            task = task_from_dict(json.loads(line))
            with store._lock:
                if task.task_id not in store._tasks:
                    store._tasks[task.task_id] = task
                    store._order.append(task.task_id)
                    store._sampled_images.add(task.image_id)
                    n += 1
    return n


def draw_sample(
    window_start: datetime,
    window_end: datetime,
    images: Iterable[ClassifiedImage],
    cfg: SamplerConfig,
    store: TaskStore,
) -> list[LabelingTask]:
    return store.draw_sample(window_start, window_end, images, cfg)


def next_task(assessor_id: str, store: TaskStore, **kwargs) -> LabelingTask | None:
    return store.next_task(assessor_id, **kwargs)


def submit_judgment(judgment: HumanJudgment, store: TaskStore) -> SubmitResult:
    return store.submit_judgment(judgment)


def qa_sample(store: TaskStore, k: int, seed: int) -> list[LabelingTask]:
    return store.qa_sample(k, seed)
