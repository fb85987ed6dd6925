"""Human-vs-machine evaluation: confusion matrices, accuracy, weighted
precision/recall/F1, and error-case slices for analyst tagging.

Matrices are built over judgments with "don't know" verdicts excluded; rows
are human truth, columns are machine prediction. Aggregate precision, recall
and F1 are support-weighted one-vs-rest (weights are the human-row supports),
which makes weighted recall coincide with accuracy for any exhaustive square
matrix. Macro and micro averages are also reported for transparency.
"""

from __future__ import annotations

import threading
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Iterable

import numpy as np

from .hitl import JudgmentExport, Verdict
from .inference import DamageLabel

BINARY_LABELS = ("Damage", "No Damage")
TERNARY_LABELS = ("Severe Damage", "Mild Damage", "None")

_TERNARY_COL = {DamageLabel.SEVERE: 0, DamageLabel.MILD: 1, DamageLabel.NONE: 2}


class UndefinedMetricError(ValueError):
    """Metrics are undefined on an empty matrix."""


@dataclass(frozen=True)
class ConfusionMatrix:
    labels: tuple[str, ...]
    cells: np.ndarray  # rows = human truth, columns = machine prediction
    n: int

    def __post_init__(self):
        arr = np.asarray(self.cells, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError("confusion matrix must be square")
        if arr.shape[0] != len(self.labels):
            raise ValueError("labels must match matrix size")
        if (arr < 0).any():
            raise ValueError("cells must be non-negative")
        if int(arr.sum()) != self.n:
            raise ValueError("n must equal the sum of all cells")
        object.__setattr__(self, "cells", arr)

    @property
    def trace(self) -> int:
        return int(np.trace(self.cells))

    def row_sums(self) -> np.ndarray:
        return self.cells.sum(axis=1)

    def col_sums(self) -> np.ndarray:
        return self.cells.sum(axis=0)

    def cell(self, human: str, machine: str) -> int:
        return int(self.cells[self.labels.index(human), self.labels.index(machine)])


@dataclass(frozen=True)
class ClassMetrics:
    label: str
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    per_class: tuple[ClassMetrics, ...]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    micro_precision: float
    micro_recall: float
    micro_f1: float


def _metric_rows(judgments: Iterable[JudgmentExport]) -> list[JudgmentExport]:
    """Filter applied here: don't-know verdicts never reach a matrix."""
    return [j for j in judgments if j.verdict is not Verdict.DONT_KNOW and not j.dontknow]


def build_binary_matrix(judgments: Iterable[JudgmentExport]) -> ConfusionMatrix:
    """2x2 damage-detection matrix: machine damage = severe or mild."""
    cells = np.zeros((2, 2), dtype=np.int64)
    rows = _metric_rows(judgments)
    for j in rows:
        machine = 0 if j.machine_damage in (DamageLabel.SEVERE, DamageLabel.MILD) else 1
        human = 0 if j.verdict is Verdict.DAMAGE else 1
        cells[human, machine] += 1
    return ConfusionMatrix(BINARY_LABELS, cells, int(cells.sum()))


def build_ternary_matrix(judgments: Iterable[JudgmentExport]) -> ConfusionMatrix:
    """3x3 severity matrix; human severe/mild come from damage verdicts'
    severity, human none from no-damage verdicts."""
    cells = np.zeros((3, 3), dtype=np.int64)
    for j in _metric_rows(judgments):
        machine = _TERNARY_COL[j.machine_damage]
        if j.verdict is Verdict.DAMAGE:
            human = _TERNARY_COL[j.severity]
        else:
            human = 2
        cells[human, machine] += 1
    return ConfusionMatrix(TERNARY_LABELS, cells, int(cells.sum()))


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.n == 0:
        raise UndefinedMetricError("accuracy undefined for an empty matrix")
    return cm.trace / cm.n


def weighted_metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Per-class one-vs-rest metrics plus support-weighted, macro and micro
    aggregates. Classes the machine never predicted get precision 0 (with a
    warning) instead of crashing a live dashboard."""
    if cm.n == 0:
        raise UndefinedMetricError("metrics undefined for an empty matrix")
    rows = cm.row_sums()
    cols = cm.col_sums()
    per_class = []
    for i, label in enumerate(cm.labels):
        tp = int(cm.cells[i, i])
        if cols[i] == 0:
            warnings.warn(f"class {label!r} was never predicted; precision set to 0")
            precision = 0.0
        else:
            precision = tp / int(cols[i])
        if rows[i] == 0:
            warnings.warn(f"class {label!r} has no human support; recall set to 0")
            recall = 0.0
        else:
            recall = tp / int(rows[i])
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class.append(
            ClassMetrics(label=label, precision=precision, recall=recall, f1=f1, support=int(rows[i]))
        )
    weights = rows / cm.n
    weighted = [
        float(sum(w * getattr(c, name) for w, c in zip(weights, per_class)))
        for name in ("precision", "recall", "f1")
    ]
    macro = [
        float(np.mean([getattr(c, name) for c in per_class]))
        for name in ("precision", "recall", "f1")
    ]
    micro = cm.trace / cm.n  # single-label: micro P = R = F1 = accuracy
    return MetricsReport(
        accuracy=cm.trace / cm.n,
        weighted_precision=weighted[0],
        weighted_recall=weighted[1],
        weighted_f1=weighted[2],
        per_class=tuple(per_class),
        macro_precision=macro[0],
        macro_recall=macro[1],
        macro_f1=macro[2],
        micro_precision=micro,
        micro_recall=micro,
        micro_f1=micro,
    )


# -- error slices ------------------------------------------------------------


class ErrorSlice(Enum):
    FN_SEVERE_MISSED = "fn_severe_missed"  # machine none, human severe
    FN_MILD_MISSED = "fn_mild_missed"      # machine none, human mild
    FP_SEVERE_SPURIOUS = "fp_severe_spurious"  # machine severe, human none
    FP_MILD_SPURIOUS = "fp_mild_spurious"      # machine mild, human none


# Curated vocabulary from field error analysis; free-form additions allowed.
CURATED_TAGS = frozenset(
    {
        "FloodScene",
        "LowLight",
        "AerialWideArea",
        "Collage",
        "Occlusion",
        "DamageResembling",
        "MapOrMeme",
        "RoughSea",
        "Other",
    }
)


@dataclass
class ErrorCase:
    case_id: str
    image_id: str
    machine_damage: DamageLabel
    human_verdict: Verdict
    human_severity: DamageLabel | None
    slice: ErrorSlice
    analyst_tags: set[str] = field(default_factory=set)


def _slice_for(j: JudgmentExport) -> ErrorSlice | None:
    if j.machine_damage is DamageLabel.NONE and j.verdict is Verdict.DAMAGE:
        if j.severity is DamageLabel.SEVERE:
            return ErrorSlice.FN_SEVERE_MISSED
        if j.severity is DamageLabel.MILD:
            return ErrorSlice.FN_MILD_MISSED
    if j.verdict is Verdict.NO_DAMAGE:
        if j.machine_damage is DamageLabel.SEVERE:
            return ErrorSlice.FP_SEVERE_SPURIOUS
        if j.machine_damage is DamageLabel.MILD:
            return ErrorSlice.FP_MILD_SPURIOUS
    return None


def extract_error_cases(
    judgments: Iterable[JudgmentExport], slice_filter: ErrorSlice | None = None
) -> list[ErrorCase]:
    """False-negative and false-positive slices of the severity task.

    Missed damage (machine none, human severe/mild) is the costliest class
    for emergency managers; spurious damage wastes their time.
    """
    cases = []
    for j in _metric_rows(judgments):
        s = _slice_for(j)
        if s is None or (slice_filter is not None and s is not slice_filter):
            continue
        cases.append(
            ErrorCase(
                case_id=j.image_id,
                image_id=j.image_id,
                machine_damage=j.machine_damage,
                human_verdict=j.verdict,
                human_severity=j.severity,
                slice=s,
            )
        )
    return cases


@dataclass(frozen=True)
class TagEvent:
    case_id: str
    analyst_id: str
    tags: frozenset[str]
    tagged_at: datetime


class ErrorCaseStore:
    """Holds extracted error cases for analyst tagging with an audit log."""

    def __init__(self, cases: Iterable[ErrorCase] = ()):
        self._lock = threading.Lock()
        self._cases: dict[str, ErrorCase] = {c.case_id: c for c in cases}
        self._audit: list[TagEvent] = []

    def __len__(self) -> int:
        return len(self._cases)

    def get(self, case_id: str) -> ErrorCase | None:
        return self._cases.get(case_id)

    def add_if_absent(self, case: ErrorCase) -> None:
        with self._lock:
            self._cases.setdefault(case.case_id, case)

    def cases(
        self, slice_filter: ErrorSlice | None = None, tag: str | None = None
    ) -> list[ErrorCase]:
        out = []
        for case in self._cases.values():
            if slice_filter is not None and case.slice is not slice_filter:
                continue
            if tag is not None and tag not in case.analyst_tags:
                continue
            out.append(case)
        return out

    def tag_case(self, case_id: str, tags: Iterable[str], analyst_id: str) -> ErrorCase:
        """Union tags onto a case (idempotent) and audit-log the event."""
        tags = frozenset(tags)
        with self._lock:
            case = self._cases.get(case_id)
            if case is None:
                raise KeyError(case_id)
            case.analyst_tags |= tags
            self._audit.append(
                TagEvent(
                    case_id=case_id,
                    analyst_id=analyst_id,
                    tags=tags,
                    tagged_at=datetime.now(timezone.utc),
                )
            )
            return case

    @property
    def audit_log(self) -> list[TagEvent]:
        return list(self._audit)

    def tag_report(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for case in self._cases.values():
            for tag in case.analyst_tags:
                counts[tag] = counts.get(tag, 0) + 1
        return dict(sorted(counts.items()))


def tag_error_case(
    store: ErrorCaseStore, case_id: str, tags: Iterable[str], analyst_id: str
) -> ErrorCase:
    return store.tag_case(case_id, tags, analyst_id)
