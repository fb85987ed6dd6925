"""Report exports: accounting and time-series tables (JSON/CSV), evaluation
reports, and rendered figures.

The report path always writes the delimited output; figures (PNG) are
rendered alongside it so a run directory is browsable without extra tooling.
Display values round half-up to two decimals; exports keep full precision.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict
from decimal import Decimal, ROUND_HALF_UP
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .evaluation import ConfusionMatrix, MetricsReport
from .ingest import parse_timestamp
from .pipeline import RunResult, StageAccounting, TimeBucket, write_states

# Field -> column header, mirroring the deployment report tables.
ACCOUNTING_COLUMNS = (
    ("total_tweets", "Total tweets"),
    ("unique_urls", "Unique image URLs"),
    ("downloaded", "Downloaded images"),
    ("failed", "Failed to download"),
    ("unique_images", "Unique images"),
    ("relevant", "Relevant images"),
    ("with_damage", "Images with damage"),
    ("severe", "Severe damage"),
    ("mild", "Mild damage"),
    ("duplicate_images", "Duplicate images"),
    ("not_relevant", "Not relevant images"),
    ("no_damage", "Images with no damage"),
)

TIMESERIES_FIELDS = ("bucket_start", "total", "relevant", "irrelevant", "severe", "mild")


def round_display(value: float) -> str:
    """Two decimals, half-up, for human-facing tables."""
    return str(Decimal(repr(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


# -- accounting ---------------------------------------------------------------


def write_accounting_json(acc: StageAccounting, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(acc.as_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def read_accounting_json(path: str | Path) -> StageAccounting:
    return StageAccounting(**json.loads(Path(path).read_text(encoding="utf-8")))


def write_accounting_csv(acc: StageAccounting, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([header for _, header in ACCOUNTING_COLUMNS])
        writer.writerow([getattr(acc, field) for field, _ in ACCOUNTING_COLUMNS])


# -- time series ----------------------------------------------------------------


def timeseries_rows(buckets: Iterable[TimeBucket]) -> list[dict]:
    rows = []
    for bucket in buckets:
        c = bucket.counts
        rows.append(
            {
                "bucket_start": bucket.bucket_start.isoformat(),
                "total": c.downloaded,
                "relevant": c.relevant,
                "irrelevant": c.not_relevant,
                "severe": c.severe,
                "mild": c.mild,
            }
        )
    return rows


def write_timeseries_csv(buckets: Iterable[TimeBucket], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=TIMESERIES_FIELDS)
        writer.writeheader()
        for row in timeseries_rows(buckets):
            writer.writerow(row)


def read_timeseries_csv(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = []
        for row in csv.DictReader(fh):
            rows.append(
                {
                    "bucket_start": row["bucket_start"],
                    **{k: int(row[k]) for k in TIMESERIES_FIELDS[1:]},
                }
            )
        return rows


# -- figures --------------------------------------------------------------------


def render_timeseries_figures(rows: Sequence[dict], out_dir: str | Path) -> list[Path]:
    """Volume and severity distributions over the run, one PNG each."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    if not rows:
        return paths
    x = [parse_timestamp(r["bucket_start"]) for r in rows]

    fig, ax = plt.subplots(figsize=(9, 4.5))
    for key, style in (("total", "k-o"), ("relevant", "g-s"), ("irrelevant", "r-^")):
        ax.plot(x, [r[key] for r in rows], style, label=key, markersize=4)
    ax.set_ylabel("images")
    ax.set_title("Image volume per bucket")
    ax.legend()
    fig.autofmt_xdate()
    path = out / "timeseries_volume.png"
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    paths.append(path)

    fig, ax = plt.subplots(figsize=(9, 4.5))
    for key, style in (("severe", "m-o"), ("mild", "c-s")):
        ax.plot(x, [r[key] for r in rows], style, label=key, markersize=4)
    ax.set_ylabel("images")
    ax.set_title("Damage severity per bucket")
    ax.legend()
    fig.autofmt_xdate()
    path = out / "timeseries_severity.png"
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    paths.append(path)
    return paths


def render_confusion_figure(cm: ConfusionMatrix, path: str | Path) -> Path:
    path = Path(path)
    k = len(cm.labels)
    fig, ax = plt.subplots(figsize=(1.6 * k + 2, 1.6 * k + 1.5))
    ax.imshow(cm.cells, cmap="Blues")
    ax.set_xticks(range(k), cm.labels)
    ax.set_yticks(range(k), cm.labels)
    ax.set_xlabel("Machine")
    ax.set_ylabel("Human")
    threshold = cm.cells.max() / 2 if cm.n else 0
    for i in range(k):
        for j in range(k):
            color = "white" if cm.cells[i, j] > threshold else "black"
            ax.text(j, i, f"{int(cm.cells[i, j]):,}", ha="center", va="center", color=color)
    ax.set_title(f"N={cm.n:,}")
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


# -- evaluation reports ------------------------------------------------------


def evaluation_report_dict(task: str, cm: ConfusionMatrix, report: MetricsReport) -> dict:
    return {
        "task": task,
        "matrix": {"labels": list(cm.labels), "cells": cm.cells.tolist()},
        "n": cm.n,
        "accuracy": report.accuracy,
        "weighted": {
            "precision": report.weighted_precision,
            "recall": report.weighted_recall,
            "f1": report.weighted_f1,
        },
        "macro": {
            "precision": report.macro_precision,
            "recall": report.macro_recall,
            "f1": report.macro_f1,
        },
        "micro": {
            "precision": report.micro_precision,
            "recall": report.micro_recall,
            "f1": report.micro_f1,
        },
        "per_class": [asdict(c) for c in report.per_class],
        "display": {
            "accuracy": round_display(report.accuracy),
            "precision": round_display(report.weighted_precision),
            "recall": round_display(report.weighted_recall),
            "f1": round_display(report.weighted_f1),
        },
    }


def write_evaluation_report(
    task: str, cm: ConfusionMatrix, report: MetricsReport, path: str | Path
) -> None:
    Path(path).write_text(
        json.dumps(evaluation_report_dict(task, cm, report), sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )


def write_matrix_csv(cm: ConfusionMatrix, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["human \\ machine", *cm.labels])
        for i, label in enumerate(cm.labels):
            writer.writerow([label, *[int(v) for v in cm.cells[i]]])


# -- run directory -------------------------------------------------------------


def write_run_outputs(result: RunResult, out_dir: str | Path) -> dict[str, Path]:
    """Persist one replay run: accounting (JSON + CSV), time series CSV,
    figures, state snapshot, event log and dead letters."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "accounting_json": out / "accounting.json",
        "accounting_csv": out / "accounting.csv",
        "timeseries_csv": out / "timeseries.csv",
        "states": out / "states.jsonl",
        "events": out / "events.jsonl",
        "dead_letter": out / "dead_letter.jsonl",
    }
    write_accounting_json(result.accounting, paths["accounting_json"])
    write_accounting_csv(result.accounting, paths["accounting_csv"])
    write_timeseries_csv(result.buckets, paths["timeseries_csv"])
    write_states(paths["states"], result.states)
    with open(paths["events"], "w", encoding="utf-8") as fh:
        for event in result.events:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
    with open(paths["dead_letter"], "w", encoding="utf-8") as fh:
        for dl in result.dead_letters:
            fh.write(
                json.dumps(
                    {
                        "image_id": dl.image_id,
                        "source_url": dl.source_url,
                        "stage": dl.stage,
                        "reason": dl.reason,
                        "ts": dl.ts.isoformat(),
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    for figure in render_timeseries_figures(timeseries_rows(result.buckets), out / "figures"):
        paths[figure.stem] = figure
    return paths
