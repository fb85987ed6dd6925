"""HTTP surface for the verification campaign: task hand-out, judgment
intake, image bytes, stats, evaluation reports, QA review and error tagging.

Auth is static-token (the campaign trusts a closed team): tokens map to an
assessor id and a role, supplied either as ``Authorization: Bearer <token>``
or ``X-Api-Token``. Leads hold every assessor capability plus QA endpoints.
Errors are JSON ``{code, message}``. Mutating endpoints are idempotent under
retry: re-posting an identical judgment for the same (task, assessor) returns
success instead of a conflict.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping

from fastapi import Depends, FastAPI, Header, Query, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import __version__
from .evaluation import (
    ErrorCaseStore,
    ErrorSlice,
    UndefinedMetricError,
    accuracy,
    build_binary_matrix,
    build_ternary_matrix,
    extract_error_cases,
    weighted_metrics,
)
from .hitl import (
    HumanJudgment,
    QaOverride,
    TaskStore,
    Verdict,
    JudgmentExport,
    REJECT_ALREADY_JUDGED,
    REJECT_NOT_FOUND,
    REJECT_NOT_YOURS,
)
from .inference import DamageLabel
from .pipeline import ImageState, StageAccounting, TimeBucket
from .reporting import evaluation_report_dict, timeseries_rows


@dataclass(frozen=True)
class ApiSession:
    assessor_id: str
    token: str
    role: str  # "assessor" | "lead"

    @property
    def is_lead(self) -> bool:
        return self.role == "lead"


@dataclass
class ServiceContext:
    store: TaskStore
    sessions: dict[str, ApiSession]
    states: Mapping[str, ImageState] = field(default_factory=dict)
    images: Mapping[str, bytes] = field(default_factory=dict)
    accounting: StageAccounting | None = None
    buckets: list[TimeBucket] = field(default_factory=list)
    timeseries: list[dict] | None = None  # pre-read rows win over buckets
    error_store: ErrorCaseStore = field(default_factory=ErrorCaseStore)
    lease_minutes: float = 30.0
    judgments_log: Path | None = None  # accepted judgments appended here


def load_sessions(path: str | Path) -> dict[str, ApiSession]:
    """Token file: {"tokens": [{"token", "assessor_id", "role"}]}."""
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    sessions = {}
    for row in obj["tokens"]:
        role = row.get("role", "assessor")
        if role not in ("assessor", "lead"):
            raise ValueError(f"unknown role {role!r}")
        sessions[row["token"]] = ApiSession(
            assessor_id=row["assessor_id"], token=row["token"], role=role
        )
    return sessions


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        self.status = status
        self.code = code
        self.message = message


class JudgmentIn(BaseModel):
    task_id: str
    verdict: str
    severity: str | None = None
    comment: str | None = None


class OverrideIn(BaseModel):
    task_id: str
    verdict: str
    severity: str | None = None
    note: str | None = None


class TagsIn(BaseModel):
    tags: list[str]


def _sniff_content_type(data: bytes) -> str:
    if data.startswith(b"\xff\xd8\xff"):
        return "image/jpeg"
    if data.startswith(b"\x89PNG\r\n\x1a\n"):
        return "image/png"
    if data.startswith((b"GIF87a", b"GIF89a")):
        return "image/gif"
    return "application/octet-stream"


def _parse_verdict(verdict: str, severity: str | None) -> tuple[Verdict, DamageLabel | None]:
    try:
        v = Verdict(verdict)
    except ValueError:
        raise ApiError(422, "invalid_verdict", f"unknown verdict {verdict!r}")
    sev = None
    if v is Verdict.DAMAGE:
        if severity not in ("severe", "mild"):
            raise ApiError(
                422, "severity_required", "damage verdicts need severity 'severe' or 'mild'"
            )
        sev = DamageLabel(severity)
    elif severity is not None:
        raise ApiError(422, "severity_forbidden", "severity only applies to damage verdicts")
    return v, sev


def create_app(ctx: ServiceContext) -> FastAPI:
    app = FastAPI(title="stormsift", version=__version__)
    # the labeling UI is typically served from another origin; the static
    # token is the access control, not the origin
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["GET", "POST"],
        allow_headers=["Authorization", "X-Api-Token", "Content-Type"],
    )

    @app.exception_handler(ApiError)
    async def _api_error(_request: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status, content={"code": exc.code, "message": exc.message}
        )

    @app.exception_handler(RequestValidationError)
    async def _validation_error(_request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=422, content={"code": "validation_error", "message": str(exc.errors())}
        )

    def session_for(
        authorization: str | None = Header(default=None),
        x_api_token: str | None = Header(default=None),
    ) -> ApiSession:
        token = x_api_token
        if token is None and authorization and authorization.startswith("Bearer "):
            token = authorization.removeprefix("Bearer ")
        if token is None or token not in ctx.sessions:
            raise ApiError(401, "unauthorized", "missing or unknown token")
        return ctx.sessions[token]

    def lead_session(session: ApiSession = Depends(session_for)) -> ApiSession:
        if not session.is_lead:
            raise ApiError(403, "forbidden", "lead role required")
        return session

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "service": "stormsift", "version": __version__}

    @app.get("/tasks/next")
    def tasks_next(session: ApiSession = Depends(session_for)):
        task = ctx.store.next_task(session.assessor_id, lease_minutes=ctx.lease_minutes)
        if task is None:
            return Response(status_code=204)
        return {
            "task_id": task.task_id,
            "image_url": f"/images/{task.image_id}",
            "machine_damage": task.machine_damage.value,
        }

    def _record_judgment(export: JudgmentExport) -> None:
        if ctx.judgments_log is not None:
            with open(ctx.judgments_log, "a", encoding="utf-8") as fh:
                fh.write(export.to_json() + "\n")

    @app.post("/judgments")
    def post_judgment(body: JudgmentIn, session: ApiSession = Depends(session_for)):
        verdict, severity = _parse_verdict(body.verdict, body.severity)
        existing = ctx.store.judgment_for(body.task_id)
        if existing is not None:
            same = (
                existing.assessor_id == session.assessor_id
                and existing.verdict is verdict
                and existing.severity == severity
                and (existing.comment or None) == (body.comment or None)
            )
            if same:  # idempotent retry: task_id + assessor_id
                return {"accepted": True, "duplicate": True}
            raise ApiError(409, REJECT_ALREADY_JUDGED, "task already judged")
        judgment = HumanJudgment(
            task_id=body.task_id,
            assessor_id=session.assessor_id,
            verdict=verdict,
            severity=severity,
            comment=body.comment,
            submitted_at=datetime.now(timezone.utc),
        )
        result = ctx.store.submit_judgment(judgment)
        if not result.accepted:
            status = {
                REJECT_NOT_FOUND: 404,
                REJECT_NOT_YOURS: 409,
                REJECT_ALREADY_JUDGED: 409,
            }.get(result.reason, 422)
            raise ApiError(status, result.reason, f"judgment rejected: {result.reason}")
        task = ctx.store.get_task(body.task_id)
        _record_judgment(
            JudgmentExport(
                task_id=task.task_id,
                image_id=task.image_id,
                machine_damage=task.machine_damage,
                verdict=verdict,
                severity=severity,
                assessor_id=session.assessor_id,
                dontknow=verdict is Verdict.DONT_KNOW,
                comment=body.comment,
                submitted_at=judgment.submitted_at,
            )
        )
        return {"accepted": True, "duplicate": False}

    @app.get("/images/{image_id}")
    def get_image(image_id: str, session: ApiSession = Depends(session_for)):
        data = ctx.images.get(image_id)
        if data is None:
            raise ApiError(404, "not_found", f"no image {image_id}")
        return Response(content=data, media_type=_sniff_content_type(data))

    @app.get("/stats/accounting")
    def stats_accounting(session: ApiSession = Depends(session_for)):
        if ctx.accounting is None:
            raise ApiError(404, "not_found", "no run loaded")
        return ctx.accounting.as_dict()

    @app.get("/stats/timeseries")
    def stats_timeseries(session: ApiSession = Depends(session_for)):
        rows = ctx.timeseries if ctx.timeseries is not None else timeseries_rows(ctx.buckets)
        return {"rows": rows}

    @app.get("/evaluation/report")
    def evaluation_report(
        task: str = Query("ternary"), session: ApiSession = Depends(session_for)
    ):
        if task not in ("binary", "ternary"):
            raise ApiError(422, "invalid_task", "task must be 'binary' or 'ternary'")
        judgments = ctx.store.export_judgments()
        builder = build_binary_matrix if task == "binary" else build_ternary_matrix
        cm = builder(judgments)
        try:
            report = weighted_metrics(cm)
        except UndefinedMetricError:
            return {
                "task": task,
                "n": 0,
                "matrix": {"labels": list(cm.labels), "cells": cm.cells.tolist()},
                "metrics": None,
            }
        return evaluation_report_dict(task, cm, report)

    @app.get("/qa/sample")
    def qa_sample(
        k: int = Query(...), seed: int = Query(0), session: ApiSession = Depends(lead_session)
    ):
        tasks = ctx.store.qa_sample(k, seed)
        return {
            "tasks": [
                {
                    "task_id": t.task_id,
                    "image_id": t.image_id,
                    "machine_damage": t.machine_damage.value,
                    "status": t.status.value,
                }
                for t in tasks
            ]
        }

    @app.post("/qa/override")
    def qa_override(body: OverrideIn, session: ApiSession = Depends(lead_session)):
        verdict, severity = _parse_verdict(body.verdict, body.severity)
        override = QaOverride(
            task_id=body.task_id,
            lead_id=session.assessor_id,
            verdict=verdict,
            severity=severity,
            note=body.note,
            reviewed_at=datetime.now(timezone.utc),
        )
        try:
            ctx.store.add_override(override)
        except KeyError:
            raise ApiError(404, "not_found", f"no task {body.task_id}")
        return {"stored": True}

    def _refresh_error_cases() -> None:
        for case in extract_error_cases(ctx.store.export_judgments()):
            ctx.error_store.add_if_absent(case)

    @app.get("/errors")
    def get_errors(
        slice: str | None = Query(default=None),
        tag: str | None = Query(default=None),
        session: ApiSession = Depends(session_for),
    ):
        slice_filter = None
        if slice is not None:
            try:
                slice_filter = ErrorSlice(slice)
            except ValueError:
                raise ApiError(422, "invalid_slice", f"unknown slice {slice!r}")
        _refresh_error_cases()
        cases = ctx.error_store.cases(slice_filter, tag)
        return {
            "cases": [
                {
                    "case_id": c.case_id,
                    "image_id": c.image_id,
                    "machine_damage": c.machine_damage.value,
                    "human_verdict": c.human_verdict.value,
                    "human_severity": c.human_severity.value if c.human_severity else None,
                    "slice": c.slice.value,
                    "analyst_tags": sorted(c.analyst_tags),
                }
                for c in cases
            ]
        }

    @app.post("/errors/{case_id}/tags")
    def post_tags(case_id: str, body: TagsIn, session: ApiSession = Depends(session_for)):
        _refresh_error_cases()
        try:
            case = ctx.error_store.tag_case(case_id, body.tags, session.assessor_id)
        except KeyError:
            raise ApiError(404, "not_found", f"no error case {case_id}")
        return {"case_id": case.case_id, "analyst_tags": sorted(case.analyst_tags)}

    return app


def serve(ctx: ServiceContext, host: str = "127.0.0.1", port: int = 8000) -> None:
    import uvicorn

    uvicorn.run(create_app(ctx), host=host, port=port)
