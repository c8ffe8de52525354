"""HTTP API hosting budget sessions and private top-k queries.

The service wraps the accountant's session operations one-to-one: every
budget number a client sees is computed server-side, sessions persist as
JSON files, and uploaded datasets are immutable CSV files. Per-session
mutation is serialized through one asyncio lock per session so concurrent
queries can never over-spend a budget.

Seed pinning: in test mode the X-Seed request header makes a query
deterministic. Outside test mode the header is refused, so production
randomness cannot be weakened by a client.
"""

from __future__ import annotations

import asyncio
import os
import uuid
from typing import Dict, Optional, Union

import click
import uvicorn
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from dptopk.accountant import (
    BudgetRejected,
    BudgetSession,
    SessionStore,
    session_close,
    session_create,
    session_privacy_report,
    session_query,
)
from dptopk.core import (
    Histogram,
    ParseError,
    SensitivitySetting,
    TopKRequest,
    UNRESTRICTED,
    ingest_csv,
)
from dptopk.noise import SeededRng

__all__ = ["create_app", "main"]


class ApiException(Exception):
    """An error the API reports as a JSON envelope {code, message}."""

    def __init__(self, status_code: int, code: str, message: str):
        super().__init__(message)
        self.status_code = status_code
        self.code = code
        self.message = message


class SessionCreateBody(BaseModel):
    kmax: int
    ellmax: int
    eps: float
    delta: float
    delta_prime: float = 0.0


class QueryBody(BaseModel):
    histogram: Optional[Dict[str, int]] = None
    dataset_ref: Optional[str] = None
    k: int
    kbar: int
    mechanism: str = "limited"
    sensitivity: Union[int, str] = "unrestricted"


def _sensitivity_from(value: Union[int, str]) -> SensitivitySetting:
    if value == "unrestricted":
        return UNRESTRICTED
    if isinstance(value, int):
        return SensitivitySetting.restricted(value)
    raise ValueError("sensitivity must be 'unrestricted' or a positive integer")


def _budget_block(session: BudgetSession) -> dict:
    return {
        "kmax_remaining": session.kmax_remaining,
        "ellmax_remaining": session.ellmax_remaining,
    }


def create_app(storage_dir: str, test_mode: bool = False) -> FastAPI:
    """Builds the application with its file-backed state under storage_dir."""
    app = FastAPI(title="dptopk service")
    app.state.store = SessionStore(os.path.join(storage_dir, "sessions"))
    app.state.dataset_dir = os.path.join(storage_dir, "datasets")
    os.makedirs(app.state.dataset_dir, exist_ok=True)
    app.state.sessions: Dict[str, BudgetSession] = {}
    app.state.datasets: Dict[str, Histogram] = {}
    app.state.locks: Dict[str, asyncio.Lock] = {}
    app.state.test_mode = test_mode

    def get_session(session_id: str) -> BudgetSession:
        cached = app.state.sessions.get(session_id)
        if cached is not None:
            return cached
        try:
            session = app.state.store.load(session_id)
        except (KeyError, OSError, ValueError) as exc:
            raise ApiException(404, "not_found", f"unknown session {session_id!r}") from exc
        app.state.sessions[session_id] = session
        return session

    def dataset_path(dataset_id: str) -> str:
        if not dataset_id.replace("-", "").isalnum():
            raise ApiException(400, "validation", f"invalid dataset id {dataset_id!r}")
        return os.path.join(app.state.dataset_dir, f"{dataset_id}.csv")

    def resolve_histogram(body: QueryBody) -> Histogram:
        if (body.histogram is None) == (body.dataset_ref is None):
            raise ApiException(
                400, "validation", "provide exactly one of histogram or dataset_ref"
            )
        if body.histogram is not None:
            try:
                return Histogram(body.histogram)
            except ValueError as exc:
                raise ApiException(400, "validation", str(exc)) from exc
        cached = app.state.datasets.get(body.dataset_ref)
        if cached is not None:
            return cached
        path = dataset_path(body.dataset_ref)
        if not os.path.exists(path):
            raise ApiException(
                400, "validation", f"unknown dataset {body.dataset_ref!r}"
            )
        with open(path, "r", encoding="utf-8") as handle:
            h = ingest_csv(handle)
        app.state.datasets[body.dataset_ref] = h
        return h

    def seed_from(request: Request) -> Optional[int]:
        raw = request.headers.get("x-seed")
        if raw is None:
            return None
        if not app.state.test_mode:
            raise ApiException(
                400, "validation", "seed pinning is only available in test mode"
            )
        try:
            return int(raw)
        except ValueError as exc:
            raise ApiException(400, "validation", "X-Seed must be an integer") from exc

    def session_lock(session_id: str) -> asyncio.Lock:
        return app.state.locks.setdefault(session_id, asyncio.Lock())

    @app.exception_handler(ApiException)
    async def handle_api_exception(request: Request, exc: ApiException):
        return JSONResponse(
            {"code": exc.code, "message": exc.message}, status_code=exc.status_code
        )

    @app.exception_handler(RequestValidationError)
    async def handle_request_validation(request: Request, exc: RequestValidationError):
        message = "; ".join(
            ".".join(str(part) for part in error["loc"]) + ": " + error["msg"]
            for error in exc.errors()
        )
        return JSONResponse({"code": "validation", "message": message}, status_code=400)

    @app.exception_handler(Exception)
    async def handle_internal(request: Request, exc: Exception):
        return JSONResponse(
            {"code": "internal", "message": "internal error"}, status_code=500
        )

    @app.post("/v1/sessions", status_code=201)
    async def create_session(body: SessionCreateBody):
        try:
            session = session_create(
                body.kmax, body.ellmax, body.eps, body.delta, body.delta_prime
            )
        except ValueError as exc:
            raise ApiException(400, "validation", str(exc)) from exc
        app.state.sessions[session.session_id] = session
        app.state.store.save(session)
        report = session_privacy_report(session).to_json_dict()
        return {"session_id": session.session_id, "privacy": report["privacy"]}

    @app.post("/v1/sessions/{session_id}/query")
    async def query_session(session_id: str, body: QueryBody, request: Request):
        seed = seed_from(request)
        async with session_lock(session_id):
            session = get_session(session_id)
            h = resolve_histogram(body)
            try:
                req = TopKRequest(k=body.k, kbar=body.kbar, mechanism=body.mechanism)
                setting = _sensitivity_from(body.sensitivity)
            except ValueError as exc:
                raise ApiException(400, "validation", str(exc)) from exc
            try:
                result = session_query(
                    session, h, req, SeededRng(seed), setting, store=app.state.store
                )
            except BudgetRejected as exc:
                return {
                    "status": "rejected",
                    "code": "budget_rejected",
                    "message": str(exc),
                    "budget": _budget_block(session),
                }
            except ValueError as exc:
                raise ApiException(400, "validation", str(exc)) from exc
            return {
                "status": "ok",
                "indices": list(result.output.indices),
                "terminated": result.output.terminated,
                "cost": session.log[-1]["cost"],
                "kbar_selected": result.kbar_selected,
                "budget": _budget_block(session),
            }

    @app.get("/v1/sessions/{session_id}")
    async def get_session_report(session_id: str):
        async with session_lock(session_id):
            session = get_session(session_id)
            payload = session_privacy_report(session).to_json_dict()
            payload["log"] = list(session.log)
            return payload

    @app.post("/v1/sessions/{session_id}/close")
    async def close_session(session_id: str):
        async with session_lock(session_id):
            session = get_session(session_id)
            session_close(session, store=app.state.store)
            return {
                "session_id": session.session_id,
                "status": "closed",
                "budget": _budget_block(session),
            }

    @app.post("/v1/datasets", status_code=201)
    async def upload_dataset(request: Request):
        raw = await request.body()
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ApiException(400, "validation", "dataset must be UTF-8 CSV") from exc
        try:
            h = ingest_csv(text.splitlines())
        except (ParseError, ValueError) as exc:
            raise ApiException(400, "validation", str(exc)) from exc
        dataset_id = uuid.uuid4().hex
        with open(dataset_path(dataset_id), "w", encoding="utf-8") as handle:
            handle.write(text)
        app.state.datasets[dataset_id] = h
        return {"dataset_id": dataset_id}

    return app


@click.command()
@click.option("--host", default="127.0.0.1", show_default=True, envvar="DPTOPK_HOST")
@click.option("--port", type=int, default=8177, show_default=True, envvar="DPTOPK_PORT")
@click.option(
    "--storage-dir",
    default="./dptopk-data",
    show_default=True,
    envvar="DPTOPK_STORAGE_DIR",
    help="Directory for session and dataset files.",
)
@click.option(
    "--test-mode",
    is_flag=True,
    default=False,
    envvar="DPTOPK_TEST_MODE",
    help="Allow deterministic seed pinning via the X-Seed header.",
)
def main(host, port, storage_dir, test_mode):
    """Serves the HTTP API."""
    uvicorn.run(create_app(storage_dir, test_mode), host=host, port=port)


if __name__ == "__main__":
    main()
