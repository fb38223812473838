"""HTTP/JSON service over the orchestrator: async job submission with
polling, expert inspection, and experiment runs.

Handlers are stateless; shared state lives behind the orchestrator, registry,
and store. Jobs and experiments execute on a bounded thread pool, so a 202
response only promises that the record exists and will progress.
"""

from __future__ import annotations

import json
import logging
import sys
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from contextlib import asynccontextmanager

from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from emf.corpus import default_corpus
from emf.model import DEFAULT_PARAMS, GenerationParams, PromptSpec
from emf.orchestrator import ExperimentMode, ExperimentSpec, JobRecord, JobStatus, Orchestrator
from emf.registry import Policy, RoutingPolicy
from emf.store import UnknownJob

logger = logging.getLogger("emf.gateway")

#: Closed set of machine-readable API error codes.
ERROR_CODES = (
    "invalid_body",
    "unknown_job",
    "unknown_experiment",
    "job_not_done",
    "experiment_running",
    "no_eligible_experts",
    "internal",
)

_HTTP_STATUS = {
    "invalid_body": 400,
    "unknown_job": 404,
    "unknown_experiment": 404,
    "job_not_done": 409,
    "experiment_running": 409,
    "no_eligible_experts": 503,
    "internal": 500,
}


def api_error(code: str, message: str, detail: str | None = None) -> JSONResponse:
    assert code in ERROR_CODES
    return JSONResponse(
        status_code=_HTTP_STATUS[code],
        content={"code": code, "message": message, "detail": detail},
    )


class JobRequest(BaseModel):
    prompt: str
    params: dict | None = None
    subjects: list[str] | None = None
    policy: str | None = None


class CorpusEntry(BaseModel):
    text: str
    subjects: list[str] | None = None


class ExperimentRequest(BaseModel):
    mode: str
    corpus: list[CorpusEntry] | None = None  # None -> bundled default corpus
    trials: int = 1
    seed: int = 0
    lanes: int = 1


_MODES = {
    "correct": ExperimentMode.CORRECT,
    "mismatch": ExperimentMode.MISMATCHED_MERGE,
    "single": ExperimentMode.SINGLE_DEVICE_BASELINE,
}


def parse_mode(name: str) -> ExperimentMode:
    try:
        return _MODES[name]
    except KeyError:
        raise ValueError(f"mode must be one of {sorted(_MODES)}, got {name!r}") from None


def _parse_prompt(body: JobRequest) -> PromptSpec:
    params = GenerationParams.from_dict(body.params) if body.params else DEFAULT_PARAMS
    subjects = tuple(body.subjects) if body.subjects is not None else None
    return PromptSpec(text=body.prompt, params=params, declared_subjects=subjects)


def _parse_policy(name: str | None) -> RoutingPolicy | None:
    if name is None:
        return None
    try:
        return RoutingPolicy(policy=Policy(name))
    except ValueError:
        raise ValueError(
            f"policy must be one of {sorted(p.value for p in Policy)}, got {name!r}"
        ) from None


def create_app(orchestrator: Orchestrator | None = None, max_workers: int = 4) -> FastAPI:
    orch = orchestrator or Orchestrator()
    executor = ThreadPoolExecutor(max_workers=max_workers)
    idempotency: dict[str, str] = {}
    experiments: dict[str, dict] = {}
    state_lock = threading.Lock()

    @asynccontextmanager
    async def lifespan(_: FastAPI):
        yield
        executor.shutdown(wait=False)

    app = FastAPI(
        title="emf gateway", version="1.0.0", docs_url=None, redoc_url=None, lifespan=lifespan
    )
    app.state.orchestrator = orch

    @app.middleware("http")
    async def log_requests(request: Request, call_next):
        start = time.monotonic()
        response = await call_next(request)
        logger.info(
            json.dumps(
                {
                    "method": request.method,
                    "path": request.url.path,
                    "status": response.status_code,
                    "duration_ms": round((time.monotonic() - start) * 1000, 3),
                },
                sort_keys=True,
            )
        )
        return response

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request: Request, exc: RequestValidationError):
        return api_error("invalid_body", "request body failed validation", str(exc.errors()))

    @app.exception_handler(Exception)
    async def on_unhandled(request: Request, exc: Exception):
        logger.exception("unhandled error on %s", request.url.path)
        return api_error("internal", "internal error", str(exc))

    # -- jobs ----------------------------------------------------------

    @app.post("/v1/jobs", status_code=202)
    def submit_job(body: JobRequest, request: Request):
        try:
            prompt = _parse_prompt(body)
            policy = _parse_policy(body.policy)
        except (ValueError, TypeError) as exc:
            return api_error("invalid_body", str(exc))
        except KeyError as exc:
            return api_error("invalid_body", f"params missing field {exc}")
        if len(orch.registry) == 0:
            return api_error("no_eligible_experts", "no experts registered")
        key = request.headers.get("Idempotency-Key")
        with state_lock:
            if key is not None and key in idempotency:
                return {"job_id": idempotency[key]}
            job_id = str(uuid.uuid4())
            if key is not None:
                idempotency[key] = job_id
        # Visible to GET immediately; the worker thread takes it from Pending.
        orch.store.persist(
            JobRecord(job_id=job_id, prompt=prompt, created_at=time.time()).to_dict()
        )
        executor.submit(orch.run_job, prompt, policy, ExperimentMode.CORRECT, job_id)
        return {"job_id": job_id}

    @app.get("/v1/jobs/{job_id}")
    def get_job(job_id: str):
        try:
            return orch.store.load(job_id)
        except UnknownJob:
            return api_error("unknown_job", f"no job {job_id}")

    @app.get("/v1/jobs/{job_id}/video")
    def get_video(job_id: str):
        try:
            record = orch.store.load(job_id)
        except UnknownJob:
            return api_error("unknown_job", f"no job {job_id}")
        if record["status"] != JobStatus.DONE.value:
            return api_error("job_not_done", f"job {job_id} is {record['status']}")
        blob = orch.store.load_clip(record["merged_clip_ref"])
        return Response(content=blob, media_type="application/octet-stream")

    @app.get("/v1/experts")
    def get_experts():
        return orch.registry.snapshot()["experts"]

    # -- experiments ----------------------------------------------------

    @app.post("/v1/experiments", status_code=202)
    def submit_experiment(body: ExperimentRequest):
        try:
            mode = parse_mode(body.mode)
            if body.corpus is None:
                corpus = default_corpus()
            else:
                corpus = tuple(
                    PromptSpec(
                        text=entry.text,
                        declared_subjects=tuple(entry.subjects) if entry.subjects else None,
                    )
                    for entry in body.corpus
                )
            spec = ExperimentSpec(corpus=corpus, mode=mode, trials=body.trials, seed=body.seed)
            if body.lanes < 1:
                raise ValueError("lanes must be >= 1")
        except ValueError as exc:
            return api_error("invalid_body", str(exc))
        experiment_id = str(uuid.uuid4())
        with state_lock:
            experiments[experiment_id] = {"status": "running", "report": None}

        def run() -> None:
            try:
                report = orch.run_experiment(spec, lanes=body.lanes)
                with state_lock:
                    experiments[experiment_id] = {"status": "done", "report": report}
            except Exception as exc:  # surfaced via GET as internal
                logger.exception("experiment %s failed", experiment_id)
                with state_lock:
                    experiments[experiment_id] = {"status": "failed", "report": None, "error": str(exc)}

        executor.submit(run)
        return {"experiment_id": experiment_id}

    @app.get("/v1/experiments/{experiment_id}")
    def get_experiment(experiment_id: str):
        with state_lock:
            entry = experiments.get(experiment_id)
        if entry is None:
            return api_error("unknown_experiment", f"no experiment {experiment_id}")
        if entry["status"] == "running":
            return api_error("experiment_running", f"experiment {experiment_id} is running")
        if entry["status"] == "failed":
            return api_error("internal", "experiment failed", entry.get("error"))
        return entry["report"]

    return app


def configure_logging() -> None:
    """JSON request lines on stderr; idempotent."""
    if not logger.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(message)s"))
        logger.addHandler(handler)
        logger.setLevel(logging.INFO)
