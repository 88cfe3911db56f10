"""HTTP reward/evaluation service for external trainers.

Scoring endpoints are pure request-scoped computations and run fully
concurrently; session endpoints serialize per session id. A bounded
in-flight request limit rejects excess load with 503 instead of queueing
without bound.
"""

from __future__ import annotations

import threading

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import losses as losses_mod
from .config import Config
from .dataconstruct import DatasetRecord, load_dataset
from .driver import (
    DriverError,
    PolicyProtocolError,
    TurnRunner,
    canned_executor,
    new_session,
)
from .registry import ToolRegistry, load_registry
from .rewards import GroupTooSmall, LengthMismatch, NonFiniteInput, group_advantages, score
from .trajectory import ToolCall

SCHEMA_VERSION = 1


class ScoreRequest(BaseModel):
    text: str
    record_id: str | None = None
    gt_calls_per_step: list[list[dict]] | None = None
    multi_step: bool | None = None


class AdvantagesRequest(BaseModel):
    rewards: list[float]
    epsilon: float | None = None


class LossesRequest(BaseModel):
    examples_ref: str
    logprobs: list[dict] = Field(default_factory=list)
    alpha: float | None = None
    beta: float | None = None


class SessionRequest(BaseModel):
    user_text: str | None = None
    record_id: str | None = None
    max_steps: int | None = None
    max_chars: int | None = None


class StepRequest(BaseModel):
    text: str | None = None
    user_text: str | None = None


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse({"schema_version": SCHEMA_VERSION, "error": message}, status_code=status)


def _calls_from_json(steps: list[list[dict]]) -> list[list[ToolCall]]:
    out = []
    for step in steps:
        calls = []
        for obj in step:
            surface = obj.get("token") or obj.get("name")
            params = obj.get("parameters", {})
            if not isinstance(surface, str) or not surface or not isinstance(params, dict):
                raise ValueError("each call needs a token/name string and a parameters object")
            calls.append(ToolCall(token_surface=surface, parameters=params))
        out.append(calls)
    return out


class _SessionSlot:
    def __init__(self, runner: TurnRunner, record: DatasetRecord | None) -> None:
        self.runner = runner
        self.record = record
        self.lock = threading.Lock()


def create_app(
    registry: ToolRegistry,
    records: list[DatasetRecord] | None = None,
    config: Config | None = None,
) -> FastAPI:
    config = config or Config()
    records_by_id = {r.id: r for r in (records or [])}
    sessions: dict[str, _SessionSlot] = {}
    sessions_lock = threading.Lock()
    slots = threading.BoundedSemaphore(config.service.max_concurrent)

    app = FastAPI(title="tokencall scoring service")

    @app.middleware("http")
    async def _limit(request, call_next):
        if not slots.acquire(blocking=False):
            return _error(503, "over capacity")
        try:
            return await call_next(request)
        finally:
            slots.release()

    @app.get("/health")
    def health() -> dict:
        return {"schema_version": SCHEMA_VERSION, "status": "ok", "tools": len(registry)}

    @app.post("/score")
    def score_endpoint(body: ScoreRequest):
        if body.record_id is not None:
            record = records_by_id.get(body.record_id)
            if record is None:
                return _error(404, f"unknown record id {body.record_id!r}")
            gt_steps = record.gt_steps()
        elif body.gt_calls_per_step is not None:
            try:
                gt_steps = _calls_from_json(body.gt_calls_per_step)
            except ValueError as exc:
                return _error(400, str(exc))
        else:
            return _error(400, "provide record_id or gt_calls_per_step")
        multi = (
            body.multi_step
            if body.multi_step is not None
            else config.reward.multi_step_scoring == "per_step"
        )
        breakdown = score(body.text, gt_steps, registry, multi_step=multi)
        return {"schema_version": SCHEMA_VERSION, **breakdown.to_json()}

    @app.post("/advantages")
    def advantages_endpoint(body: AdvantagesRequest):
        epsilon = body.epsilon if body.epsilon is not None else config.reward.epsilon
        try:
            group = group_advantages(body.rewards, epsilon_clip=epsilon)
        except (GroupTooSmall, NonFiniteInput) as exc:
            return _error(400, str(exc))
        return {"schema_version": SCHEMA_VERSION, **group.to_json()}

    @app.post("/losses")
    def losses_endpoint(body: LossesRequest):
        try:
            examples = losses_mod.load_examples(body.examples_ref)
        except OSError as exc:
            return _error(404, f"cannot read examples: {exc}")
        by_id: dict[str, list[float]] = {}
        for item in body.logprobs:
            example_id = item.get("example_id")
            lps = item.get("logprobs")
            if not isinstance(example_id, str) or not isinstance(lps, list):
                return _error(400, "each logprob entry needs example_id and logprobs")
            by_id[example_id] = lps
        missing = [e.example_id for e in examples if e.example_id not in by_id]
        if missing:
            return _error(400, f"missing logprobs for examples: {missing[:5]}")
        logprobs = [by_id[e.example_id] for e in examples]
        alpha = body.alpha if body.alpha is not None else config.losses.alpha
        beta = body.beta if body.beta is not None else config.losses.beta
        try:
            report = losses_mod.aggregate_losses(examples, logprobs, alpha=alpha, beta=beta)
        except (LengthMismatch, losses_mod.PositiveLogProb) as exc:
            return _error(400, str(exc))
        return {"schema_version": SCHEMA_VERSION, **report.to_json()}

    @app.get("/tools/{surface:path}")
    def tool_endpoint(surface: str):
        resolved = registry.resolve(surface)
        if resolved is None:
            return _error(404, f"unknown token surface {surface!r}")
        doc, token = resolved
        return {
            "schema_version": SCHEMA_VERSION,
            "surface": token.surface,
            "tool_index": token.tool_index,
            "tool": doc.to_json(),
        }

    def _next_payload(slot: _SessionSlot) -> dict:
        request = slot.runner.request()
        return {
            "schema_version": SCHEMA_VERSION,
            "session_id": slot.runner.session.id,
            "done": False,
            "prompt": request.prompt_text,
            "stop_tags": request.stop_tags,
        }

    @app.post("/session")
    def open_session(body: SessionRequest):
        record = None
        if body.record_id is not None:
            record = records_by_id.get(body.record_id)
            if record is None:
                return _error(404, f"unknown record id {body.record_id!r}")
        user_text = body.user_text
        if user_text is None:
            user_text = record.instruction if record is not None else ""
        session = new_session(
            registry,
            max_steps=body.max_steps or 8,
            max_chars=body.max_chars or 32_768,
        )
        runner = TurnRunner(session, user_text, canned_executor(record))
        slot = _SessionSlot(runner, record)
        with sessions_lock:
            sessions[session.id] = slot
        try:
            return _next_payload(slot)
        except DriverError as exc:
            return _error(400, str(exc))

    @app.post("/session/{session_id}/step")
    def step_session(session_id: str, body: StepRequest):
        with sessions_lock:
            slot = sessions.get(session_id)
        if slot is None:
            return _error(404, f"unknown session {session_id!r}")
        with slot.lock:
            try:
                if slot.runner.done:
                    if body.user_text is None:
                        return _error(400, "turn complete; provide user_text to open a new turn")
                    slot.runner = TurnRunner(
                        slot.runner.session, body.user_text, canned_executor(slot.record)
                    )
                    return _next_payload(slot)
                if body.text is None:
                    return _error(400, "provide the policy text for this step")
                done = slot.runner.feed(body.text)
                if done:
                    from .trajectory import serialize

                    return {
                        "schema_version": SCHEMA_VERSION,
                        "session_id": session_id,
                        "done": True,
                        "trajectory": serialize(slot.runner.session.trajectory),
                    }
                return _next_payload(slot)
            except (PolicyProtocolError, DriverError) as exc:
                return _error(400, str(exc))

    return app


def create_app_from_config(config: Config) -> FastAPI:
    """Build the app from file paths named in the config."""
    with open(config.registry_path, "rb") as fh:
        registry = load_registry(fh.read())
    records: list[DatasetRecord] = []
    for _split, path in sorted(config.dataset_paths.items()):
        records.extend(load_dataset(path, registry))
    return create_app(registry, records, config)


def serve(config: Config) -> None:
    """Run the service with uvicorn until interrupted."""
    import uvicorn

    host, _, port = config.service.bind_address.partition(":")
    app = create_app_from_config(config)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8300))
