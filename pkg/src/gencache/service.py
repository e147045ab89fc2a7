"""HTTP surface: completion, feedback, metrics, and cluster inspection."""

from __future__ import annotations

from contextlib import asynccontextmanager

import anyio
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .codegen import BackendError, LlmBackend
from .prompt_model import PromptRecord
from .runtime import CacheRuntime, UnknownRequestError


def _bad_request(detail: str) -> JSONResponse:
    return JSONResponse(status_code=400, content={"error": detail})


def _prompt_from_body(body) -> PromptRecord:
    if not isinstance(body, dict):
        raise ValueError("body must be a JSON object")
    request_id = body.get("id")
    if request_id is not None and not isinstance(request_id, str):
        raise ValueError("id must be a string")
    if "prompt" in body:
        prompt = body["prompt"]
        if not isinstance(prompt, str):
            raise ValueError("prompt must be a string")
        return PromptRecord.create(prompt, request_id=request_id)
    if "messages" in body:
        messages = body["messages"]
        if not isinstance(messages, list) or not messages:
            raise ValueError("messages must be a non-empty array")
        contents = []
        user_text = None
        for message in messages:
            if not isinstance(message, dict) or not isinstance(message.get("content"), str):
                raise ValueError("each message needs string content")
            contents.append(message["content"])
            if message.get("role") == "user":
                user_text = message["content"]
        full_text = "\n\n".join(contents)
        return PromptRecord.create(full_text, user_text=user_text, request_id=request_id)
    raise ValueError("body needs a prompt string or a messages array")


def create_app(runtime: CacheRuntime, backend: LlmBackend) -> FastAPI:
    @asynccontextmanager
    async def lifespan(_: FastAPI):
        yield
        runtime.drain()
        runtime.close()

    app = FastAPI(title="gencache", lifespan=lifespan)

    @app.post("/v1/complete")
    async def complete(request: Request):
        try:
            body = await request.json()
        except Exception:
            return _bad_request("body is not valid JSON")
        try:
            prompt = _prompt_from_body(body)
        except ValueError as exc:
            return _bad_request(str(exc))
        try:
            # The miss path blocks on the upstream model; keep the event loop free.
            outcome = await anyio.to_thread.run_sync(runtime.handle_request, prompt, backend)
        except BackendError as exc:
            return JSONResponse(status_code=502, content={"error": str(exc)})
        return outcome.as_dict()

    @app.post("/v1/feedback")
    async def feedback(request: Request):
        try:
            body = await request.json()
        except Exception:
            return _bad_request("body is not valid JSON")
        if not isinstance(body, dict) or not isinstance(body.get("id"), str) or not isinstance(
            body.get("valid"), bool
        ):
            return _bad_request("body needs an id string and a valid boolean")
        try:
            applied = runtime.record_feedback(body["id"], body["valid"])
        except UnknownRequestError:
            return JSONResponse(status_code=404, content={"error": "unknown request id"})
        return {"applied": applied}

    @app.get("/v1/metrics")
    async def metrics():
        return runtime.metrics.as_dict()

    @app.get("/v1/clusters")
    async def clusters():
        return runtime.clusters.summaries()

    return app
