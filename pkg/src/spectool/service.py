"""HTTP facade for submitting speculated tool outputs to an engine cache.

A client that has pre-run a guessed tool call posts the result here,
scoped to the in-flight response id. Entries land in the same store an
EngineSim consults, so a timely submission turns the next tool-call
lookup into a cache hit. Submissions are best-effort: bad entries are
skipped and reported, good ones still count.
"""

from __future__ import annotations

import json
import time
from typing import Callable

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse


class WireResponse(JSONResponse):
    """JSON rendered with conventional spacing: {"cached": 1}, not {"cached":1}."""

    def render(self, content) -> bytes:
        return json.dumps(content, ensure_ascii=False, separators=(", ", ": ")).encode("utf-8")

from .domain import ToolCall, canonical_key, render_tool_call, token_estimate
from .engine import CacheEntry, ToolCacheStore
from .errors import InvalidCall

MAX_BODY_BYTES = 1 << 20  # default request cap: 1 MiB


def _submit_item(store: ToolCacheStore, response_id: str, item) -> str | None:
    """Validate and store one submission; returns an error note or None."""
    if not isinstance(item, dict):
        return "entry must be an object"
    name = item.get("name")
    if not isinstance(name, str) or not name:
        return "missing tool name"
    output = item.get("output")
    if not isinstance(output, str):
        return "missing output string"
    keep_alive = item.get("keep_alive")
    if keep_alive is not None:
        if isinstance(keep_alive, bool) or not isinstance(keep_alive, (int, float)):
            return "keep_alive must be a number"
        if keep_alive < 0:
            return "keep_alive cannot be negative"
    params = item.get("params")
    key = None
    call_tokens: list = []
    if params is not None:
        if not isinstance(params, dict):
            return "params must be an object"
        try:
            call = ToolCall(name, tuple(params.items()))
        except InvalidCall as exc:
            return f"bad params: {exc}"
        key = canonical_key(call)
        call_tokens = render_tool_call(call)
    store.submit(
        response_id,
        CacheEntry(
            name,
            output,
            key=key,
            call_tokens=call_tokens,
            output_tokens=token_estimate(output),
            keep_alive=float(keep_alive) if keep_alive is not None else None,
        ),
    )
    return None


def create_app(
    store: ToolCacheStore | None = None,
    max_body_bytes: int = MAX_BODY_BYTES,
    clock: Callable[[], float] = time.monotonic,
) -> FastAPI:
    """Build the service; pass an EngineSim's store to share its cache."""
    app = FastAPI(title="speculated tool output cache", docs_url=None, redoc_url=None)
    app.state.store = store if store is not None else ToolCacheStore(clock)

    @app.get("/healthz")
    async def healthz() -> dict:
        return {"status": "ok"}

    @app.post("/cache-tool-output/{response_id}")
    async def cache_tool_output(response_id: str, request: Request) -> JSONResponse:
        body = await request.body()
        if len(body) > max_body_bytes:
            return WireResponse(
                {"error": f"body exceeds {max_body_bytes} bytes"}, status_code=413
            )
        try:
            payload = json.loads(body)
        except json.JSONDecodeError as exc:
            return WireResponse({"error": f"invalid JSON: {exc}"}, status_code=400)
        if not isinstance(payload, list):
            return WireResponse(
                {"error": "expected a JSON array of tool results"}, status_code=400
            )
        cached = 0
        rejected = []
        for index, item in enumerate(payload):
            note = _submit_item(app.state.store, response_id, item)
            if note is None:
                cached += 1
            else:
                rejected.append({"index": index, "error": note})
        result: dict = {"cached": cached}
        if rejected:
            result["rejected"] = rejected
        return WireResponse(result)

    return app
