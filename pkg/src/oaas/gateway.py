"""REST control/data plane over the platform.

Stateless above the engine: every endpoint is a thin mapping onto a
platform call, and restarting the gateway loses nothing that was committed.
"""

from __future__ import annotations

import json

from fastapi import FastAPI, Request, Response
from fastapi.concurrency import run_in_threadpool
from fastapi.responses import JSONResponse, PlainTextResponse

from .classmodel import ClassPackage, ValidationReport, package_to_tree
from .errors import (
    ConflictRetriesExhausted,
    DeployRejected,
    Forbidden,
    MalformedResult,
    NotFound,
    OaasError,
    PackageSyntaxError,
    RingEmpty,
    RuntimeTimeout,
    RuntimeUnreachable,
    Saturated,
    SchemaError,
    StateTooLarge,
    StepFailed,
    UnknownClass,
    UnknownFunction,
    UnknownKey,
    UnresolvedImage,
)
from .runtimes import template_from_tree
from .service import Platform

_STATUS = {
    DeployRejected: 422,
    NotFound: 404,
    UnknownClass: 404,
    UnknownFunction: 404,
    UnknownKey: 404,
    ConflictRetriesExhausted: 409,
    Forbidden: 403,
    RuntimeUnreachable: 502,
    MalformedResult: 502,
    RuntimeTimeout: 504,
    Saturated: 429,
    StateTooLarge: 413,
    PackageSyntaxError: 422,
    SchemaError: 422,
    UnresolvedImage: 422,
    RingEmpty: 503,
}

_YAML_TYPES = ("yaml", "x-yaml")


def _status_for(exc: OaasError) -> int:
    for klass, status in _STATUS.items():
        if isinstance(exc, klass):
            return status
    if isinstance(exc, StepFailed) and isinstance(exc.cause, OaasError):
        return _status_for(exc.cause)
    return 500


def create_app(platform: Platform) -> FastAPI:
    app = FastAPI(title="oaas", docs_url=None, redoc_url=None)

    @app.exception_handler(OaasError)
    async def handle_oaas_error(request: Request, exc: OaasError):
        status = _status_for(exc)
        body = {"error": exc.to_wire()}
        if isinstance(exc, DeployRejected):
            body = exc.report.to_wire()
        headers = {}
        if isinstance(exc, Saturated):
            headers["Retry-After"] = str(max(1, int(exc.retry_after_s)))
        return JSONResponse(status_code=status, content=body, headers=headers)

    # -- classes ------------------------------------------------------------

    @app.post("/classes")
    async def deploy(request: Request):
        body = await request.body()
        content_type = request.headers.get("content-type", "application/json")
        fmt = "yaml" if any(t in content_type for t in _YAML_TYPES) else "json"
        try:
            report = platform.deploy_text(body.decode("utf-8"), fmt)
        except (PackageSyntaxError, SchemaError) as exc:
            # same 422 shape as a rejected package: one report, all diagnostics
            failure = ValidationReport()
            failure.error(exc.code.lower(), getattr(exc, "path", "<input>"), exc.message)
            return JSONResponse(status_code=422, content=failure.to_wire())
        return report.to_wire()

    @app.get("/classes")
    async def list_classes():
        return {"classes": platform.catalog.class_names()}

    @app.get("/classes/{name}")
    async def get_class(name: str):
        rc = platform.catalog.resolved(name)
        definition = platform.catalog.defs_snapshot()[name]
        cr = platform.runtime_manager.runtime_status(name)
        return {
            "name": rc.name,
            "ancestry": list(rc.ancestry),
            "definition": package_to_tree(_single(definition))["classes"][0],
            "effectiveFunctions": sorted(rc.effective_functions),
            "effectiveKeySpecs": [k.name for k in rc.effective_key_specs],
            "runtime": cr.to_wire() if cr else None,
        }

    # -- objects ------------------------------------------------------------

    @app.post("/classes/{name}/objects", status_code=201)
    async def create_object(name: str, request: Request):
        init_state = await _json_body(request, default={})
        if not isinstance(init_state, dict):
            raise SchemaError("<body>", "initial state must be a JSON object")
        record = platform.create_object(name, init_state)
        return record.to_wire()

    @app.get("/objects/{object_id}")
    async def get_object(object_id: str):
        return platform.get_object(object_id).to_wire()

    @app.post("/objects/{object_id}/invoke/{fn_name}")
    async def invoke(object_id: str, fn_name: str, request: Request):
        payload = await _json_body(request, default=None)
        # off the event loop: the engine blocks on the function runtime, and
        # that runtime may call back into this gateway for blob access
        response = await run_in_threadpool(platform.invoke, object_id, fn_name, payload)
        return response.to_wire()

    @app.post("/objects/{object_id}/invoke-async/{fn_name}", status_code=202)
    async def invoke_async(object_id: str, fn_name: str, request: Request):
        payload = await _json_body(request, default=None)
        task_id = platform.invoke_async(object_id, fn_name, payload)
        return {"taskId": task_id, "status": "PENDING"}

    @app.get("/tasks/{task_id}")
    async def task_status(task_id: str):
        return platform.task_status(task_id)

    # -- blobs ------------------------------------------------------------

    @app.post("/objects/{object_id}/blobs/{key}/presign")
    async def presign(object_id: str, key: str, request: Request):
        body = await _json_body(request, default={})
        mode = str(body.get("mode", "GET")).upper()
        ttl = int(body.get("ttlSeconds", platform.config.presign_ttl_s))
        url = platform.store.presign_blob(object_id, key, mode, ttl)
        return {"path": url.path, "mode": url.mode, "expires": url.expires, "sig": url.sig, "url": url.url}

    @app.get("/blobs/{object_id}/{key}")
    async def read_blob(object_id: str, key: str, request: Request):
        data = platform.read_blob(object_id, key, dict(request.query_params))
        return Response(content=data, media_type="application/octet-stream")

    @app.put("/blobs/{object_id}/{key}")
    async def write_blob(object_id: str, key: str, request: Request):
        data = await request.body()
        platform.write_blob(object_id, key, dict(request.query_params), data)
        return {"stored": True, "bytes": len(data)}

    # -- runtimes / templates / metrics ----------------------------------------

    @app.get("/runtimes")
    async def runtimes():
        return {"runtimes": [cr.to_wire() for cr in platform.runtime_manager.snapshots()]}

    @app.post("/templates")
    async def register_template(request: Request):
        body = await _json_body(request, default={})
        try:
            template = template_from_tree(body)
        except ValueError as exc:
            raise SchemaError("<body>", str(exc)) from exc
        platform.runtime_manager.register_template(template)
        return {"registered": template.name, "templates": [t.name for t in platform.runtime_manager.templates()]}

    @app.get("/metrics")
    async def metrics():
        lines = [f"{name} {value}" for name, value in sorted(platform.metrics().items())]
        return PlainTextResponse("\n".join(lines) + "\n")

    return app


def _single(definition) -> ClassPackage:
    return ClassPackage(classes=(definition,))


async def _json_body(request: Request, default):
    body = await request.body()
    if not body:
        return default
    try:
        return json.loads(body)
    except json.JSONDecodeError as exc:
        raise PackageSyntaxError(f"request body is not valid JSON: {exc.msg}", exc.lineno, exc.colno) from exc
