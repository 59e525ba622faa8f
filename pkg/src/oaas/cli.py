"""Command-line client for the platform's REST surface, plus `serve`.

Every command (apart from `serve` and the two-step blob transfer) maps onto
exactly one HTTP call; in ``--output json`` mode the response body is
printed byte-for-byte.
"""

from __future__ import annotations

import json
import os

import click
import httpx

DEFAULT_URL = os.environ.get("OAAS_URL", "http://127.0.0.1:8090")


def make_client(url: str) -> httpx.Client:
    # separate factory so tests can splice in an in-process transport
    return httpx.Client(base_url=url, timeout=60.0)


def _fail(ctx: click.Context, code: str, message: str) -> None:
    click.echo(json.dumps({"error": {"code": code, "message": message}}), err=True)
    ctx.exit(1)


def _request(ctx: click.Context, method: str, path: str, **kwargs) -> httpx.Response:
    client: httpx.Client = ctx.obj["client"]
    try:
        response = client.request(method, path, **kwargs)
    except httpx.HTTPError as exc:
        _fail(ctx, "CONNECTION", f"{exc}")
        raise AssertionError("unreachable")
    if response.status_code >= 400:
        body = None
        if response.content:
            try:
                body = response.json()
            except ValueError:
                body = None
        if isinstance(body, dict) and isinstance(body.get("error"), dict):
            error = body["error"]
            _fail(ctx, str(error.get("code", "ERROR")), str(error.get("message", "")))
        else:
            # validation report or plain text: show it whole
            click.echo(response.text, err=True)
            ctx.exit(1)
    return response


def _emit(ctx: click.Context, response: httpx.Response, text_fn=None) -> None:
    if ctx.obj["output"] == "json":
        click.echo(response.text)
    else:
        click.echo(text_fn(response.json()) if text_fn else response.text)


@click.group()
@click.option("--url", default=DEFAULT_URL, show_default=True, help="Gateway base URL.")
@click.option("--output", type=click.Choice(["json", "text"]), default="text", show_default=True)
@click.pass_context
def main(ctx: click.Context, url: str, output: str) -> None:
    """Deploy classes, create objects, invoke functions, move blobs."""
    ctx.ensure_object(dict)
    ctx.obj["output"] = output
    if ctx.invoked_subcommand != "serve":
        ctx.obj["client"] = make_client(url)


@main.command()
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
def deploy(ctx: click.Context, file: str) -> None:
    """Deploy a class package file (YAML or JSON)."""
    with open(file, "rb") as fh:
        body = fh.read()
    content_type = "application/json" if file.endswith(".json") else "application/yaml"
    response = _request(ctx, "POST", "/classes", content=body, headers={"content-type": content_type})
    _emit(
        ctx,
        response,
        lambda r: "\n".join(
            [f"deployed {r['classesDeployed']} class(es) in {r['elapsedMs']:.0f} ms"]
            + [
                f"  {name}: template {info['templateSelected']}"
                + (f" ({'; '.join(info['warnings'])})" if info["warnings"] else "")
                for name, info in r["perClass"].items()
            ]
        ),
    )


@main.group(name="class")
def class_group() -> None:
    """Inspect deployed classes."""


@class_group.command(name="list")
@click.pass_context
def class_list(ctx: click.Context) -> None:
    response = _request(ctx, "GET", "/classes")
    _emit(ctx, response, lambda r: "\n".join(r["classes"]) if r["classes"] else "(none)")


@class_group.command(name="get")
@click.argument("name")
@click.pass_context
def class_get(ctx: click.Context, name: str) -> None:
    response = _request(ctx, "GET", f"/classes/{name}")
    _emit(
        ctx,
        response,
        lambda r: "\n".join(
            [
                f"class {r['name']}" + (f" (inherits {' -> '.join(r['ancestry'])})" if r["ancestry"] else ""),
                f"  functions: {', '.join(r['effectiveFunctions'])}",
                f"  blob keys: {', '.join(r['effectiveKeySpecs']) or '(none)'}",
                f"  runtime: {r['runtime']['templateName']} x{r['runtime']['replicas']}" if r["runtime"] else "  runtime: none",
            ]
        ),
    )


@main.group(name="object")
def object_group() -> None:
    """Create and inspect objects."""


@object_group.command(name="create")
@click.argument("cls")
@click.option("--state", "state_file", type=click.Path(exists=True, dir_okay=False), help="Initial state JSON file.")
@click.pass_context
def object_create(ctx: click.Context, cls: str, state_file: str | None) -> None:
    init_state = {}
    if state_file:
        with open(state_file, "r", encoding="utf-8") as fh:
            init_state = json.load(fh)
    response = _request(ctx, "POST", f"/classes/{cls}/objects", json=init_state)
    _emit(ctx, response, lambda r: f"created {r['id']} (class {r['cls']}, version {r['version']})")


@object_group.command(name="get")
@click.argument("object_id")
@click.pass_context
def object_get(ctx: click.Context, object_id: str) -> None:
    response = _request(ctx, "GET", f"/objects/{object_id}")
    _emit(
        ctx,
        response,
        lambda r: "\n".join(
            [
                f"object {r['id']} class={r['cls']} version={r['version']}",
                f"  state: {json.dumps(r['state'])}",
                f"  blobs: {', '.join(r['blobKeys']) or '(none)'}",
            ]
        ),
    )


@main.command()
@click.argument("object_id")
@click.argument("fn")
@click.option("--payload", "payload_file", type=click.Path(exists=True, dir_okay=False), help="Payload JSON file.")
@click.option("--async", "async_", is_flag=True, help="Enqueue and return a task id.")
@click.pass_context
def invoke(ctx: click.Context, object_id: str, fn: str, payload_file: str | None, async_: bool) -> None:
    """Invoke a function on an object."""
    payload = None
    if payload_file:
        with open(payload_file, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    path = f"/objects/{object_id}/{'invoke-async' if async_ else 'invoke'}/{fn}"
    response = _request(ctx, "POST", path, json=payload)
    if async_:
        _emit(ctx, response, lambda r: f"task {r['taskId']} {r['status']}")
    else:
        _emit(
            ctx,
            response,
            lambda r: f"output={json.dumps(r['output'])} version={r['objectVersionAfter']} attempts={r['attempts']}",
        )


@main.group(name="task")
def task_group() -> None:
    """Poll async invocations."""


@task_group.command(name="get")
@click.argument("task_id")
@click.pass_context
def task_get(ctx: click.Context, task_id: str) -> None:
    response = _request(ctx, "GET", f"/tasks/{task_id}")
    _emit(ctx, response, lambda r: f"{r['status']}" + (f" output={json.dumps(r['response']['output'])}" if r.get("response") else ""))


@main.group()
def blob() -> None:
    """Upload/download object blobs through presigned URLs."""


def _presign(ctx: click.Context, object_id: str, key: str, mode: str) -> str:
    response = _request(ctx, "POST", f"/objects/{object_id}/blobs/{key}/presign", json={"mode": mode})
    return response.json()["url"]


@blob.command(name="put")
@click.argument("object_id")
@click.argument("key")
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
def blob_put(ctx: click.Context, object_id: str, key: str, file: str) -> None:
    url = _presign(ctx, object_id, key, "PUT")
    with open(file, "rb") as fh:
        data = fh.read()
    response = _request(ctx, "PUT", url, content=data)
    _emit(ctx, response, lambda r: f"stored {r['bytes']} bytes at {object_id}/{key}")


@blob.command(name="get")
@click.argument("object_id")
@click.argument("key")
@click.argument("file", type=click.Path(dir_okay=False))
@click.pass_context
def blob_get(ctx: click.Context, object_id: str, key: str, file: str) -> None:
    url = _presign(ctx, object_id, key, "GET")
    response = _request(ctx, "GET", url)
    with open(file, "wb") as fh:
        fh.write(response.content)
    if ctx.obj["output"] == "json":
        click.echo(json.dumps({"path": file, "bytes": len(response.content)}))
    else:
        click.echo(f"wrote {len(response.content)} bytes to {file}")


@main.group()
def runtime() -> None:
    """Class runtime status."""


@runtime.command(name="list")
@click.pass_context
def runtime_list(ctx: click.Context) -> None:
    response = _request(ctx, "GET", "/runtimes")
    _emit(
        ctx,
        response,
        lambda r: "\n".join(
            f"{cr['cls']}: {cr['templateName']} replicas={cr['replicas']} state={cr['state']}"
            for cr in r["runtimes"]
        )
        or "(none)",
    )


@main.command()
@click.pass_context
def metrics(ctx: click.Context) -> None:
    """Platform counters in flat `name value` form."""
    response = _request(ctx, "GET", "/metrics")
    click.echo(response.text.rstrip("\n"))


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="Platform config file.")
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
@click.option("--data-dir", default=None)
@click.option("--registry", "registry_path", default=None, help="Image -> endpoint registry file.")
@click.option("--templates", "template_path", default=None, help="Template catalog file.")
def serve(config_path, host, port, data_dir, registry_path, template_path) -> None:
    """Run the platform gateway."""
    import uvicorn

    from .config import load_config
    from .gateway import create_app
    from .service import Platform

    cfg = load_config(config_path)
    if host:
        cfg.host = host
    if port:
        cfg.port = port
    if data_dir:
        cfg.data_dir = data_dir
    if registry_path:
        cfg.registry_path = registry_path
    if template_path:
        cfg.template_catalog_path = template_path

    platform = Platform(cfg).start()
    try:
        uvicorn.run(create_app(platform), host=cfg.host, port=cfg.port, log_level="warning")
    finally:
        platform.stop()


if __name__ == "__main__":
    main()
