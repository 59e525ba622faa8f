"""In-process function runtime speaking the task wire protocol.

Lets the whole platform run and be tested without any external process: the
engine offloads to it through the same JSON wire form it would POST over
HTTP. Ships the stub handlers the test suite and demos use (counter,
deterministic state filler, sleep, byte-level blob transforms).
"""

from __future__ import annotations

import base64
import random
import time
from typing import Any, Callable, Mapping
from urllib.parse import parse_qsl, urlsplit

from .store import StateStore


class BlobGateway:
    """Resolves presigned URLs against a StateStore, signature checks included."""

    def __init__(self, store: StateStore):
        self.store = store

    @staticmethod
    def _parse(url: str) -> tuple[str, str, dict[str, str]]:
        parts = urlsplit(url)
        segments = parts.path.strip("/").split("/")
        if len(segments) != 3 or segments[0] != "blobs":
            raise ValueError(f"not a blob URL: {url}")
        return segments[1], segments[2], dict(parse_qsl(parts.query))

    def get(self, url: str) -> bytes:
        object_id, key, query = self._parse(url)
        return self.store.read_blob(object_id, key, query)

    def put(self, url: str, data: bytes) -> None:
        object_id, key, query = self._parse(url)
        self.store.write_blob(object_id, key, query, data)


class TaskContext:
    def __init__(self, task: Mapping[str, Any], blob_gateway: BlobGateway | None):
        self.task = task
        self.state: dict = dict(task.get("state") or {})
        payload = task.get("payload")
        if task.get("payloadEncoding") == "base64" and isinstance(payload, str):
            payload = base64.b64decode(payload)
        self.payload = payload
        self.blobs: Mapping[str, Mapping[str, str]] = task.get("blobs") or {}
        self.blobs_written: list[str] = []
        self._gateway = blob_gateway

    def get_blob(self, key: str) -> bytes:
        url = self.blobs.get(key, {}).get("getUrl")
        if url is None:
            raise KeyError(f"no stored blob for key {key!r}")
        assert self._gateway is not None, "runtime has no blob access configured"
        return self._gateway.get(url)

    def put_blob(self, key: str, data: bytes) -> None:
        url = self.blobs.get(key, {}).get("putUrl")
        if url is None:
            raise KeyError(f"no declared blob key {key!r}")
        assert self._gateway is not None, "runtime has no blob access configured"
        self._gateway.put(url, data)
        if key not in self.blobs_written:
            self.blobs_written.append(key)


Handler = Callable[[TaskContext], Any]


class LocalRuntime:
    def __init__(self, handlers: Mapping[str, Handler], blob_gateway: BlobGateway | None = None):
        self.handlers = dict(handlers)
        self.blob_gateway = blob_gateway
        self.calls = 0

    def handle(self, wire: dict) -> dict:
        self.calls += 1
        task_id = wire.get("taskId", "")
        handler = self.handlers.get(wire.get("fnName", ""))
        if handler is None:
            return {
                "taskId": task_id,
                "status": "error",
                "error": {"code": "UNKNOWN_FUNCTION", "message": f"no handler for {wire.get('fnName')!r}"},
            }
        ctx = TaskContext(wire, self.blob_gateway)
        try:
            output = handler(ctx)
        except Exception as exc:
            return {
                "taskId": task_id,
                "status": "error",
                "error": {"code": "HANDLER_ERROR", "message": str(exc)},
            }
        return {
            "taskId": task_id,
            "status": "ok",
            "output": output,
            "newState": ctx.state,
            "blobsWritten": list(ctx.blobs_written),
        }


# -- stub handlers -------------------------------------------------------------


def inc(ctx: TaskContext) -> dict:
    ctx.state["n"] = int(ctx.state.get("n", 0)) + 1
    return {"n": ctx.state["n"]}


def sleep_ms(ctx: TaskContext) -> dict:
    ms = float((ctx.payload or {}).get("ms", 0))
    time.sleep(ms / 1000.0)
    return {"sleptMs": ms}


def json_random(ctx: TaskContext) -> dict:
    """Fill the state with N pseudo-random fields from a seeded generator."""
    payload = ctx.payload or {}
    n = int(payload.get("fields", 8))
    seed = payload.get("seed", 0)
    rng = random.Random(seed)
    for i in range(n):
        ctx.state[f"f{i}"] = rng.random()
    return {"fields": n, "seed": seed}


def echo(ctx: TaskContext) -> Any:
    return ctx.payload


def fail(ctx: TaskContext) -> None:
    raise RuntimeError(str((ctx.payload or {}).get("message", "induced failure")))


def resize(ctx: TaskContext) -> dict:
    """Byte-level downscale stub: halve the blob, tag it, record the op in state."""
    data = ctx.get_blob("image")
    resized = b"RSZ1;" + data[: max(1, len(data) // 2)]
    ctx.put_blob("image", resized)
    ctx.state["resized"] = True
    return {"bytes": len(resized)}


def change_format(ctx: TaskContext) -> dict:
    fmt = str((ctx.payload or {}).get("format", "png"))
    ctx.state["format"] = fmt
    return {"format": fmt}


def detect_object(ctx: TaskContext) -> dict:
    labels = ["cat", "dog", "tree"]
    ctx.state["labels"] = labels
    return {"labels": labels}


def stub_handlers() -> dict[str, Handler]:
    return {
        "inc": inc,
        "sleep-ms": sleep_ms,
        "sleepMs": sleep_ms,
        "json-random": json_random,
        "jsonRandom": json_random,
        "echo": echo,
        "fail": fail,
        "resize": resize,
        "changeFormat": change_format,
        "detectObject": detect_object,
    }
