"""HTTP server speaking the platform's task wire protocol.

A task arrives as `POST /task` with the object's state, the request payload,
and presigned blob URLs. The named handler runs against a HandlerContext;
whatever `context.state` holds when it returns is serialized back as
`newState`. Handler exceptions become `status: "error"` replies, and the
request's `taskId` is echoed on every outcome. Handlers must be reentrant:
requests are served concurrently.
"""

from __future__ import annotations

import base64
import json
import threading
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable, Mapping


class HandlerContext:
    """What a handler sees: mutable state, the payload, and blob access."""

    def __init__(self, task: Mapping[str, Any]):
        self.task = task
        self.state: dict = dict(task.get("state") or {})
        payload = task.get("payload")
        if task.get("payloadEncoding") == "base64" and isinstance(payload, str):
            payload = base64.b64decode(payload)
        self.payload = payload
        self.blobs: Mapping[str, Mapping[str, str]] = task.get("blobs") or {}
        self.blobs_written: list[str] = []

    def get_blob(self, key: str) -> bytes:
        """Download a stored blob through its presigned GET URL."""
        url = self.blobs.get(key, {}).get("getUrl")
        if url is None:
            raise KeyError(f"no stored blob for key {key!r}")
        with urllib.request.urlopen(url) as response:
            return response.read()

    def put_blob(self, key: str, data: bytes) -> None:
        """Upload bytes through the key's presigned PUT URL."""
        url = self.blobs.get(key, {}).get("putUrl")
        if url is None:
            raise KeyError(f"no declared blob key {key!r}")
        request = urllib.request.Request(url, data=data, method="PUT")
        with urllib.request.urlopen(request):
            pass
        if key not in self.blobs_written:
            self.blobs_written.append(key)


Handler = Callable[[HandlerContext], Any]


def run_task(handlers: Mapping[str, Handler], task: Mapping[str, Any]) -> dict:
    """Dispatch one parsed task and build the reply wire form."""
    task_id = task.get("taskId", "")
    fn_name = task.get("fnName", "")
    handler = handlers.get(fn_name)
    if handler is None:
        return {
            "taskId": task_id,
            "status": "error",
            "error": {"code": "UNKNOWN_FUNCTION", "message": f"no handler for {fn_name!r}"},
        }
    context = HandlerContext(task)
    try:
        output = handler(context)
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
        "newState": context.state,
        "blobsWritten": list(context.blobs_written),
    }


def build_server(handlers: Mapping[str, Handler], port: int, host: str = "0.0.0.0") -> ThreadingHTTPServer:
    handler_map = dict(handlers)

    class TaskRequestHandler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _reply(self, status: int, body: dict) -> None:
            encoded = json.dumps(body).encode("utf-8")
            self.send_response(status)
            self.send_header("content-type", "application/json")
            self.send_header("content-length", str(len(encoded)))
            self.end_headers()
            self.wfile.write(encoded)

        def do_GET(self):
            if self.path == "/healthz":
                self._reply(200, {"ok": True, "functions": sorted(handler_map)})
            else:
                self._reply(404, {"error": "not found"})

        def do_POST(self):
            if self.path != "/task":
                self._reply(404, {"error": "not found"})
                return
            length = int(self.headers.get("content-length") or 0)
            raw = self.rfile.read(length)
            try:
                task = json.loads(raw)
            except ValueError:
                self._reply(400, {"error": "request body is not valid JSON"})
                return
            if not isinstance(task, dict) or "taskId" not in task or "fnName" not in task:
                self._reply(400, {"error": "task must be an object with taskId and fnName"})
                return
            self._reply(200, run_task(handler_map, task))

    return ThreadingHTTPServer((host, port), TaskRequestHandler)


def serve(handlers: Mapping[str, Handler], port: int, host: str = "0.0.0.0") -> ThreadingHTTPServer:
    """Start serving in a background thread; call .shutdown() to stop."""
    server = build_server(handlers, port, host)
    thread = threading.Thread(target=server.serve_forever, daemon=True, name=f"oaas-fn:{port}")
    thread.start()
    return server
