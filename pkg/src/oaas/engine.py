"""Invocation pipeline: build a self-contained task, offload it, commit the result.

A task bundles the object's state copy, the request payload, and presigned
blob URLs, so a function runtime needs no callback to the platform beyond
blob access. The pipeline is fail-safe: nothing mutates until the returned
state commits through a versioned compare-and-swap; on conflict the task is
rebuilt from a fresh read and re-offloaded (function runtimes must tolerate
re-execution). Macro functions execute a compiled dataflow plan stage by
stage, steps within a stage dispatched concurrently.
"""

from __future__ import annotations

import base64
import json
import random
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Protocol

import httpx

from .cache import DhtCache
from .classmodel import (
    DataflowPlan,
    FunctionDef,
    FunctionKind,
    ResolvedClass,
    SELF_TARGET,
    substitute_refs,
)
from .errors import (
    ConflictRetriesExhausted,
    FunctionFailed,
    MalformedResult,
    NotFound,
    OaasError,
    RuntimeTimeout,
    RuntimeUnreachable,
    StepFailed,
    UnknownFunction,
    UnresolvedImage,
    VersionConflict,
)
from .store import ObjectRecord, StateStore

INPROC_SCHEME = "inproc://"


@dataclass(frozen=True)
class InvocationTask:
    task_id: str
    object_id: str
    cls: str
    fn_name: str
    state: dict
    payload: Any
    payload_encoding: str  # "json" | "base64"
    blobs: Mapping[str, Mapping[str, str]]
    deadline_ms: int
    base_version: int  # internal: the version the state copy was taken at

    def to_wire(self) -> dict:
        payload = self.payload
        if self.payload_encoding == "base64" and isinstance(payload, (bytes, bytearray)):
            payload = base64.b64encode(bytes(payload)).decode("ascii")
        return {
            "taskId": self.task_id,
            "objectId": self.object_id,
            "cls": self.cls,
            "fnName": self.fn_name,
            "state": self.state,
            "payload": payload,
            "payloadEncoding": self.payload_encoding,
            "blobs": {k: dict(v) for k, v in self.blobs.items()},
            "deadlineMs": self.deadline_ms,
        }


@dataclass(frozen=True)
class TaskResult:
    task_id: str
    status: str  # "ok" | "error"
    output: Any = None
    new_state: dict | None = None
    error: Mapping[str, str] | None = None
    blobs_written: tuple[str, ...] = ()

    @classmethod
    def from_wire(cls, raw: Any) -> "TaskResult":
        if not isinstance(raw, Mapping):
            raise MalformedResult(f"expected a JSON object, got {type(raw).__name__}")
        task_id = raw.get("taskId")
        if not isinstance(task_id, str):
            raise MalformedResult("missing taskId")
        status = raw.get("status")
        if status not in ("ok", "error"):
            raise MalformedResult(f"status must be 'ok' or 'error', got {status!r}")
        new_state = raw.get("newState")
        if status == "ok" and not isinstance(new_state, dict):
            raise MalformedResult("ok result must carry newState")
        error = raw.get("error")
        if status == "error":
            if not isinstance(error, Mapping) or "code" not in error:
                raise MalformedResult("error result must carry {code, message}")
        blobs_written = raw.get("blobsWritten") or ()
        if not isinstance(blobs_written, (list, tuple)):
            raise MalformedResult("blobsWritten must be a list")
        return cls(
            task_id=task_id,
            status=status,
            output=raw.get("output"),
            new_state=new_state,
            error=error,
            blobs_written=tuple(blobs_written),
        )


@dataclass(frozen=True)
class Timings:
    queue_ms: float = 0.0
    exec_ms: float = 0.0
    commit_ms: float = 0.0

    def to_wire(self) -> dict:
        return {"queueMs": self.queue_ms, "execMs": self.exec_ms, "commitMs": self.commit_ms}


@dataclass(frozen=True)
class InvocationResponse:
    output: Any
    object_version_after: int
    attempts: int
    timings: Timings

    def to_wire(self) -> dict:
        return {
            "output": self.output,
            "objectVersionAfter": self.object_version_after,
            "attempts": self.attempts,
            "timings": self.timings.to_wire(),
        }


class InProcessRuntime(Protocol):
    def handle(self, wire: dict) -> dict: ...


class RuntimeRegistry:
    """Deploy-time mapping from container-image strings to runtime endpoints.

    Endpoints are plain HTTP URLs or ``inproc://name`` references to runtimes
    registered in this process (used by tests and demos).
    """

    def __init__(self):
        self._images: dict[str, str] = {}
        self._inproc: dict[str, InProcessRuntime] = {}

    def register_image(self, image: str, endpoint: str) -> None:
        self._images[image] = endpoint

    def register_runtime(self, name: str, runtime: InProcessRuntime) -> str:
        self._inproc[name] = runtime
        return f"{INPROC_SCHEME}{name}"

    def load_file(self, path: str) -> None:
        """Registry file: JSON mapping, or lines of "image-string endpoint-url"."""
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
        if path.endswith(".json"):
            for image, endpoint in json.loads(text).items():
                self.register_image(image, endpoint)
            return
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'image-string endpoint-url'")
            self.register_image(parts[0], parts[1])

    def resolvable(self, fn: FunctionDef) -> bool:
        return fn.endpoint is not None or fn.image in self._images

    def endpoint_for(self, fn: FunctionDef) -> str:
        if fn.endpoint is not None:
            return fn.endpoint
        if fn.image is not None and fn.image in self._images:
            return self._images[fn.image]
        raise UnresolvedImage(fn.image or fn.name)

    def inproc_runtime(self, endpoint: str) -> InProcessRuntime | None:
        if endpoint.startswith(INPROC_SCHEME):
            return self._inproc.get(endpoint[len(INPROC_SCHEME):])
        return None


def build_task(
    record: ObjectRecord,
    fn: FunctionDef,
    payload: Any,
    rc: ResolvedClass,
    *,
    presign: Callable[[str, str, str, int], Any],
    stored_keys: set[str],
    deadline_ms: int,
    presign_ttl_s: int,
    base_url: str = "",
    payload_encoding: str = "json",
) -> InvocationTask:
    """Bundle state and request into a standalone task.

    The state is deep-copied at the record's version; every declared blob key
    gets a presigned PUT URL and, when its blob is already stored, a GET URL.
    """
    blobs: dict[str, dict[str, str]] = {}
    for ks in rc.effective_key_specs:
        entry: dict[str, str] = {}
        if ks.name in stored_keys:
            entry["getUrl"] = base_url + presign(record.id, ks.name, "GET", presign_ttl_s).url
        entry["putUrl"] = base_url + presign(record.id, ks.name, "PUT", presign_ttl_s).url
        blobs[ks.name] = entry
    return InvocationTask(
        task_id=uuid.uuid4().hex,
        object_id=record.id,
        cls=record.cls,
        fn_name=fn.name,
        state=json.loads(json.dumps(record.state)),
        payload=payload,
        payload_encoding=payload_encoding,
        blobs=blobs,
        deadline_ms=deadline_ms,
        base_version=record.version,
    )


class HttpTransport:
    def __init__(self):
        self._client = httpx.Client()

    def post_task(self, endpoint: str, wire: dict, deadline_ms: int) -> Any:
        url = endpoint.rstrip("/") + "/task"
        try:
            response = self._client.post(url, json=wire, timeout=deadline_ms / 1000.0)
        except (httpx.ConnectError, httpx.UnsupportedProtocol) as exc:
            raise RuntimeUnreachable(endpoint, str(exc)) from exc
        except httpx.TimeoutException as exc:
            raise RuntimeTimeout(endpoint, deadline_ms) from exc
        except httpx.HTTPError as exc:
            raise RuntimeUnreachable(endpoint, str(exc)) from exc
        if response.status_code != 200:
            raise MalformedResult(f"runtime answered HTTP {response.status_code}")
        try:
            return response.json()
        except ValueError as exc:
            raise MalformedResult(f"response body is not JSON: {exc}") from exc

    def close(self) -> None:
        self._client.close()


def offload(
    task: InvocationTask,
    endpoint: str,
    *,
    registry: RuntimeRegistry,
    transport: HttpTransport,
) -> TaskResult:
    """One POST of the task wire form; the reply parses into a TaskResult."""
    wire = task.to_wire()
    runtime = registry.inproc_runtime(endpoint)
    if runtime is not None:
        # round-trip through JSON so in-process runtimes see exactly the wire form
        started = time.monotonic()
        try:
            raw = json.loads(json.dumps(runtime.handle(json.loads(json.dumps(wire)))))
        except OaasError:
            raise
        except Exception as exc:
            raise MalformedResult(f"in-process runtime raised {exc!r}") from exc
        if (time.monotonic() - started) * 1000.0 > task.deadline_ms:
            raise RuntimeTimeout(endpoint, task.deadline_ms)
    elif endpoint.startswith(INPROC_SCHEME):
        raise RuntimeUnreachable(endpoint, "no such in-process runtime")
    else:
        raw = transport.post_task(endpoint, wire, task.deadline_ms)
    result = TaskResult.from_wire(raw)
    if result.task_id != task.task_id:
        raise MalformedResult(f"taskId echo mismatch: sent {task.task_id}, got {result.task_id}")
    return result


@dataclass
class _StepOutcome:
    output: Any
    version_after: int
    attempts: int
    exec_ms: float
    commit_ms: float


class InvocationEngine:
    def __init__(
        self,
        *,
        store: StateStore,
        cache: DhtCache,
        catalog,  # DeployedCatalog (service module); duck-typed to avoid a cycle
        registry: RuntimeRegistry,
        runtime_manager=None,
        conflict_retries: int = 5,
        retry_backoff_ms: float = 5.0,
        task_deadline_ms: int = 30_000,
        presign_ttl_s: int = 600,
        dataflow_parallelism: int = 16,
        async_workers: int = 8,
        base_url: str = "",
        rng: random.Random | None = None,
    ):
        self.store = store
        self.cache = cache
        self.catalog = catalog
        self.registry = registry
        self.runtime_manager = runtime_manager
        self.conflict_retries = conflict_retries
        self.retry_backoff_ms = retry_backoff_ms
        self.task_deadline_ms = task_deadline_ms
        self.presign_ttl_s = presign_ttl_s
        self.base_url = base_url
        self.transport = HttpTransport()
        self._rng = rng or random.Random()
        self._dataflow_pool = ThreadPoolExecutor(max_workers=dataflow_parallelism, thread_name_prefix="dataflow")
        self._async_pool = ThreadPoolExecutor(max_workers=async_workers, thread_name_prefix="invoke-async")
        self._async_tasks: dict[str, dict] = {}
        self._async_lock = threading.Lock()

    def close(self) -> None:
        self._dataflow_pool.shutdown(wait=False)
        self._async_pool.shutdown(wait=False)
        self.transport.close()

    # -- public entry points ---------------------------------------------------

    def invoke(self, object_id: str, fn_name: str, payload: Any = None, *, payload_encoding: str = "json") -> InvocationResponse:
        node_id = self.cache.owner_of(object_id)
        record = self.cache.get(node_id, object_id)
        rc = self.catalog.resolved(record.cls)
        fn = rc.function(fn_name)
        if fn.kind is FunctionKind.MACRO:
            return self.execute_dataflow(object_id, fn_name, payload)

        endpoint = self.registry.endpoint_for(fn)
        queue_start = time.monotonic()
        self._admit(record.cls)
        queue_ms = (time.monotonic() - queue_start) * 1000.0
        started = time.monotonic()
        ok = False
        try:
            outcome = self._run_task_fn(object_id, fn, payload, payload_encoding, endpoint)
            ok = True
            return InvocationResponse(
                output=outcome.output,
                object_version_after=outcome.version_after,
                attempts=outcome.attempts,
                timings=Timings(queue_ms=queue_ms, exec_ms=outcome.exec_ms, commit_ms=outcome.commit_ms),
            )
        finally:
            self._release(record.cls)
            self._record(record.cls, (time.monotonic() - started) * 1000.0, ok)

    def invoke_async(self, object_id: str, fn_name: str, payload: Any = None, *, payload_encoding: str = "json") -> str:
        task_id = uuid.uuid4().hex
        with self._async_lock:
            self._async_tasks[task_id] = {"status": "PENDING"}

        def run() -> None:
            try:
                response = self.invoke(object_id, fn_name, payload, payload_encoding=payload_encoding)
                update = {"status": "OK", "response": response.to_wire()}
            except OaasError as exc:
                update = {"status": "ERROR", "error": exc.to_wire()}
            except Exception as exc:  # defensive: surface, don't lose
                update = {"status": "ERROR", "error": {"code": "INTERNAL", "message": str(exc)}}
            with self._async_lock:
                self._async_tasks[task_id].update(update)

        self._async_pool.submit(run)
        return task_id

    def task_status(self, task_id: str) -> dict:
        with self._async_lock:
            status = self._async_tasks.get(task_id)
            if status is None:
                raise NotFound(f"task {task_id}")
            return dict(status)

    def execute_dataflow(self, object_id: str, fn_name: str, payload: Any = None) -> InvocationResponse:
        node_id = self.cache.owner_of(object_id)
        record = self.cache.get(node_id, object_id)
        rc = self.catalog.resolved(record.cls)
        fn = rc.function(fn_name)
        if fn.kind is not FunctionKind.MACRO:
            raise UnknownFunction(f"{fn_name} (not a macro)", rc.name)
        plan: DataflowPlan = self.catalog.plan(record.cls, fn_name)

        queue_start = time.monotonic()
        self._admit(record.cls)
        queue_ms = (time.monotonic() - queue_start) * 1000.0
        started = time.monotonic()
        ok = False
        try:
            outputs: dict[str, Any] = {}
            commit_ms = 0.0
            attempts = 0
            for stage in plan.stages:
                # steps inside a stage share no data dependency; dispatch all,
                # then fail on the first error in stage order
                futures = {
                    alias: self._dataflow_pool.submit(
                        self._run_step, plan.steps[alias], object_id, payload, dict(outputs)
                    )
                    for alias in stage
                }
                failures: list[tuple[str, Exception]] = []
                for alias in stage:
                    try:
                        outcome = futures[alias].result()
                        outputs[alias] = outcome.output
                        commit_ms += outcome.commit_ms
                        attempts += outcome.attempts
                    except Exception as exc:
                        failures.append((alias, exc))
                if failures:
                    alias, exc = failures[0]
                    raise StepFailed(alias, exc)
            version_after = self.store.get_object(object_id).version
            ok = True
            return InvocationResponse(
                output=outputs.get(plan.output),
                object_version_after=version_after,
                attempts=max(attempts, 1),
                timings=Timings(
                    queue_ms=queue_ms,
                    exec_ms=(time.monotonic() - started) * 1000.0,
                    commit_ms=commit_ms,
                ),
            )
        finally:
            self._release(record.cls)
            self._record(record.cls, (time.monotonic() - started) * 1000.0, ok)

    # -- internals ------------------------------------------------------------

    def _admit(self, cls: str) -> None:
        if self.runtime_manager is not None:
            self.runtime_manager.acquire(cls)

    def _release(self, cls: str) -> None:
        if self.runtime_manager is not None:
            self.runtime_manager.release(cls)

    def _record(self, cls: str, latency_ms: float, ok: bool) -> None:
        if self.runtime_manager is not None:
            self.runtime_manager.record_invocation(cls, latency_ms, ok)

    def _run_step(self, step, root_object_id: str, macro_payload: Any, outputs: Mapping[str, Any]) -> _StepOutcome:
        """Execute one dataflow step; bound late so "$alias" targets dispatch
        polymorphically on the object they name at runtime."""
        if step.target == SELF_TARGET:
            target_id = root_object_id
        else:
            target_value = outputs[step.target[1:]]
            if not isinstance(target_value, str):
                raise TypeError(
                    f"step {step.alias!r} targets {step.target!r}, which is not an object id: {target_value!r}"
                )
            target_id = target_value
        args = substitute_refs(step.args, outputs, root_object_id)
        if args is None:
            args = macro_payload
        record = self.cache.get(self.cache.owner_of(target_id), target_id)
        rc = self.catalog.resolved(record.cls)
        fn = rc.function(step.use)
        if fn.kind is not FunctionKind.TASK:
            raise UnknownFunction(f"{step.use} (macro steps must use task functions)", rc.name)
        endpoint = self.registry.endpoint_for(fn)
        return self._run_task_fn(target_id, fn, args, "json", endpoint)

    def _run_task_fn(
        self,
        object_id: str,
        fn: FunctionDef,
        payload: Any,
        payload_encoding: str,
        endpoint: str,
    ) -> _StepOutcome:
        """The fail-safe core: read, build, offload, commit; retry on conflict."""
        node_id = self.cache.owner_of(object_id)
        record = self.cache.get(node_id, object_id)
        attempts = 0
        exec_ms = 0.0
        commit_ms = 0.0
        while True:
            attempts += 1
            task = build_task(
                record,
                fn,
                payload,
                self.catalog.resolved(record.cls),
                presign=self.store.presign_blob,
                stored_keys=self.store.stored_blob_keys(object_id),
                deadline_ms=self.task_deadline_ms,
                presign_ttl_s=self.presign_ttl_s,
                base_url=self.base_url,
                payload_encoding=payload_encoding,
            )
            exec_start = time.monotonic()
            result = offload(task, endpoint, registry=self.registry, transport=self.transport)
            exec_ms += (time.monotonic() - exec_start) * 1000.0

            if result.status == "error":
                error = result.error or {}
                raise FunctionFailed(str(error.get("code", "UNKNOWN")), str(error.get("message", "")))

            assert result.new_state is not None
            if result.new_state == record.state:
                # nothing changed; committing would only churn versions
                return _StepOutcome(result.output, record.version, attempts, exec_ms, commit_ms)

            commit_start = time.monotonic()
            token = self.store.begin_transition(object_id, task.base_version)
            try:
                committed = self.store.commit_transition(token, result.new_state)
                commit_ms += (time.monotonic() - commit_start) * 1000.0
                self.cache.put(node_id, committed)
                return _StepOutcome(result.output, committed.version, attempts, exec_ms, commit_ms)
            except VersionConflict:
                commit_ms += (time.monotonic() - commit_start) * 1000.0
                if attempts >= self.conflict_retries:
                    raise ConflictRetriesExhausted(attempts) from None
                time.sleep(self._rng.random() * self.retry_backoff_ms * attempts / 1000.0)
                record = self.store.get_object(object_id)  # canonical re-read
                self.cache.put(node_id, record)
