"""Class runtimes: template catalog, requirement matching, autoscaling.

A template is a predicate over a class's declared requirements plus the
runtime configuration to apply when it matches. Deploying a class picks the
highest-priority matching template and provisions a dedicated class runtime:
a logical replica count realized as an adjustable admission semaphore on the
invocation path, plus the persistence/flush settings pushed down to the
store and cache.

Scaling is deliberately stateless: the replica count is always the
clamp/ceil function of the last metrics window, with idle detection as the
only carried state (scale-to-zero after ``idle_timeout``).
"""

from __future__ import annotations

import json
import math
import threading
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Mapping

import yaml

from .errors import DuplicatePriority, NoMatchingTemplate, Saturated
from .classmodel import ResolvedClass
from .store import PersistenceMode

_OPS = {"eq", "gte", "lte"}
_OP_ALIASES = {"==": "eq", ">=": "gte", "<=": "lte", "eq": "eq", "gte": "gte", "lte": "lte"}
_FIELDS = {"throughput", "availability", "latencyMs", "persistent", "budget", "region"}


@dataclass(frozen=True)
class RuntimeConfig:
    persistence_mode: PersistenceMode = PersistenceMode.WRITE_THROUGH
    initial_replicas: int = 1
    max_replicas: int = 4
    batch_size: int = 100
    flush_interval_ms: int = 50
    per_replica_capacity_rps: float = 50.0

    def to_wire(self) -> dict:
        return {
            "persistenceMode": self.persistence_mode.value,
            "initialReplicas": self.initial_replicas,
            "maxReplicas": self.max_replicas,
            "batchSize": self.batch_size,
            "flushIntervalMs": self.flush_interval_ms,
            "perReplicaCapacityRps": self.per_replica_capacity_rps,
        }


@dataclass(frozen=True)
class TemplateSpec:
    name: str
    priority: int
    match: tuple[tuple[str, str, object], ...]  # (field, op, value) conjunction
    config: RuntimeConfig

    def matches(self, rc: ResolvedClass) -> bool:
        declared = declared_requirements(rc)
        for fld, op, expected in self.match:
            actual = declared.get(fld)
            if actual is None:
                return False
            if op == "eq":
                if actual != expected:
                    return False
            elif op == "gte":
                if not (actual >= expected):  # type: ignore[operator]
                    return False
            elif op == "lte":
                if not (actual <= expected):  # type: ignore[operator]
                    return False
        return True

    def to_wire(self) -> dict:
        return {
            "name": self.name,
            "priority": self.priority,
            "match": {fld: {op: value} for fld, op, value in self.match},
            "config": self.config.to_wire(),
        }


def declared_requirements(rc: ResolvedClass) -> dict[str, object]:
    """Requirement vector seen by template predicates: declared values only.

    A class that never mentions ``persistent`` behaves as non-persistent at
    runtime but does not match ``persistent == false`` conditions; the
    catch-all template picks it up instead.
    """
    q, c = rc.effective_qos, rc.effective_constraint
    out: dict[str, object] = {}
    if q.throughput is not None:
        out["throughput"] = q.throughput
    if q.availability is not None:
        out["availability"] = q.availability
    if q.latency_ms is not None:
        out["latencyMs"] = q.latency_ms
    if c.persistent is not None:
        out["persistent"] = c.persistent
    if c.budget is not None:
        out["budget"] = c.budget
    if c.region is not None:
        out["region"] = c.region
    return out


class RuntimeState(str, Enum):
    PROVISIONING = "PROVISIONING"
    READY = "READY"
    SCALING = "SCALING"


@dataclass
class ClassRuntime:
    cls: str
    template_name: str
    replicas: int
    state: RuntimeState
    effective_config: RuntimeConfig
    idle_since: float | None = None
    cold_starts: int = 0
    created_at: float = field(default_factory=time.time)

    def to_wire(self) -> dict:
        return {
            "cls": self.cls,
            "templateName": self.template_name,
            "replicas": self.replicas,
            "state": self.state.value,
            "coldStarts": self.cold_starts,
            "effectiveConfig": self.effective_config.to_wire(),
        }


@dataclass(frozen=True)
class MetricsWindow:
    cls: str
    window_ms: int
    observed_rps: float
    p95_latency_ms: float
    error_rate: float


@dataclass(frozen=True)
class ScalingDecision:
    new_replicas: int
    reason: str


def autoscale_step(
    cr: ClassRuntime,
    m: MetricsWindow,
    *,
    now: float | None = None,
    idle_timeout_s: float = 30.0,
) -> ScalingDecision:
    """Pure scaling rule: clamp(ceil(rps / capacity), 1, max), 0 when idle long enough."""
    now = time.monotonic() if now is None else now
    cfg = cr.effective_config
    if m.observed_rps <= 0:
        idle_since = cr.idle_since if cr.idle_since is not None else now
        if now - idle_since >= idle_timeout_s:
            return ScalingDecision(0, f"idle for >= {idle_timeout_s}s; scale to zero")
        return ScalingDecision(1, "idle, within timeout")
    wanted = math.ceil(m.observed_rps / cfg.per_replica_capacity_rps)
    new = max(1, min(wanted, cfg.max_replicas))
    return ScalingDecision(new, f"observed {m.observed_rps:.1f} rps / {cfg.per_replica_capacity_rps:.0f} per replica")


class AdjustableSemaphore:
    """Counting semaphore whose capacity can be resized while held.

    Scale-down never cancels in-flight permits; acquirers simply wait until
    the in-flight count drops below the new capacity.
    """

    def __init__(self, capacity: int):
        self._capacity = capacity
        self._in_flight = 0
        self._cond = threading.Condition()

    @property
    def capacity(self) -> int:
        return self._capacity

    @property
    def in_flight(self) -> int:
        return self._in_flight

    def set_capacity(self, capacity: int) -> None:
        with self._cond:
            self._capacity = capacity
            self._cond.notify_all()

    def acquire(self, timeout: float | None = None) -> bool:
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            while self._in_flight >= self._capacity:
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    return False
                self._cond.wait(timeout=remaining)
            self._in_flight += 1
            return True

    def release(self) -> None:
        with self._cond:
            self._in_flight -= 1
            self._cond.notify_all()


def default_catalog() -> list[TemplateSpec]:
    """Shipped templates: a catch-all, an in-memory fast path, and a
    write-behind profile for persistent high-throughput classes."""
    return [
        TemplateSpec(
            name="default",
            priority=0,
            match=(),
            config=RuntimeConfig(
                persistence_mode=PersistenceMode.WRITE_THROUGH,
                initial_replicas=1,
                max_replicas=4,
            ),
        ),
        TemplateSpec(
            name="ephemeral-fast",
            priority=5,
            match=(("persistent", "eq", False),),
            config=RuntimeConfig(
                persistence_mode=PersistenceMode.MEMORY_ONLY,
                initial_replicas=1,
                max_replicas=8,
            ),
        ),
        TemplateSpec(
            name="persistent-throughput",
            priority=10,
            match=(("persistent", "eq", True), ("throughput", "gte", 50)),
            config=RuntimeConfig(
                persistence_mode=PersistenceMode.WRITE_BEHIND,
                initial_replicas=1,
                max_replicas=8,
                batch_size=100,
                flush_interval_ms=50,
            ),
        ),
    ]


def template_from_tree(raw: Mapping, path: str = "template") -> TemplateSpec:
    name = raw.get("name")
    if not isinstance(name, str) or not name:
        raise ValueError(f"{path}.name must be a nonempty string")
    priority = raw.get("priority", 0)
    if not isinstance(priority, int):
        raise ValueError(f"{path}.priority must be an integer")
    match_raw = raw.get("match") or {}
    conditions: list[tuple[str, str, object]] = []
    for fld, cond in match_raw.items():
        if fld not in _FIELDS:
            raise ValueError(f"{path}.match: unknown field {fld!r}")
        if not isinstance(cond, Mapping) or len(cond) != 1:
            raise ValueError(f"{path}.match.{fld} must be a single {{op: value}} mapping")
        (op_raw, value), = cond.items()
        op = _OP_ALIASES.get(str(op_raw))
        if op not in _OPS:
            raise ValueError(f"{path}.match.{fld}: unsupported op {op_raw!r}")
        if op != "eq" and not isinstance(value, (int, float)):
            raise ValueError(f"{path}.match.{fld}: ordering comparisons need numeric values")
        conditions.append((fld, op, value))
    cfg_raw = raw.get("config") or {}
    config = RuntimeConfig(
        persistence_mode=PersistenceMode(cfg_raw.get("persistenceMode", "WRITE_THROUGH")),
        initial_replicas=int(cfg_raw.get("initialReplicas", 1)),
        max_replicas=int(cfg_raw.get("maxReplicas", 4)),
        batch_size=int(cfg_raw.get("batchSize", 100)),
        flush_interval_ms=int(cfg_raw.get("flushIntervalMs", 50)),
        per_replica_capacity_rps=float(cfg_raw.get("perReplicaCapacityRps", 50.0)),
    )
    return TemplateSpec(name=name, priority=priority, match=tuple(conditions), config=config)


def load_template_catalog(path: str) -> list[TemplateSpec]:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    tree = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
    if not isinstance(tree, Mapping) or not isinstance(tree.get("templates"), list):
        raise ValueError(f"{path}: expected a mapping with a 'templates' list")
    return [template_from_tree(t, f"templates[{i}]") for i, t in enumerate(tree["templates"])]


class RuntimeManager:
    def __init__(
        self,
        *,
        idle_timeout_s: float = 30.0,
        metrics_window_ms: int = 1000,
        admission_timeout_s: float = 30.0,
        cold_start_ms: float = 0.0,
        clock: Callable[[], float] = time.monotonic,
        on_provision: Callable[[str, RuntimeConfig], None] | None = None,
    ):
        self.idle_timeout_s = idle_timeout_s
        self.metrics_window_ms = metrics_window_ms
        self.admission_timeout_s = admission_timeout_s
        self.cold_start_ms = cold_start_ms
        self._clock = clock
        self._on_provision = on_provision  # pushes persistence/flush config down
        self._templates: dict[str, TemplateSpec] = {}
        self._runtimes: dict[str, ClassRuntime] = {}
        self._semaphores: dict[str, AdjustableSemaphore] = {}
        self._events: dict[str, list[tuple[float, float, bool]]] = {}
        self._lock = threading.Lock()
        self.cold_start_total = 0
        self.invocations_total = 0
        self.invocation_errors_total = 0

    # -- template catalog ------------------------------------------------------

    def register_template(self, t: TemplateSpec) -> list[TemplateSpec]:
        with self._lock:
            for existing in self._templates.values():
                if existing.priority == t.priority and existing.name != t.name:
                    raise DuplicatePriority(t.priority, existing.name)
            self._templates[t.name] = t
            return self.templates()

    def templates(self) -> list[TemplateSpec]:
        return sorted(self._templates.values(), key=lambda t: -t.priority)

    def select_template(self, rc: ResolvedClass) -> TemplateSpec:
        """Highest-priority template whose predicate the class satisfies."""
        for t in self.templates():  # sorted by priority, descending
            if t.matches(rc):
                return t
        raise NoMatchingTemplate(rc.name)

    # -- provisioning -----------------------------------------------------------

    def provision(self, rc: ResolvedClass, t: TemplateSpec | None = None) -> ClassRuntime:
        t = t or self.select_template(rc)
        cr = ClassRuntime(
            cls=rc.name,
            template_name=t.name,
            replicas=t.config.initial_replicas,
            state=RuntimeState.PROVISIONING,
            effective_config=t.config,
        )
        if self._on_provision is not None:
            self._on_provision(rc.name, t.config)
        with self._lock:
            existing_sem = self._semaphores.get(rc.name)
            if existing_sem is None:
                self._semaphores[rc.name] = AdjustableSemaphore(cr.replicas)
            else:
                existing_sem.set_capacity(cr.replicas)
            cr.state = RuntimeState.READY
            self._runtimes[rc.name] = cr
            self._events.setdefault(rc.name, [])
        return cr

    def runtime_status(self, cls: str) -> ClassRuntime | None:
        return self._runtimes.get(cls)

    def snapshots(self) -> list[ClassRuntime]:
        return [replace(cr) for cr in self._runtimes.values()]

    # -- admission -----------------------------------------------------------

    def acquire(self, cls: str, timeout: float | None = None) -> None:
        cr = self._runtimes.get(cls)
        sem = self._semaphores.get(cls)
        if cr is None or sem is None:
            return  # class without a provisioned runtime is unthrottled
        if cr.replicas == 0:
            self._cold_start(cr, sem)
        timeout = self.admission_timeout_s if timeout is None else timeout
        if not sem.acquire(timeout=timeout):
            raise Saturated(cls, retry_after_s=1.0)

    def release(self, cls: str) -> None:
        sem = self._semaphores.get(cls)
        if sem is not None:
            sem.release()

    def _cold_start(self, cr: ClassRuntime, sem: AdjustableSemaphore) -> None:
        with self._lock:
            if cr.replicas == 0:
                if self.cold_start_ms > 0:
                    time.sleep(self.cold_start_ms / 1000.0)
                cr.replicas = 1
                cr.idle_since = None
                cr.cold_starts += 1
                self.cold_start_total += 1
                sem.set_capacity(1)

    # -- monitoring feedback -----------------------------------------------------------

    def record_invocation(self, cls: str, latency_ms: float, ok: bool) -> None:
        now = self._clock()
        with self._lock:
            self.invocations_total += 1
            if not ok:
                self.invocation_errors_total += 1
            events = self._events.setdefault(cls, [])
            events.append((now, latency_ms, ok))
            horizon = now - self.metrics_window_ms / 1000.0
            while events and events[0][0] < horizon:
                events.pop(0)

    def metrics_window(self, cls: str, now: float | None = None) -> MetricsWindow:
        now = self._clock() if now is None else now
        horizon = now - self.metrics_window_ms / 1000.0
        with self._lock:
            events = [e for e in self._events.get(cls, []) if e[0] >= horizon]
        if not events:
            return MetricsWindow(cls, self.metrics_window_ms, 0.0, 0.0, 0.0)
        latencies = sorted(lat for _, lat, _ in events)
        p95 = latencies[min(len(latencies) - 1, int(math.ceil(0.95 * len(latencies))) - 1)]
        errors = sum(1 for _, _, ok in events if not ok)
        rps = len(events) / (self.metrics_window_ms / 1000.0)
        return MetricsWindow(cls, self.metrics_window_ms, rps, p95, errors / len(events))

    # -- control loop -----------------------------------------------------------

    def tick(self, cls: str, window: MetricsWindow | None = None, now: float | None = None) -> ScalingDecision:
        """One autoscaler step: bookkeeping, decision, apply."""
        cr = self._runtimes[cls]
        now = self._clock() if now is None else now
        window = self.metrics_window(cls, now=now) if window is None else window
        if window.observed_rps > 0:
            cr.idle_since = None
        elif cr.idle_since is None:
            cr.idle_since = now
        decision = autoscale_step(cr, window, now=now, idle_timeout_s=self.idle_timeout_s)
        self.apply_scaling(cr, decision)
        return decision

    def apply_scaling(self, cr: ClassRuntime, decision: ScalingDecision) -> None:
        if decision.new_replicas == cr.replicas:
            return
        sem = self._semaphores.get(cr.cls)
        cr.state = RuntimeState.SCALING
        cr.replicas = decision.new_replicas
        if sem is not None:
            sem.set_capacity(decision.new_replicas)
        cr.state = RuntimeState.READY


class AutoscalerLoop:
    """Background control loops, one per class runtime."""

    def __init__(self, manager: RuntimeManager, tick_ms: int = 1000):
        self.manager = manager
        self.tick_ms = tick_ms
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def start(self) -> None:
        if self._thread is not None:
            return
        self._stop.clear()
        self._thread = threading.Thread(target=self._run, daemon=True, name="autoscaler")
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)
            self._thread = None

    def _run(self) -> None:
        while not self._stop.wait(self.tick_ms / 1000.0):
            for cr in self.manager.snapshots():
                try:
                    self.manager.tick(cr.cls)
                except KeyError:
                    continue
