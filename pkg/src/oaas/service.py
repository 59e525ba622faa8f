"""Platform assembly: deployed catalog, deploy pipeline, object lifecycle.

Wires the state store, the partitioned cache, the runtime manager, and the
invocation engine into one deployable unit. Deploying a package validates
it, resolves inheritance, checks function bindings against the runtime
registry, compiles macro dataflows, and provisions one class runtime per
class from the template catalog.
"""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Mapping

from .cache import DhtCache
from .classmodel import (
    ClassDefinition,
    ClassPackage,
    DataflowPlan,
    FunctionKind,
    ResolvedClass,
    compile_dataflow,
    parse_class_package,
    resolve_inheritance,
    validate_package,
)
from .config import PlatformConfig
from .engine import InvocationEngine, InvocationResponse, RuntimeRegistry
from .errors import (
    CycleError,
    DeployRejected,
    SchemaError,
    UnknownClass,
    UnknownFunction,
    UnknownStep,
)
from .localruntime import BlobGateway, LocalRuntime, stub_handlers
from .runtimes import (
    AutoscalerLoop,
    RuntimeConfig,
    RuntimeManager,
    default_catalog,
    load_template_catalog,
)
from .store import BlobStore, FileKVStore, ObjectRecord, PersistenceMode, StateStore


@dataclass
class DeployReport:
    classes_deployed: int
    per_class: dict[str, dict] = field(default_factory=dict)
    elapsed_ms: float = 0.0

    def to_wire(self) -> dict:
        return {
            "classesDeployed": self.classes_deployed,
            "perClass": self.per_class,
            "elapsedMs": self.elapsed_ms,
        }


class DeployedCatalog:
    """Snapshot-consistent view of deployed class definitions and plans."""

    def __init__(self):
        self._defs: dict[str, ClassDefinition] = {}
        self._resolved: dict[str, ResolvedClass] = {}
        self._plans: dict[tuple[str, str], DataflowPlan] = {}
        self._lock = threading.Lock()

    def defs_snapshot(self) -> dict[str, ClassDefinition]:
        with self._lock:
            return dict(self._defs)

    def commit(
        self,
        defs: Mapping[str, ClassDefinition],
        resolved: Mapping[str, ResolvedClass],
        plans: Mapping[tuple[str, str], DataflowPlan],
    ) -> None:
        with self._lock:
            self._defs.update(defs)
            self._resolved.update(resolved)
            self._plans.update(plans)

    def class_names(self) -> list[str]:
        with self._lock:
            return sorted(self._defs)

    def has(self, name: str) -> bool:
        with self._lock:
            return name in self._defs

    def resolved(self, name: str) -> ResolvedClass:
        with self._lock:
            rc = self._resolved.get(name)
        if rc is None:
            raise UnknownClass(name)
        return rc

    def key_specs_of(self, name: str) -> set[str] | None:
        with self._lock:
            rc = self._resolved.get(name)
        return None if rc is None else rc.key_names()

    def plan(self, cls: str, fn_name: str) -> DataflowPlan:
        with self._lock:
            plan = self._plans.get((cls, fn_name))
        if plan is None:
            raise UnknownFunction(fn_name, cls)
        return plan


class Platform:
    def __init__(self, config: PlatformConfig | None = None):
        self.config = config or PlatformConfig()
        cfg = self.config

        os.makedirs(cfg.data_dir, exist_ok=True)
        self.durable = FileKVStore(os.path.join(cfg.data_dir, "objects"), fsync=cfg.durable_fsync)
        self.blob_store = BlobStore(os.path.join(cfg.data_dir, "blobs"))
        self.catalog = DeployedCatalog()
        self.store = StateStore(
            self.durable,
            self.blob_store,
            secret=cfg.secret,
            key_specs_of=self.catalog.key_specs_of,
            default_mode=PersistenceMode(cfg.default_persistence_mode),
        )
        self.cache = DhtCache(
            self.store,
            cfg.cache_nodes,
            vnodes_per_node=cfg.vnodes_per_node,
            hash_seed=cfg.hash_seed,
            batch_size=cfg.batch_size,
            flush_interval_ms=cfg.flush_interval_ms,
            high_watermark=cfg.flush_high_watermark,
            entry_cap=cfg.cache_entry_cap,
        )
        self.registry = RuntimeRegistry()
        if cfg.registry_path:
            self.registry.load_file(cfg.registry_path)
        self.runtime_manager = RuntimeManager(
            idle_timeout_s=cfg.idle_timeout_s,
            metrics_window_ms=cfg.metrics_window_ms,
            admission_timeout_s=cfg.admission_timeout_s,
            cold_start_ms=cfg.cold_start_ms,
            on_provision=self._apply_runtime_config,
        )
        templates = (
            load_template_catalog(cfg.template_catalog_path)
            if cfg.template_catalog_path
            else default_catalog()
        )
        for template in templates:
            self.runtime_manager.register_template(template)
        self.engine = InvocationEngine(
            store=self.store,
            cache=self.cache,
            catalog=self.catalog,
            registry=self.registry,
            runtime_manager=self.runtime_manager,
            conflict_retries=cfg.conflict_retries,
            retry_backoff_ms=cfg.retry_backoff_ms,
            task_deadline_ms=cfg.task_deadline_ms,
            presign_ttl_s=cfg.presign_ttl_s,
            dataflow_parallelism=cfg.dataflow_parallelism,
            async_workers=cfg.async_workers,
            base_url=cfg.base_url,
        )
        self.autoscaler = AutoscalerLoop(self.runtime_manager, tick_ms=cfg.autoscale_tick_ms)
        self._started = False

    # -- lifecycle ------------------------------------------------------------

    def start(self, autoscaler: bool = True) -> "Platform":
        if not self._started:
            self.cache.start_flushers()
            if autoscaler:
                self.autoscaler.start()
            self._started = True
        return self

    def stop(self) -> None:
        if self._started:
            self.autoscaler.stop()
            self.cache.stop_flushers()
            self._started = False
        self.engine.close()

    def __enter__(self) -> "Platform":
        return self.start()

    def __exit__(self, *exc_info) -> None:
        self.stop()

    def register_stub_runtime(self, name: str = "stub", handlers=None) -> str:
        """Test/demo helper: an in-process runtime with blob access wired up."""
        runtime = LocalRuntime(handlers or stub_handlers(), BlobGateway(self.store))
        return self.registry.register_runtime(name, runtime)

    def _apply_runtime_config(self, cls: str, config: RuntimeConfig) -> None:
        self.store.set_class_mode(cls, config.persistence_mode)
        if config.persistence_mode is PersistenceMode.WRITE_BEHIND:
            # flush tuning is per cache node; the most recent write-behind
            # template wins, which is fine for a single deployable
            self.cache.batch_size = config.batch_size
            self.cache.flush_interval_ms = config.flush_interval_ms

    # -- deploy ------------------------------------------------------------

    def deploy_text(self, text: str, format: str = "yaml") -> DeployReport:
        return self.deploy_package(parse_class_package(text, format))

    def deploy_package(self, pkg: ClassPackage) -> DeployReport:
        started = time.monotonic()
        report = validate_package(pkg, self.catalog.defs_snapshot())

        staging = self.catalog.defs_snapshot()
        staging.update({c.name: c for c in pkg.classes})

        resolved: dict[str, ResolvedClass] = {}
        plans: dict[tuple[str, str], DataflowPlan] = {}
        if report.ok:
            for i, cls in enumerate(pkg.classes):
                rc = resolve_inheritance(cls.name, staging)
                resolved[cls.name] = rc
                for fn in rc.effective_functions.values():
                    if fn.kind is FunctionKind.TASK and not self.registry.resolvable(fn):
                        report.error(
                            "unresolved-image",
                            f"classes[{i}].functions",
                            f"function {fn.name!r}: no runtime endpoint registered for image {fn.image!r}",
                        )
                    if fn.kind is FunctionKind.MACRO:
                        assert fn.dataflow is not None
                        try:
                            plans[(cls.name, fn.name)] = compile_dataflow(fn.dataflow, rc)
                        except (CycleError, UnknownStep, UnknownFunction, SchemaError) as exc:
                            report.error("dataflow", f"classes[{i}].functions.{fn.name}", exc.message)

        if not report.ok:
            raise DeployRejected(report)

        deploy_report = DeployReport(classes_deployed=len(pkg.classes))
        self.catalog.commit({c.name: c for c in pkg.classes}, resolved, plans)
        for cls in pkg.classes:
            rc = resolved[cls.name]
            template = self.runtime_manager.select_template(rc)
            self.runtime_manager.provision(rc, template)
            warnings = [
                issue.message
                for issue in report.warnings
                if issue.path.startswith(f"classes[{pkg.names().index(cls.name)}]")
            ]
            constraint = rc.effective_constraint
            if constraint.budget is not None or constraint.region is not None:
                warnings.append("constraint budget/region recorded but not enforced at runtime")
            deploy_report.per_class[cls.name] = {
                "templateSelected": template.name,
                "warnings": warnings,
            }
        deploy_report.elapsed_ms = (time.monotonic() - started) * 1000.0
        return deploy_report

    # -- objects ------------------------------------------------------------

    def create_object(self, cls: str, init_state: dict | None = None) -> ObjectRecord:
        record = self.store.create_object(cls, init_state)
        self.cache.put(self.cache.owner_of(record.id), record)
        return record

    def get_object(self, object_id: str) -> ObjectRecord:
        return self.cache.get(self.cache.owner_of(object_id), object_id)

    def invoke(self, object_id: str, fn_name: str, payload: Any = None, **kwargs) -> InvocationResponse:
        return self.engine.invoke(object_id, fn_name, payload, **kwargs)

    def invoke_async(self, object_id: str, fn_name: str, payload: Any = None, **kwargs) -> str:
        return self.engine.invoke_async(object_id, fn_name, payload, **kwargs)

    def task_status(self, task_id: str) -> dict:
        return self.engine.task_status(task_id)

    # -- blobs ------------------------------------------------------------

    def read_blob(self, object_id: str, key: str, query: Mapping[str, str]) -> bytes:
        return self.store.read_blob(object_id, key, query)

    def write_blob(self, object_id: str, key: str, query: Mapping[str, str], data: bytes) -> None:
        self.store.write_blob(object_id, key, query, data)
        # blob flags change without a version bump; freshen the owner's cache
        record = self.store.get_object(object_id)
        self.cache.put(self.cache.owner_of(object_id), record)

    # -- observability ------------------------------------------------------------

    def metrics(self) -> dict[str, float]:
        out: dict[str, float] = dict(self.cache.metrics())
        rm = self.runtime_manager
        out["invocations_total"] = rm.invocations_total
        out["invocation_errors_total"] = rm.invocation_errors_total
        out["cold_starts_total"] = rm.cold_start_total
        out["objects_total"] = self.store.object_count()
        return out
