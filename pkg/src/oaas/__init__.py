"""Object-as-a-Service platform.

Classes bundle state keys, functions, and declared requirements into one
deployable package; objects run those functions by offloading self-contained
tasks to plain HTTP function runtimes, with versioned fail-safe commits,
consistent-hashing object caching, and requirement-driven runtime templates.
"""

from .classmodel import (
    ClassDefinition,
    ClassPackage,
    ConstraintSpec,
    DataflowPlan,
    DataflowSpec,
    FunctionDef,
    FunctionKind,
    KeySpec,
    QosSpec,
    ResolvedClass,
    ValidationReport,
    compile_dataflow,
    parse_class_package,
    resolve_function_binding,
    resolve_inheritance,
    serialize_class_package,
    validate_package,
)
from .config import PlatformConfig, load_config
from .engine import InvocationResponse, InvocationTask, TaskResult, build_task, offload
from .errors import OaasError
from .ring import HashRing, hash64, rebalance, ring_set_nodes
from .runtimes import (
    ClassRuntime,
    MetricsWindow,
    RuntimeConfig,
    RuntimeManager,
    TemplateSpec,
    autoscale_step,
    default_catalog,
)
from .service import DeployReport, Platform
from .store import ObjectRecord, PersistenceMode, PresignedUrl, StateStore, TransitionToken

__all__ = [
    "ClassDefinition",
    "ClassPackage",
    "ClassRuntime",
    "ConstraintSpec",
    "DataflowPlan",
    "DataflowSpec",
    "DeployReport",
    "FunctionDef",
    "FunctionKind",
    "HashRing",
    "InvocationResponse",
    "InvocationTask",
    "KeySpec",
    "MetricsWindow",
    "OaasError",
    "ObjectRecord",
    "PersistenceMode",
    "Platform",
    "PlatformConfig",
    "PresignedUrl",
    "QosSpec",
    "ResolvedClass",
    "RuntimeConfig",
    "RuntimeManager",
    "StateStore",
    "TaskResult",
    "TemplateSpec",
    "TransitionToken",
    "ValidationReport",
    "autoscale_step",
    "build_task",
    "compile_dataflow",
    "default_catalog",
    "hash64",
    "load_config",
    "offload",
    "parse_class_package",
    "rebalance",
    "resolve_function_binding",
    "resolve_inheritance",
    "ring_set_nodes",
    "serialize_class_package",
    "validate_package",
]

__version__ = "0.1.0"
