"""Class packages: parsing, validation, inheritance resolution, dataflow compilation.

A class package is the deployable unit: a list of class definitions, each
bundling state keys, function bindings, and declared non-functional
requirements. Classes support single inheritance; resolution flattens a
definition into a ``ResolvedClass`` where the nearest override wins, and
macro functions compile into staged dataflow plans.

All operations here are pure functions over immutable inputs; the deployed
catalog they consult is a snapshot handed in by the caller.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterator, Mapping

import yaml

from .errors import (
    CycleError,
    InheritanceCycle,
    PackageSyntaxError,
    SchemaError,
    UnknownClass,
    UnknownFunction,
    UnknownStep,
)

_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_\-]*$")

SELF_TARGET = "@"
ALIAS_PREFIX = "$"


class FunctionKind(str, Enum):
    TASK = "TASK"
    MACRO = "MACRO"


@dataclass(frozen=True)
class QosSpec:
    throughput: int | None = None
    availability: float | None = None
    latency_ms: int | None = None

    def overridden_by(self, child: "QosSpec") -> "QosSpec":
        return QosSpec(
            throughput=child.throughput if child.throughput is not None else self.throughput,
            availability=child.availability if child.availability is not None else self.availability,
            latency_ms=child.latency_ms if child.latency_ms is not None else self.latency_ms,
        )


@dataclass(frozen=True)
class ConstraintSpec:
    # persistent=None means "not declared"; it behaves as False but template
    # predicates only match explicitly declared values.
    persistent: bool | None = None
    budget: float | None = None
    region: str | None = None

    @property
    def effective_persistent(self) -> bool:
        return bool(self.persistent)

    def overridden_by(self, child: "ConstraintSpec") -> "ConstraintSpec":
        return ConstraintSpec(
            persistent=child.persistent if child.persistent is not None else self.persistent,
            budget=child.budget if child.budget is not None else self.budget,
            region=child.region if child.region is not None else self.region,
        )


@dataclass(frozen=True)
class KeySpec:
    name: str
    media_type: str | None = None


@dataclass(frozen=True)
class DataflowStep:
    alias: str
    use: str
    target: str = SELF_TARGET
    args: Any = None

    def references(self) -> set[str]:
        refs: set[str] = set()
        if self.target.startswith(ALIAS_PREFIX):
            refs.add(self.target[1:])
        refs.update(_alias_refs(self.args))
        return refs


@dataclass(frozen=True)
class DataflowSpec:
    steps: tuple[DataflowStep, ...]
    output: str


@dataclass(frozen=True)
class FunctionDef:
    name: str
    kind: FunctionKind = FunctionKind.TASK
    image: str | None = None
    endpoint: str | None = None
    dataflow: DataflowSpec | None = None
    declared_in: str | None = None  # filled at parse time; identifies the override


@dataclass(frozen=True)
class ClassDefinition:
    name: str
    parent: str | None = None
    qos: QosSpec = QosSpec()
    constraint: ConstraintSpec = ConstraintSpec()
    key_specs: tuple[KeySpec, ...] = ()
    functions: tuple[FunctionDef, ...] = ()


@dataclass(frozen=True)
class ClassPackage:
    classes: tuple[ClassDefinition, ...] = ()

    def names(self) -> list[str]:
        return [c.name for c in self.classes]


@dataclass(frozen=True)
class ResolvedClass:
    """Flattened view of a class after walking its ancestry root-first."""

    name: str
    ancestry: tuple[str, ...]
    effective_key_specs: tuple[KeySpec, ...]
    effective_functions: Mapping[str, FunctionDef]
    effective_qos: QosSpec
    effective_constraint: ConstraintSpec

    def function(self, fn_name: str) -> FunctionDef:
        return resolve_function_binding(self, fn_name)

    def key_names(self) -> set[str]:
        return {k.name for k in self.effective_key_specs}

    def to_definition(self) -> ClassDefinition:
        """Materialize the flattened view as a parentless definition."""
        return ClassDefinition(
            name=self.name,
            parent=None,
            qos=self.effective_qos,
            constraint=self.effective_constraint,
            key_specs=self.effective_key_specs,
            functions=tuple(self.effective_functions.values()),
        )


@dataclass(frozen=True)
class DataflowPlan:
    steps: Mapping[str, DataflowStep]
    edges: tuple[tuple[str, str], ...]  # (prerequisite, dependent)
    stages: tuple[tuple[str, ...], ...]
    output: str


@dataclass(frozen=True)
class ValidationIssue:
    level: str  # "error" | "warning"
    code: str
    path: str
    message: str

    def to_wire(self) -> dict:
        return {"level": self.level, "code": self.code, "path": self.path, "message": self.message}


@dataclass
class ValidationReport:
    issues: list[ValidationIssue] = field(default_factory=list)

    @property
    def errors(self) -> list[ValidationIssue]:
        return [i for i in self.issues if i.level == "error"]

    @property
    def warnings(self) -> list[ValidationIssue]:
        return [i for i in self.issues if i.level == "warning"]

    @property
    def ok(self) -> bool:
        return not self.errors

    def error(self, code: str, path: str, message: str) -> None:
        self.issues.append(ValidationIssue("error", code, path, message))

    def warn(self, code: str, path: str, message: str) -> None:
        self.issues.append(ValidationIssue("warning", code, path, message))

    def to_wire(self) -> dict:
        return {
            "ok": self.ok,
            "errors": [i.to_wire() for i in self.errors],
            "warnings": [i.to_wire() for i in self.warnings],
        }


# --- parsing ---------------------------------------------------------------


def parse_class_package(text: str, format: str = "yaml") -> ClassPackage:
    """Parse a YAML or JSON class file into a validated package.

    Unknown fields are rejected with their paths; field-level invariants
    (positive throughput, availability in (0, 1], ...) are enforced here.
    """
    if not text or not text.strip():
        raise PackageSyntaxError("empty class package")
    fmt = format.lower()
    if fmt == "yaml":
        try:
            tree = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            if mark is not None:
                raise PackageSyntaxError(str(getattr(exc, "problem", exc)), mark.line + 1, mark.column + 1) from exc
            raise PackageSyntaxError(str(exc)) from exc
    elif fmt == "json":
        try:
            tree = json.loads(text)
        except json.JSONDecodeError as exc:
            raise PackageSyntaxError(exc.msg, exc.lineno, exc.colno) from exc
    else:
        raise ValueError(f"unsupported format {format!r}")
    return package_from_tree(tree)


def package_from_tree(tree: Any) -> ClassPackage:
    root = _require_map(tree, "<root>")
    _reject_unknown(root, {"classes"}, "<root>")
    raw_classes = root.get("classes")
    if not isinstance(raw_classes, list):
        raise SchemaError("classes", "must be a list of class definitions")
    classes = tuple(_parse_class(c, f"classes[{i}]") for i, c in enumerate(raw_classes))
    seen: set[str] = set()
    for i, cls in enumerate(classes):
        if cls.name in seen:
            raise SchemaError(f"classes[{i}].name", f"duplicate class name {cls.name!r}")
        seen.add(cls.name)
    return ClassPackage(classes=classes)


def _parse_class(raw: Any, path: str) -> ClassDefinition:
    m = _require_map(raw, path)
    _reject_unknown(m, {"name", "parent", "qos", "constraint", "keySpecs", "functions"}, path)
    name = _ident(m.get("name"), f"{path}.name")
    parent = None
    if m.get("parent") is not None:
        parent = _ident(m["parent"], f"{path}.parent")
        if parent == name:
            raise SchemaError(f"{path}.parent", "class cannot be its own parent")

    qos = _parse_qos(m.get("qos"), f"{path}.qos")
    constraint = _parse_constraint(m.get("constraint"), f"{path}.constraint")

    key_specs: list[KeySpec] = []
    for i, raw_ks in enumerate(m.get("keySpecs") or []):
        key_specs.append(_parse_key_spec(raw_ks, f"{path}.keySpecs[{i}]"))
    key_names = [k.name for k in key_specs]
    if len(set(key_names)) != len(key_names):
        raise SchemaError(f"{path}.keySpecs", "key spec names must be unique within one class")

    functions: list[FunctionDef] = []
    for i, raw_fn in enumerate(m.get("functions") or []):
        functions.append(_parse_function(raw_fn, f"{path}.functions[{i}]", name))
    fn_names = [f.name for f in functions]
    if len(set(fn_names)) != len(fn_names):
        raise SchemaError(f"{path}.functions", "function names must be unique within one class")

    return ClassDefinition(
        name=name,
        parent=parent,
        qos=qos,
        constraint=constraint,
        key_specs=tuple(key_specs),
        functions=tuple(functions),
    )


def _parse_qos(raw: Any, path: str) -> QosSpec:
    if raw is None:
        return QosSpec()
    m = _require_map(raw, path)
    _reject_unknown(m, {"throughput", "availability", "latencyMs"}, path)
    throughput = m.get("throughput")
    if throughput is not None and (not _is_int(throughput) or throughput <= 0):
        raise SchemaError(f"{path}.throughput", "must be a positive integer (requests per second)")
    availability = m.get("availability")
    if availability is not None:
        if not _is_number(availability) or not (0 < availability <= 1):
            raise SchemaError(f"{path}.availability", "must be a fraction in (0, 1]")
        availability = float(availability)
    latency = m.get("latencyMs")
    if latency is not None and (not _is_int(latency) or latency <= 0):
        raise SchemaError(f"{path}.latencyMs", "must be a positive integer")
    return QosSpec(throughput=throughput, availability=availability, latency_ms=latency)


def _parse_constraint(raw: Any, path: str) -> ConstraintSpec:
    if raw is None:
        return ConstraintSpec()
    m = _require_map(raw, path)
    _reject_unknown(m, {"persistent", "budget", "region"}, path)
    persistent = m.get("persistent")
    if persistent is not None and not isinstance(persistent, bool):
        raise SchemaError(f"{path}.persistent", "must be a boolean")
    budget = m.get("budget")
    if budget is not None:
        if not _is_number(budget) or budget < 0:
            raise SchemaError(f"{path}.budget", "must be a non-negative number")
        budget = float(budget)
    region = m.get("region")
    if region is not None and not isinstance(region, str):
        raise SchemaError(f"{path}.region", "must be a string")
    return ConstraintSpec(persistent=persistent, budget=budget, region=region)


def _parse_key_spec(raw: Any, path: str) -> KeySpec:
    m = _require_map(raw, path)
    _reject_unknown(m, {"name", "mediaType"}, path)
    name = m.get("name")
    if not isinstance(name, str) or not name:
        raise SchemaError(f"{path}.name", "key spec name must be a nonempty string")
    media = m.get("mediaType")
    if media is not None and not isinstance(media, str):
        raise SchemaError(f"{path}.mediaType", "must be a string")
    return KeySpec(name=name, media_type=media)


def _parse_function(raw: Any, path: str, cls_name: str) -> FunctionDef:
    m = _require_map(raw, path)
    _reject_unknown(m, {"name", "image", "endpoint", "kind", "dataflow"}, path)
    name = _ident(m.get("name"), f"{path}.name")

    raw_kind = m.get("kind")
    if raw_kind is None:
        kind = FunctionKind.MACRO if m.get("dataflow") is not None else FunctionKind.TASK
    else:
        try:
            kind = FunctionKind(str(raw_kind).upper())
        except ValueError:
            raise SchemaError(f"{path}.kind", f"must be TASK or MACRO, got {raw_kind!r}") from None

    image = m.get("image")
    if image is not None and (not isinstance(image, str) or not image):
        raise SchemaError(f"{path}.image", "must be a nonempty string")
    endpoint = m.get("endpoint")
    if endpoint is not None and (not isinstance(endpoint, str) or not endpoint):
        raise SchemaError(f"{path}.endpoint", "must be a nonempty string")

    dataflow = None
    if kind is FunctionKind.MACRO:
        if m.get("dataflow") is None:
            raise SchemaError(f"{path}.dataflow", "macro functions require a dataflow")
        if endpoint is not None or image is not None:
            raise SchemaError(path, "macro functions execute platform-side; endpoint/image not allowed")
        dataflow = _parse_dataflow(m["dataflow"], f"{path}.dataflow")
    else:
        if m.get("dataflow") is not None:
            raise SchemaError(f"{path}.dataflow", "only macro functions carry a dataflow")
        if endpoint is None and image is None:
            raise SchemaError(path, "task functions need an endpoint or an image")
        if endpoint is not None and image is not None:
            raise SchemaError(path, "task functions bind to exactly one of endpoint or image")

    return FunctionDef(
        name=name, kind=kind, image=image, endpoint=endpoint, dataflow=dataflow, declared_in=cls_name
    )


def _parse_dataflow(raw: Any, path: str) -> DataflowSpec:
    m = _require_map(raw, path)
    _reject_unknown(m, {"steps", "output"}, path)
    raw_steps = m.get("steps")
    if not isinstance(raw_steps, list) or not raw_steps:
        raise SchemaError(f"{path}.steps", "must be a nonempty list of steps")
    steps: list[DataflowStep] = []
    for i, raw_step in enumerate(raw_steps):
        sp = f"{path}.steps[{i}]"
        sm = _require_map(raw_step, sp)
        _reject_unknown(sm, {"alias", "use", "target", "args"}, sp)
        alias = _ident(sm.get("alias"), f"{sp}.alias")
        use = _ident(sm.get("use"), f"{sp}.use")
        target = sm.get("target", SELF_TARGET)
        if not isinstance(target, str) or not (
            target == SELF_TARGET or (target.startswith(ALIAS_PREFIX) and len(target) > 1)
        ):
            raise SchemaError(f"{sp}.target", 'must be "@" (the invoked object) or "$alias"')
        args = sm.get("args")
        _require_json_tree(args, f"{sp}.args")
        steps.append(DataflowStep(alias=alias, use=use, target=target, args=args))
    aliases = [s.alias for s in steps]
    if len(set(aliases)) != len(aliases):
        raise SchemaError(f"{path}.steps", "step aliases must be unique")
    output = m.get("output")
    if not isinstance(output, str) or output not in set(aliases):
        raise SchemaError(f"{path}.output", "must name an existing step alias")
    return DataflowSpec(steps=tuple(steps), output=output)


def _require_map(raw: Any, path: str) -> dict:
    if not isinstance(raw, dict):
        raise SchemaError(path, f"expected a mapping, got {type(raw).__name__}")
    return raw


def _reject_unknown(m: dict, allowed: set[str], path: str) -> None:
    for key in m:
        if key not in allowed:
            raise SchemaError(f"{path}.{key}", f"unknown field {key!r}")


def _ident(value: Any, path: str) -> str:
    if not isinstance(value, str) or not _IDENT.match(value):
        raise SchemaError(path, f"must be an identifier, got {value!r}")
    return value


def _is_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_number(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _require_json_tree(value: Any, path: str) -> None:
    try:
        json.dumps(value)
    except (TypeError, ValueError):
        raise SchemaError(path, "must be a JSON-serializable value") from None


# --- serialization (round-trip surface) -------------------------------------


def package_to_tree(pkg: ClassPackage) -> dict:
    return {"classes": [_class_to_tree(c) for c in pkg.classes]}


def serialize_class_package(pkg: ClassPackage, format: str = "yaml") -> str:
    tree = package_to_tree(pkg)
    if format.lower() == "json":
        return json.dumps(tree, indent=2)
    return yaml.safe_dump(tree, sort_keys=False)


def _class_to_tree(c: ClassDefinition) -> dict:
    out: dict[str, Any] = {"name": c.name}
    if c.parent is not None:
        out["parent"] = c.parent
    qos: dict[str, Any] = {}
    if c.qos.throughput is not None:
        qos["throughput"] = c.qos.throughput
    if c.qos.availability is not None:
        qos["availability"] = c.qos.availability
    if c.qos.latency_ms is not None:
        qos["latencyMs"] = c.qos.latency_ms
    if qos:
        out["qos"] = qos
    constraint: dict[str, Any] = {}
    if c.constraint.persistent is not None:
        constraint["persistent"] = c.constraint.persistent
    if c.constraint.budget is not None:
        constraint["budget"] = c.constraint.budget
    if c.constraint.region is not None:
        constraint["region"] = c.constraint.region
    if constraint:
        out["constraint"] = constraint
    if c.key_specs:
        out["keySpecs"] = [
            {"name": k.name, **({"mediaType": k.media_type} if k.media_type else {})}
            for k in c.key_specs
        ]
    if c.functions:
        out["functions"] = [_function_to_tree(f) for f in c.functions]
    return out


def _function_to_tree(f: FunctionDef) -> dict:
    out: dict[str, Any] = {"name": f.name}
    if f.kind is FunctionKind.MACRO:
        out["kind"] = "MACRO"
        assert f.dataflow is not None
        out["dataflow"] = {
            "steps": [
                {
                    "alias": s.alias,
                    "use": s.use,
                    **({"target": s.target} if s.target != SELF_TARGET else {}),
                    **({"args": s.args} if s.args is not None else {}),
                }
                for s in f.dataflow.steps
            ],
            "output": f.dataflow.output,
        }
    else:
        if f.image is not None:
            out["image"] = f.image
        if f.endpoint is not None:
            out["endpoint"] = f.endpoint
    return out


# --- validation --------------------------------------------------------------


def validate_package(pkg: ClassPackage, catalog: Mapping[str, ClassDefinition]) -> ValidationReport:
    """Cross-class checks: name uniqueness, parent resolution, inheritance cycles.

    The report carries diagnostics instead of raising so the gateway can show
    everything wrong with a package at once. Zero errors means every
    invariant holds and all parents resolve against the package or the
    already-deployed catalog.
    """
    report = ValidationReport()
    by_name: dict[str, ClassDefinition] = {}
    for i, cls in enumerate(pkg.classes):
        if cls.name in by_name:
            report.error("duplicate-class", f"classes[{i}].name", f"duplicate class name {cls.name!r}")
        by_name[cls.name] = cls
        fn_names = [f.name for f in cls.functions]
        if len(set(fn_names)) != len(fn_names):
            report.error("duplicate-function", f"classes[{i}].functions", "function names must be unique")
        key_names = [k.name for k in cls.key_specs]
        if len(set(key_names)) != len(key_names):
            report.error("duplicate-key", f"classes[{i}].keySpecs", "key spec names must be unique")

    merged: dict[str, ClassDefinition] = dict(catalog)
    merged.update(by_name)

    for i, cls in enumerate(pkg.classes):
        if cls.parent is not None and cls.parent not in merged:
            report.error(
                "unresolved-parent",
                f"classes[{i}].parent",
                f"parent {cls.parent!r} is neither in the package nor deployed",
            )

    reported_cycles: set[frozenset[str]] = set()
    for i, cls in enumerate(pkg.classes):
        cycle = _find_cycle(cls.name, merged)
        if cycle and frozenset(cycle) not in reported_cycles:
            reported_cycles.add(frozenset(cycle))
            report.error(
                "inheritance-cycle",
                f"classes[{i}]",
                f"inheritance cycle through {{{', '.join(sorted(cycle))}}}",
            )

    # A child may override inherited QoS in either direction; narrowing is
    # legal but worth surfacing.
    for i, cls in enumerate(pkg.classes):
        if cls.parent is None or cls.parent not in merged or _find_cycle(cls.name, merged):
            continue
        try:
            parent_rc = resolve_inheritance(cls.parent, merged)
        except (UnknownClass, InheritanceCycle):
            continue
        pq, cq = parent_rc.effective_qos, cls.qos
        narrowed = []
        if cq.throughput is not None and pq.throughput is not None and cq.throughput < pq.throughput:
            narrowed.append(f"throughput {pq.throughput} -> {cq.throughput}")
        if cq.availability is not None and pq.availability is not None and cq.availability < pq.availability:
            narrowed.append(f"availability {pq.availability} -> {cq.availability}")
        if cq.latency_ms is not None and pq.latency_ms is not None and cq.latency_ms > pq.latency_ms:
            narrowed.append(f"latencyMs {pq.latency_ms} -> {cq.latency_ms}")
        if narrowed:
            report.warn("qos-narrowed", f"classes[{i}].qos", f"narrows inherited QoS: {'; '.join(narrowed)}")

    return report


def _find_cycle(start: str, defs: Mapping[str, ClassDefinition]) -> list[str] | None:
    seen: list[str] = []
    current: str | None = start
    while current is not None:
        if current in seen:
            return seen[seen.index(current):]
        seen.append(current)
        definition = defs.get(current)
        current = definition.parent if definition is not None else None
    return None


# --- inheritance resolution ---------------------------------------------------


def resolve_inheritance(name: str, catalog: Mapping[str, ClassDefinition]) -> ResolvedClass:
    """Flatten a class through its ancestry; the nearest definition wins."""
    chain: list[ClassDefinition] = []  # leaf first
    seen: set[str] = set()
    current: str | None = name
    while current is not None:
        if current in seen:
            raise InheritanceCycle(list(seen))
        definition = catalog.get(current)
        if definition is None:
            raise UnknownClass(current)
        seen.add(current)
        chain.append(definition)
        current = definition.parent

    lineage = list(reversed(chain))  # root first
    functions: dict[str, FunctionDef] = {}
    key_specs: dict[str, KeySpec] = {}
    qos = QosSpec()
    constraint = ConstraintSpec()
    for definition in lineage:
        for fn in definition.functions:
            functions[fn.name] = fn
        for ks in definition.key_specs:
            key_specs[ks.name] = ks  # replace by name, position of first declaration kept
        qos = qos.overridden_by(definition.qos)
        constraint = constraint.overridden_by(definition.constraint)

    return ResolvedClass(
        name=name,
        ancestry=tuple(d.name for d in lineage[:-1]),
        effective_key_specs=tuple(key_specs.values()),
        effective_functions=dict(functions),
        effective_qos=qos,
        effective_constraint=constraint,
    )


def resolve_function_binding(rc: ResolvedClass, fn_name: str) -> FunctionDef:
    fn = rc.effective_functions.get(fn_name)
    if fn is None:
        raise UnknownFunction(fn_name, rc.name)
    return fn


# --- dataflow compilation -------------------------------------------------------


def _alias_refs(value: Any) -> Iterator[str]:
    """Yield aliases referenced by exact "$alias" strings anywhere in a value tree."""
    if isinstance(value, str):
        if value.startswith(ALIAS_PREFIX) and len(value) > 1:
            yield value[1:]
    elif isinstance(value, dict):
        for v in value.values():
            yield from _alias_refs(v)
    elif isinstance(value, (list, tuple)):
        for v in value:
            yield from _alias_refs(v)


def compile_dataflow(spec: DataflowSpec, rc: ResolvedClass) -> DataflowPlan:
    """Layer a dataflow into stages of mutually independent steps.

    A step's stage is its longest-path depth over the reference graph, so a
    step never shares a stage with anything it (transitively) depends on.
    Bindings for "@"-targeted steps are checked now; "$alias" targets carry
    an object id only known at execution time and bind then.
    """
    steps = {s.alias: s for s in spec.steps}
    refs: dict[str, set[str]] = {}
    for step in spec.steps:
        step_refs = step.references()
        for ref in step_refs:
            if ref not in steps:
                raise UnknownStep(ref)
        if step.alias in step_refs:
            raise CycleError([step.alias])
        refs[step.alias] = step_refs
        if step.target == SELF_TARGET:
            bound = resolve_function_binding(rc, step.use)
            if bound.kind is not FunctionKind.TASK:
                raise SchemaError(step.alias, f"step uses {step.use!r}, which is not a task function")

    depth: dict[str, int] = {}
    remaining = dict(refs)
    while remaining:
        progressed = [a for a, deps in remaining.items() if deps <= depth.keys()]
        if not progressed:
            raise CycleError(sorted(remaining))
        for alias in progressed:
            deps = remaining.pop(alias)
            depth[alias] = 1 + max((depth[d] for d in deps), default=-1)

    n_stages = 1 + max(depth.values())
    stages: list[list[str]] = [[] for _ in range(n_stages)]
    for step in spec.steps:  # original order within a stage
        stages[depth[step.alias]].append(step.alias)

    edges = tuple(
        sorted((dep, alias) for alias, deps in refs.items() for dep in deps)
    )
    return DataflowPlan(
        steps=steps,
        edges=edges,
        stages=tuple(tuple(stage) for stage in stages),
        output=spec.output,
    )


def substitute_refs(value: Any, outputs: Mapping[str, Any], self_object_id: str) -> Any:
    """Resolve "$alias" and "@" references inside a step's args tree."""
    if isinstance(value, str):
        if value == SELF_TARGET:
            return self_object_id
        if value.startswith(ALIAS_PREFIX) and len(value) > 1:
            return outputs[value[1:]]
        return value
    if isinstance(value, dict):
        return {k: substitute_refs(v, outputs, self_object_id) for k, v in value.items()}
    if isinstance(value, list):
        return [substitute_refs(v, outputs, self_object_id) for v in value]
    return value
