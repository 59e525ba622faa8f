from __future__ import annotations

import json
import random

import pytest

from oaas.classmodel import (
    ClassDefinition,
    ClassPackage,
    ConstraintSpec,
    DataflowSpec,
    DataflowStep,
    FunctionDef,
    FunctionKind,
    KeySpec,
    QosSpec,
    compile_dataflow,
    package_to_tree,
    parse_class_package,
    resolve_function_binding,
    resolve_inheritance,
    serialize_class_package,
    validate_package,
)
from oaas.errors import (
    CycleError,
    InheritanceCycle,
    PackageSyntaxError,
    SchemaError,
    UnknownClass,
    UnknownFunction,
    UnknownStep,
)


class TestParsing:
    def test_image_package_parses_unchanged(self, listing_yaml):
        pkg = parse_class_package(listing_yaml, "yaml")
        assert pkg.names() == ["Image", "LabelledImage"]
        image, labelled = pkg.classes
        assert image.qos.throughput == 100
        assert image.constraint.persistent is True
        assert [k.name for k in image.key_specs] == ["image"]
        assert {f.name: f.image for f in image.functions} == {
            "resize": "img/resize",
            "changeFormat": "img/change-format",
        }
        assert labelled.parent == "Image"
        assert [f.name for f in labelled.functions] == ["detectObject"]
        assert all(f.kind is FunctionKind.TASK for f in image.functions)

    def test_empty_classes_list(self):
        assert parse_class_package("classes: []").classes == ()

    def test_negative_throughput_rejected_with_path(self, listing_yaml):
        bad = listing_yaml.replace("throughput: 100", "throughput: -5")
        with pytest.raises(SchemaError) as exc:
            parse_class_package(bad)
        assert exc.value.path == "classes[0].qos.throughput"

    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(SchemaError) as exc:
            parse_class_package("classes: []\nversion: 3\n")
        assert "version" in exc.value.path

    def test_unknown_nested_key_rejected(self):
        text = "classes:\n  - name: A\n    colour: blue\n"
        with pytest.raises(SchemaError) as exc:
            parse_class_package(text)
        assert exc.value.path == "classes[0].colour"

    def test_json_format(self, listing_yaml):
        pkg = parse_class_package(listing_yaml, "yaml")
        as_json = json.dumps(package_to_tree(pkg))
        assert parse_class_package(as_json, "json") == pkg

    def test_empty_text_is_syntax_error(self):
        with pytest.raises(PackageSyntaxError):
            parse_class_package("   \n")

    def test_yaml_syntax_error_carries_position(self):
        with pytest.raises(PackageSyntaxError) as exc:
            parse_class_package("classes:\n  - name: [unclosed\n")
        assert exc.value.line is not None

    def test_duplicate_class_names_rejected(self):
        text = "classes:\n  - name: A\n  - name: A\n"
        with pytest.raises(SchemaError) as exc:
            parse_class_package(text)
        assert "duplicate" in exc.value.reason

    def test_task_function_needs_binding(self):
        text = "classes:\n  - name: A\n    functions:\n      - name: f\n"
        with pytest.raises(SchemaError):
            parse_class_package(text)

    def test_task_function_rejects_double_binding(self):
        text = (
            "classes:\n  - name: A\n    functions:\n"
            "      - name: f\n        image: x/y\n        endpoint: http://h/f\n"
        )
        with pytest.raises(SchemaError):
            parse_class_package(text)

    def test_macro_requires_dataflow_and_no_endpoint(self):
        with pytest.raises(SchemaError):
            parse_class_package("classes:\n  - name: A\n    functions:\n      - name: m\n        kind: MACRO\n")
        text = (
            "classes:\n  - name: A\n    functions:\n"
            "      - name: m\n        kind: MACRO\n        endpoint: http://h\n"
            "        dataflow:\n          steps:\n            - alias: s\n              use: f\n"
            "          output: s\n"
        )
        with pytest.raises(SchemaError):
            parse_class_package(text)

    def test_dataflow_output_must_exist(self):
        text = (
            "classes:\n  - name: A\n    functions:\n"
            "      - name: m\n        kind: MACRO\n"
            "        dataflow:\n          steps:\n            - alias: s\n              use: f\n"
            "          output: nope\n"
        )
        with pytest.raises(SchemaError) as exc:
            parse_class_package(text)
        assert exc.value.path.endswith("dataflow.output")

    def test_round_trip_stability(self, listing_yaml):
        pkg = parse_class_package(listing_yaml)
        for fmt in ("yaml", "json"):
            assert parse_class_package(serialize_class_package(pkg, fmt), fmt) == pkg


class TestValidation:
    def test_image_package_validates_clean(self, listing_yaml):
        report = validate_package(parse_class_package(listing_yaml), {})
        assert report.ok and report.errors == []

    def test_two_class_cycle_reported(self):
        pkg = ClassPackage(
            classes=(
                ClassDefinition(name="A", parent="B"),
                ClassDefinition(name="B", parent="A"),
            )
        )
        report = validate_package(pkg, {})
        cycle_errors = [e for e in report.errors if e.code == "inheritance-cycle"]
        assert len(cycle_errors) == 1
        assert "A" in cycle_errors[0].message and "B" in cycle_errors[0].message

    def test_unresolved_parent_reported(self):
        pkg = ClassPackage(classes=(ClassDefinition(name="LabelledImage", parent="Image"),))
        report = validate_package(pkg, {})
        assert [e.code for e in report.errors] == ["unresolved-parent"]

    def test_parent_from_deployed_catalog_resolves(self):
        catalog = {"Image": ClassDefinition(name="Image")}
        pkg = ClassPackage(classes=(ClassDefinition(name="LabelledImage", parent="Image"),))
        assert validate_package(pkg, catalog).ok

    def test_qos_narrowing_warns(self):
        pkg = ClassPackage(
            classes=(
                ClassDefinition(name="P", qos=QosSpec(throughput=100)),
                ClassDefinition(name="C", parent="P", qos=QosSpec(throughput=10)),
            )
        )
        report = validate_package(pkg, {})
        assert report.ok
        assert any(w.code == "qos-narrowed" for w in report.warnings)


def _fn(name: str, declared_in: str) -> FunctionDef:
    return FunctionDef(name=name, image=f"img/{name}", declared_in=declared_in)


class TestInheritance:
    def test_labelled_image_resolution(self, listing_yaml):
        pkg = parse_class_package(listing_yaml)
        catalog = {c.name: c for c in pkg.classes}
        rc = resolve_inheritance("LabelledImage", catalog)
        assert set(rc.effective_functions) == {"resize", "changeFormat", "detectObject"}
        assert rc.key_names() == {"image"}
        assert rc.effective_qos.throughput == 100
        assert rc.effective_constraint.persistent is True
        assert rc.ancestry == ("Image",)

    def test_parentless_class_resolves_to_itself(self, listing_yaml):
        pkg = parse_class_package(listing_yaml)
        catalog = {c.name: c for c in pkg.classes}
        rc = resolve_inheritance("Image", catalog)
        assert rc.ancestry == ()
        assert set(rc.effective_functions) == {"resize", "changeFormat"}

    def test_unknown_class(self):
        with pytest.raises(UnknownClass):
            resolve_inheritance("Ghost", {})

    def test_cycle_detected(self):
        catalog = {
            "A": ClassDefinition(name="A", parent="B"),
            "B": ClassDefinition(name="B", parent="A"),
        }
        with pytest.raises(InheritanceCycle):
            resolve_inheritance("A", catalog)

    def test_binding_picks_nearest_override(self):
        catalog = {
            "A": ClassDefinition(name="A", functions=(_fn("f", "A"), _fn("g", "A"))),
            "B": ClassDefinition(name="B", parent="A", functions=(_fn("f", "B"),)),
            "C": ClassDefinition(name="C", parent="B"),
        }
        rc = resolve_inheritance("C", catalog)
        assert resolve_function_binding(rc, "f").declared_in == "B"
        assert resolve_function_binding(rc, "g").declared_in == "A"

    def test_binding_unknown_function(self, listing_yaml):
        pkg = parse_class_package(listing_yaml)
        catalog = {c.name: c for c in pkg.classes}
        rc = resolve_inheritance("Image", catalog)
        with pytest.raises(UnknownFunction):
            resolve_function_binding(rc, "detectObject")

    def test_resolution_idempotent(self, listing_yaml):
        pkg = parse_class_package(listing_yaml)
        catalog = {c.name: c for c in pkg.classes}
        rc = resolve_inheritance("LabelledImage", catalog)
        again = resolve_inheritance("LabelledImage", {"LabelledImage": rc.to_definition()})
        assert again.effective_functions == rc.effective_functions
        assert again.effective_key_specs == rc.effective_key_specs
        assert again.effective_qos == rc.effective_qos
        assert again.effective_constraint == rc.effective_constraint

    def test_child_functions_superset_of_parent(self, listing_yaml):
        pkg = parse_class_package(listing_yaml)
        catalog = {c.name: c for c in pkg.classes}
        child = resolve_inheritance("LabelledImage", catalog)
        parent = resolve_inheritance("Image", catalog)
        assert set(child.effective_functions) >= set(parent.effective_functions)


def _random_hierarchy(rng: random.Random) -> dict[str, ClassDefinition]:
    """Single-inheritance chain of depth <= 5 with <= 8 function names in play."""
    depth = rng.randint(1, 5)
    fn_pool = [f"fn{i}" for i in range(8)]
    key_pool = [f"k{i}" for i in range(4)]
    defs: dict[str, ClassDefinition] = {}
    parent = None
    for level in range(depth):
        name = f"C{level}"
        fns = tuple(
            _fn(fn_name, name) for fn_name in rng.sample(fn_pool, rng.randint(0, 4))
        )
        keys = tuple(KeySpec(k) for k in rng.sample(key_pool, rng.randint(0, 2)))
        qos = QosSpec(
            throughput=rng.choice([None, rng.randint(1, 500)]),
            availability=rng.choice([None, round(rng.uniform(0.5, 1.0), 3)]),
        )
        constraint = ConstraintSpec(persistent=rng.choice([None, True, False]))
        defs[name] = ClassDefinition(
            name=name, parent=parent, qos=qos, constraint=constraint, key_specs=keys, functions=fns
        )
        parent = name
    return defs


def _walk_chain(name: str, defs: dict[str, ClassDefinition]):
    chain = []
    current = name
    while current is not None:
        chain.append(defs[current])
        current = defs[current].parent
    return chain  # leaf first


def _oracle_binding(name: str, defs: dict[str, ClassDefinition], fn_name: str) -> FunctionDef | None:
    for definition in _walk_chain(name, defs):
        for fn in definition.functions:
            if fn.name == fn_name:
                return fn
    return None


def test_resolution_matches_chain_walk_oracle_on_200_random_hierarchies():
    rng = random.Random(7)
    for _ in range(200):
        defs = _random_hierarchy(rng)
        leaf = f"C{len(defs) - 1}"
        for name in defs:
            rc = resolve_inheritance(name, defs)
            chain = _walk_chain(name, defs)
            # functions: nearest definition wins
            expected_fns = {}
            for definition in reversed(chain):
                for fn in definition.functions:
                    expected_fns[fn.name] = fn
            assert dict(rc.effective_functions) == expected_fns
            for fn_name in [f"fn{i}" for i in range(8)]:
                expected = _oracle_binding(name, defs, fn_name)
                if expected is None:
                    with pytest.raises(UnknownFunction):
                        resolve_function_binding(rc, fn_name)
                else:
                    assert resolve_function_binding(rc, fn_name) == expected
            # key specs: union with child replacement
            expected_keys = {}
            for definition in reversed(chain):
                for ks in definition.key_specs:
                    expected_keys[ks.name] = ks
            assert {k.name: k for k in rc.effective_key_specs} == expected_keys
            # qos/constraint: nearest declared field wins
            for fld in ("throughput", "availability"):
                expected_value = next(
                    (getattr(d.qos, fld) for d in chain if getattr(d.qos, fld) is not None), None
                )
                assert getattr(rc.effective_qos, fld) == expected_value
            expected_persistent = next(
                (d.constraint.persistent for d in chain if d.constraint.persistent is not None), None
            )
            assert rc.effective_constraint.persistent == expected_persistent
        # superset invariant along the chain
        child_rc = resolve_inheritance(leaf, defs)
        for definition in _walk_chain(leaf, defs)[1:]:
            parent_rc = resolve_inheritance(definition.name, defs)
            assert set(child_rc.effective_functions) >= set(parent_rc.effective_functions)


def _rc_with_functions(n: int = 10):
    fns = tuple(_fn(f"f{i}", "A") for i in range(n))
    return resolve_inheritance("A", {"A": ClassDefinition(name="A", functions=fns)})


class TestDataflow:
    def test_diamond_layering(self):
        spec = DataflowSpec(
            steps=(
                DataflowStep(alias="a", use="f0"),
                DataflowStep(alias="b", use="f1", args={"in": "$a"}),
                DataflowStep(alias="c", use="f2", args={"in": "$a"}),
                DataflowStep(alias="d", use="f3", args={"left": "$b", "right": "$c"}),
            ),
            output="d",
        )
        plan = compile_dataflow(spec, _rc_with_functions())
        assert plan.stages == (("a",), ("b", "c"), ("d",))

    def test_single_step(self):
        spec = DataflowSpec(steps=(DataflowStep(alias="only", use="f0"),), output="only")
        plan = compile_dataflow(spec, _rc_with_functions())
        assert plan.stages == (("only",),)

    def test_cycle_rejected(self):
        spec = DataflowSpec(
            steps=(
                DataflowStep(alias="a", use="f0", args="$b"),
                DataflowStep(alias="b", use="f1", args="$a"),
            ),
            output="b",
        )
        with pytest.raises(CycleError) as exc:
            compile_dataflow(spec, _rc_with_functions())
        assert exc.value.aliases == ["a", "b"]

    def test_self_reference_rejected(self):
        spec = DataflowSpec(steps=(DataflowStep(alias="a", use="f0", args="$a"),), output="a")
        with pytest.raises(CycleError):
            compile_dataflow(spec, _rc_with_functions())

    def test_unknown_reference_rejected(self):
        spec = DataflowSpec(steps=(DataflowStep(alias="a", use="f0", args="$ghost"),), output="a")
        with pytest.raises(UnknownStep):
            compile_dataflow(spec, _rc_with_functions())

    def test_unknown_function_rejected(self):
        spec = DataflowSpec(steps=(DataflowStep(alias="a", use="nope"),), output="a")
        with pytest.raises(UnknownFunction):
            compile_dataflow(spec, _rc_with_functions())

    def test_plan_never_places_step_before_its_references(self):
        rng = random.Random(21)
        rc = _rc_with_functions()
        for _ in range(50):
            n = rng.randint(1, 10)
            refs: dict[str, set[str]] = {}
            steps = []
            for i in range(n):
                alias = f"s{i}"
                pool = [f"s{j}" for j in range(i)]
                deps = set(rng.sample(pool, rng.randint(0, min(3, len(pool)))))
                refs[alias] = deps
                steps.append(
                    DataflowStep(alias=alias, use=f"f{i % 10}", args={"deps": [f"${d}" for d in sorted(deps)]})
                )
            spec = DataflowSpec(steps=tuple(steps), output=f"s{n - 1}")
            plan = compile_dataflow(spec, rc)

            def brute_depth(alias: str) -> int:
                # enumerate every path; no memoization on purpose
                if not refs[alias]:
                    return 0
                return 1 + max(brute_depth(d) for d in refs[alias])

            stage_of = {alias: i for i, stage in enumerate(plan.stages) for alias in stage}
            assert set(stage_of) == set(refs)
            for alias, deps in refs.items():
                assert stage_of[alias] == brute_depth(alias)
                for dep in deps:
                    assert stage_of[dep] < stage_of[alias]
