from __future__ import annotations

import math
import random
import threading

import pytest

from oaas.classmodel import ClassDefinition, ConstraintSpec, QosSpec, resolve_inheritance
from oaas.errors import DuplicatePriority, Saturated
from oaas.runtimes import (
    AdjustableSemaphore,
    MetricsWindow,
    RuntimeConfig,
    RuntimeManager,
    TemplateSpec,
    autoscale_step,
    default_catalog,
    template_from_tree,
)
from oaas.store import PersistenceMode


def rc_with(qos: QosSpec = QosSpec(), constraint: ConstraintSpec = ConstraintSpec(), name="X"):
    return resolve_inheritance(name, {name: ClassDefinition(name=name, qos=qos, constraint=constraint)})


def manager_with_defaults(**kwargs) -> RuntimeManager:
    manager = RuntimeManager(**kwargs)
    for t in default_catalog():
        manager.register_template(t)
    return manager


class TestTemplateSelection:
    def test_image_requirements_pick_persistent_throughput(self):
        rc = rc_with(QosSpec(throughput=100), ConstraintSpec(persistent=True))
        assert manager_with_defaults().select_template(rc).name == "persistent-throughput"

    def test_bare_class_falls_to_default(self):
        assert manager_with_defaults().select_template(rc_with()).name == "default"

    def test_explicit_non_persistent_picks_ephemeral(self):
        rc = rc_with(constraint=ConstraintSpec(persistent=False))
        assert manager_with_defaults().select_template(rc).name == "ephemeral-fast"

    def test_low_throughput_persistent_misses_the_throughput_template(self):
        rc = rc_with(QosSpec(throughput=10), ConstraintSpec(persistent=True))
        assert manager_with_defaults().select_template(rc).name == "default"

    def test_duplicate_priority_rejected(self):
        manager = manager_with_defaults()
        clash = TemplateSpec(name="other", priority=10, match=(), config=RuntimeConfig())
        with pytest.raises(DuplicatePriority):
            manager.register_template(clash)

    def test_reregistering_same_name_is_an_update(self):
        manager = manager_with_defaults()
        manager.register_template(
            TemplateSpec(name="default", priority=0, match=(), config=RuntimeConfig(max_replicas=9))
        )
        assert manager.select_template(rc_with()).config.max_replicas == 9

    def test_adding_non_matching_template_changes_nothing(self):
        manager = manager_with_defaults()
        rc = rc_with(QosSpec(throughput=100), ConstraintSpec(persistent=True))
        before = manager.select_template(rc).name
        manager.register_template(
            TemplateSpec(name="gpu", priority=99, match=(("region", "eq", "mars"),), config=RuntimeConfig())
        )
        assert manager.select_template(rc).name == before

    def test_adding_matching_higher_priority_template_wins(self):
        manager = manager_with_defaults()
        rc = rc_with(QosSpec(throughput=100), ConstraintSpec(persistent=True))
        manager.register_template(
            TemplateSpec(name="turbo", priority=50, match=(("throughput", "gte", 100),), config=RuntimeConfig())
        )
        assert manager.select_template(rc).name == "turbo"

    def test_500_random_vectors_match_linear_scan_oracle(self):
        rng = random.Random(2024)
        for _ in range(500):
            # a random catalog with unique priorities plus the mandatory catch-all
            templates = [TemplateSpec(name="default", priority=0, match=(), config=RuntimeConfig())]
            priorities = rng.sample(range(1, 100), rng.randint(2, 6))
            for i, priority in enumerate(priorities):
                conditions = []
                if rng.random() < 0.7:
                    conditions.append(("throughput", rng.choice(["gte", "lte"]), rng.randint(1, 400)))
                if rng.random() < 0.5:
                    conditions.append(("persistent", "eq", rng.choice([True, False])))
                if rng.random() < 0.3:
                    conditions.append(("availability", "gte", round(rng.uniform(0.5, 1.0), 2)))
                templates.append(
                    TemplateSpec(name=f"t{i}", priority=priority, match=tuple(conditions), config=RuntimeConfig())
                )
            manager = RuntimeManager()
            for t in templates:
                manager.register_template(t)

            rc = rc_with(
                QosSpec(
                    throughput=rng.choice([None, rng.randint(1, 400)]),
                    availability=rng.choice([None, round(rng.uniform(0.5, 1.0), 2)]),
                ),
                ConstraintSpec(persistent=rng.choice([None, True, False])),
            )
            declared = {}
            if rc.effective_qos.throughput is not None:
                declared["throughput"] = rc.effective_qos.throughput
            if rc.effective_qos.availability is not None:
                declared["availability"] = rc.effective_qos.availability
            if rc.effective_constraint.persistent is not None:
                declared["persistent"] = rc.effective_constraint.persistent

            def oracle_matches(template):
                for fld, op, expected in template.match:
                    if fld not in declared:
                        return False
                    actual = declared[fld]
                    if op == "eq" and actual != expected:
                        return False
                    if op == "gte" and not actual >= expected:
                        return False
                    if op == "lte" and not actual <= expected:
                        return False
                return True

            matching = [t for t in templates if oracle_matches(t)]
            expected = max(matching, key=lambda t: t.priority)
            assert manager.select_template(rc).name == expected.name


class TestTemplateFiles:
    def test_round_trip_through_tree_form(self):
        spec = template_from_tree(
            {
                "name": "custom",
                "priority": 3,
                "match": {"persistent": {"eq": True}, "throughput": {">=": 10}},
                "config": {"persistenceMode": "WRITE_BEHIND", "batchSize": 10},
            }
        )
        assert spec.config.persistence_mode is PersistenceMode.WRITE_BEHIND
        assert ("throughput", "gte", 10) in spec.match

    def test_unknown_field_rejected(self):
        with pytest.raises(ValueError):
            template_from_tree({"name": "bad", "match": {"colour": {"eq": "red"}}})


class TestProvisioning:
    def test_provision_applies_template_config(self):
        pushed = {}
        manager = RuntimeManager(on_provision=lambda cls, cfg: pushed.update({cls: cfg}))
        for t in default_catalog():
            manager.register_template(t)
        rc = rc_with(QosSpec(throughput=100), ConstraintSpec(persistent=True), name="Image")
        cr = manager.provision(rc)
        assert cr.template_name == "persistent-throughput"
        assert cr.replicas == cr.effective_config.initial_replicas
        assert cr.state.value == "READY"
        assert pushed["Image"].persistence_mode is PersistenceMode.WRITE_BEHIND

    def test_one_runtime_per_class(self):
        manager = manager_with_defaults()
        a = manager.provision(rc_with(name="A"))
        b = manager.provision(rc_with(name="B"))
        assert a is not b
        assert {cr.cls for cr in manager.snapshots()} == {"A", "B"}


class FakeClock:
    def __init__(self):
        self.now = 0.0

    def __call__(self) -> float:
        return self.now


def window(cls: str, rps: float) -> MetricsWindow:
    return MetricsWindow(cls, 1000, rps, 0.0, 0.0)


class TestAutoscaling:
    def test_ceiling_arithmetic(self):
        manager = manager_with_defaults()
        cr = manager.provision(rc_with(name="A"))
        decision = autoscale_step(cr, window("A", 100.0), now=0.0, idle_timeout_s=30)
        assert decision.new_replicas == 2  # ceil(100 / 50)

    def test_clamped_to_max(self):
        manager = manager_with_defaults()
        cr = manager.provision(rc_with(name="A"))  # default template: max 4
        decision = autoscale_step(cr, window("A", 10_000.0), now=0.0, idle_timeout_s=30)
        assert decision.new_replicas == 4

    def test_scale_to_zero_then_cold_start(self):
        clock = FakeClock()
        manager = manager_with_defaults(idle_timeout_s=30, clock=clock)
        cr = manager.provision(rc_with(name="A"))
        manager.tick("A", window("A", 0.0), now=0.0)
        assert cr.replicas == 1  # idle but within timeout
        manager.tick("A", window("A", 0.0), now=31.0)
        assert cr.replicas == 0
        manager.acquire("A")  # next request cold-starts
        manager.release("A")
        assert cr.replicas == 1
        assert cr.cold_starts == 1

    def test_trace_replay_matches_clamp_ceil_oracle(self):
        clock = FakeClock()
        manager = manager_with_defaults(idle_timeout_s=5, clock=clock)
        cr = manager.provision(rc_with(name="A"))
        cfg = cr.effective_config
        trace = [0, 0, 40, 90, 200, 500, 500, 120, 60, 10, 0, 0, 0, 0, 0, 0, 0, 30]
        observed = []
        expected = []
        idle_since = None
        for t, rps in enumerate(trace):
            now = float(t)
            manager.tick("A", window("A", float(rps)), now=now)
            observed.append(cr.replicas)
            # independent replay of the published rule
            if rps > 0:
                idle_since = None
                expected.append(max(1, min(math.ceil(rps / cfg.per_replica_capacity_rps), cfg.max_replicas)))
            else:
                idle_since = now if idle_since is None else idle_since
                expected.append(0 if now - idle_since >= 5 else 1)
        assert observed == expected

    def test_metrics_window_counts_and_rps(self):
        clock = FakeClock()
        manager = manager_with_defaults(metrics_window_ms=1000, clock=clock)
        manager.provision(rc_with(name="A"))
        for _ in range(10):
            manager.record_invocation("A", 5.0, ok=True)
        manager.record_invocation("A", 50.0, ok=False)
        m = manager.metrics_window("A", now=0.5)
        assert m.observed_rps == pytest.approx(11.0)
        assert 0 < m.error_rate < 0.2
        clock.now = 10.0
        assert manager.metrics_window("A").observed_rps == 0.0


class TestAdmission:
    def test_semaphore_resize_wakes_waiters(self):
        sem = AdjustableSemaphore(0)
        acquired = threading.Event()

        def worker():
            assert sem.acquire(timeout=2.0)
            acquired.set()

        t = threading.Thread(target=worker)
        t.start()
        sem.set_capacity(1)
        t.join(timeout=2.0)
        assert acquired.is_set()

    def test_saturation_raises(self):
        manager = manager_with_defaults(admission_timeout_s=0.02)
        manager.provision(rc_with(name="A"))  # 1 replica
        manager.acquire("A")
        try:
            with pytest.raises(Saturated):
                manager.acquire("A")
        finally:
            manager.release("A")

    def test_scale_down_never_cancels_in_flight(self):
        manager = manager_with_defaults(admission_timeout_s=0.02)
        cr = manager.provision(rc_with(name="A"))
        manager.acquire("A")
        manager.apply_scaling(cr, type("D", (), {"new_replicas": 0, "reason": ""})())
        # the in-flight permit survives; releasing does not underflow
        manager.release("A")
        sem = manager._semaphores["A"]
        assert sem.in_flight == 0
