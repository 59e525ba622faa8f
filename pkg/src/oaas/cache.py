"""Partitioned in-memory object cache fronting the state store.

Ownership is assigned by the consistent-hashing ring; each logical node is
an in-process partition whose mutations serialize through its own lock.
Write-behind classes mark entries dirty on put; a per-node flusher persists
dirty entries in batches (last writer wins per object id — safe because
versions are monotone) either on an interval or when a dirty high-watermark
is hit. Dirty entries are never evicted.
"""

from __future__ import annotations

import threading
import time
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterable, Mapping

from .errors import NotOwner, StoreUnavailable
from .ring import HashRing, rebalance
from .store import ObjectRecord, PersistenceMode, StateStore


@dataclass
class CacheEntry:
    record: ObjectRecord
    dirty: bool = False
    dirtied_at: float | None = None


@dataclass(frozen=True)
class FlushReport:
    entries_flushed: int
    store_write_calls: int
    max_staleness_ms: float


class CacheNode:
    def __init__(self, node_id: str, entry_cap: int):
        self.node_id = node_id
        self.entry_cap = entry_cap
        self.entries: OrderedDict[str, CacheEntry] = OrderedDict()
        self.lock = threading.RLock()
        self.wakeup = threading.Condition(self.lock)
        self.hits = 0
        self.misses = 0
        self.dirty_n = 0  # maintained on every transition; avoids scans on the put path

    def dirty_count(self) -> int:
        with self.lock:
            return self.dirty_n

    def _store(self, object_id: str, entry: CacheEntry) -> None:
        # caller holds the lock
        old = self.entries.get(object_id)
        if old is not None and old.dirty:
            self.dirty_n -= 1
        if entry.dirty:
            self.dirty_n += 1
        self.entries[object_id] = entry
        self.entries.move_to_end(object_id)

    def _evict_if_needed(self) -> None:
        # caller holds the lock; clean entries go LRU-first, dirty ones never
        while len(self.entries) > self.entry_cap:
            victim = next((k for k, e in self.entries.items() if not e.dirty), None)
            if victim is None:
                return
            del self.entries[victim]


class DhtCache:
    def __init__(
        self,
        store: StateStore,
        node_ids: Iterable[str],
        *,
        vnodes_per_node: int = 128,
        hash_seed: int | None = None,
        batch_size: int = 100,
        flush_interval_ms: int = 50,
        high_watermark: int = 1000,
        entry_cap: int = 100_000,
    ):
        self.store = store
        self.batch_size = batch_size
        self.flush_interval_ms = flush_interval_ms
        self.high_watermark = high_watermark
        self.entry_cap = entry_cap
        kwargs = {} if hash_seed is None else {"seed": hash_seed}
        self.ring = HashRing(node_ids, vnodes_per_node, **kwargs)
        self.nodes: dict[str, CacheNode] = {n: CacheNode(n, entry_cap) for n in self.ring.nodes}
        self.remapped_keys = 0
        self._flushers: dict[str, threading.Thread] = {}
        self._stop = threading.Event()

    # -- ownership ------------------------------------------------------------

    def owner_of(self, object_id: str) -> str:
        return self.ring.owner_of(object_id)

    def _node(self, node_id: str) -> CacheNode:
        node = self.nodes.get(node_id)
        if node is None:
            raise KeyError(f"unknown cache node {node_id!r}")
        return node

    def _check_owner(self, node_id: str, object_id: str) -> CacheNode:
        owner = self.ring.owner_of(object_id)
        if owner != node_id:
            raise NotOwner(node_id, owner)
        return self._node(node_id)

    # -- reads / writes ------------------------------------------------------------

    def get(self, node_id: str, object_id: str) -> ObjectRecord:
        node = self._check_owner(node_id, object_id)
        with node.lock:
            entry = node.entries.get(object_id)
            if entry is not None:
                node.hits += 1
                node.entries.move_to_end(object_id)
                return entry.record
            node.misses += 1
        record = self.store.get_object(object_id)  # NotFound propagates
        with node.lock:
            entry = node.entries.get(object_id)
            if entry is None or entry.record.version < record.version:
                dirty = (
                    self.store.mode_of(record.cls) is PersistenceMode.WRITE_BEHIND
                    and self.store.durable_version(object_id) < record.version
                )
                node._store(
                    object_id,
                    CacheEntry(record, dirty=dirty, dirtied_at=time.monotonic() if dirty else None),
                )
                node._evict_if_needed()
                return record
            return entry.record

    def put(self, node_id: str, record: ObjectRecord) -> None:
        node = self._check_owner(node_id, record.id)
        mode = self.store.mode_of(record.cls)
        if mode is PersistenceMode.WRITE_THROUGH:
            # synchronous persistence before acknowledging; a no-op when the
            # commit already wrote this version through
            self.store.ensure_durable(record)
        notify = False
        with node.lock:
            entry = node.entries.get(record.id)
            if entry is not None and entry.record.version == record.version:
                # same committed state; refresh blob flags (they grow without
                # a version bump) but keep the entry's durability status
                if entry.record.blob_keys != record.blob_keys:
                    entry.record = record
                return
            if entry is not None and entry.record.version > record.version:
                return
            dirty = (
                mode is PersistenceMode.WRITE_BEHIND
                and self.store.durable_version(record.id) < record.version
            )
            dirtied_at = None
            if dirty:
                dirtied_at = entry.dirtied_at if (entry and entry.dirty and entry.dirtied_at) else time.monotonic()
            node._store(record.id, CacheEntry(record, dirty=dirty, dirtied_at=dirtied_at))
            node._evict_if_needed()
            if dirty and node.dirty_n >= self.high_watermark:
                notify = True
                node.wakeup.notify_all()
        if notify and not self._flushers:
            # nobody to wake; flush inline so the watermark still bounds dirtiness
            self.flush(node_id)

    # -- flushing ------------------------------------------------------------

    def flush(self, node_id: str) -> FlushReport:
        """Persist this node's dirty entries in batches; entries become clean.

        On StoreUnavailable everything not yet persisted stays dirty and the
        error propagates; the next flush retries.
        """
        node = self._node(node_id)
        with node.lock:
            snapshot = [
                (oid, e.record, e.dirtied_at)
                for oid, e in node.entries.items()
                if e.dirty
            ]
        if not snapshot:
            return FlushReport(0, 0, 0.0)

        write_calls = 0
        persisted: list[tuple[str, ObjectRecord, float | None]] = []
        failure: StoreUnavailable | None = None
        for start in range(0, len(snapshot), self.batch_size):
            batch = snapshot[start : start + self.batch_size]
            try:
                self.store.persist_batch([rec for _, rec, _ in batch], partition=node_id)
            except StoreUnavailable as exc:
                failure = exc
                break
            write_calls += 1
            persisted.extend(batch)

        now = time.monotonic()
        max_staleness = 0.0
        with node.lock:
            for oid, rec, dirtied_at in persisted:
                if dirtied_at is not None:
                    max_staleness = max(max_staleness, (now - dirtied_at) * 1000.0)
                entry = node.entries.get(oid)
                if entry is not None and entry.dirty and entry.record.version <= rec.version:
                    entry.dirty = False
                    entry.dirtied_at = None
                    node.dirty_n -= 1
        if failure is not None:
            raise failure
        return FlushReport(len(persisted), write_calls, max_staleness)

    def flush_all(self) -> FlushReport:
        total = calls = 0
        staleness = 0.0
        for node_id in list(self.nodes):
            report = self.flush(node_id)
            total += report.entries_flushed
            calls += report.store_write_calls
            staleness = max(staleness, report.max_staleness_ms)
        return FlushReport(total, calls, staleness)

    def start_flushers(self) -> None:
        if self._flushers:
            return
        self._stop.clear()
        for node_id in self.nodes:
            t = threading.Thread(target=self._flusher_loop, args=(node_id,), daemon=True, name=f"flusher-{node_id}")
            self._flushers[node_id] = t
            t.start()

    def stop_flushers(self) -> None:
        self._stop.set()
        for node in self.nodes.values():
            with node.lock:
                node.wakeup.notify_all()
        for t in self._flushers.values():
            t.join(timeout=2.0)
        self._flushers.clear()
        # final sweep so a clean shutdown leaves nothing dirty
        try:
            self.flush_all()
        except StoreUnavailable:
            pass

    def _flusher_loop(self, node_id: str) -> None:
        node = self._node(node_id)
        while not self._stop.is_set():
            with node.lock:
                node.wakeup.wait(timeout=self.flush_interval_ms / 1000.0)
            if self._stop.is_set():
                return
            try:
                if node.dirty_count():
                    self.flush(node_id)
            except StoreUnavailable:
                continue  # entries stayed dirty; retry next interval

    # -- membership ------------------------------------------------------------

    def set_nodes(self, node_ids: Iterable[str]) -> Mapping[str, str]:
        """Rebuild the ring and migrate cached entries; returns the migration plan."""
        new_ring = self.ring.with_nodes(node_ids)
        old_nodes = self.nodes
        restart_flushers = bool(self._flushers)
        if restart_flushers:
            self.stop_flushers()

        # quiesce: take every partition lock, move entries wholesale
        for node in old_nodes.values():
            node.lock.acquire()
        try:
            all_entries: dict[str, tuple[CacheEntry, str]] = {}
            for node in old_nodes.values():
                for oid, entry in node.entries.items():
                    all_entries[oid] = (entry, node.node_id)
            plan = dict(rebalance(self.ring, new_ring, all_entries.keys()))

            new_nodes = {
                n: old_nodes[n] if n in old_nodes else CacheNode(n, self.entry_cap)
                for n in new_ring.nodes
            }
            for oid, (entry, home) in all_entries.items():
                target = new_ring.owner_of(oid)
                if target == home and home in new_nodes:
                    continue
                if home in old_nodes:
                    old_nodes[home].entries.pop(oid, None)
                new_nodes[target].entries[oid] = entry
            for node in new_nodes.values():
                node.dirty_n = sum(1 for e in node.entries.values() if e.dirty)
            self.ring = new_ring
            self.nodes = new_nodes
            self.remapped_keys += len(plan)
        finally:
            for node in old_nodes.values():
                node.lock.release()
        if restart_flushers:
            self.start_flushers()
        return plan

    # -- metrics ------------------------------------------------------------

    def dirty_entries(self) -> int:
        return sum(node.dirty_count() for node in self.nodes.values())

    def metrics(self) -> dict[str, int]:
        return {
            "cache_hits": sum(n.hits for n in self.nodes.values()),
            "cache_misses": sum(n.misses for n in self.nodes.values()),
            "store_write_calls": self.store.durable.write_calls if self.store.durable else 0,
            "dirty_entries": self.dirty_entries(),
            "remapped_keys": self.remapped_keys,
        }
