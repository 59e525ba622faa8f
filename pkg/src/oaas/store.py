"""Object records, fail-safe versioned transitions, blobs, and durability.

Records live in a canonical in-memory table; commits are compare-version-
and-swap under a per-object lock, so a failed invocation never leaves a
half-applied state. Durability follows the per-class persistence mode:
WRITE_THROUGH persists each commit synchronously, WRITE_BEHIND leaves
persistence to the cache flusher's batches, MEMORY_ONLY never touches the
durable store.

Blobs are plain files under ``{objectId}/{key}`` reached through presigned
URLs: an HMAC-SHA-256 over "objectId\\nkey\\nmode\\nexpires" grants
time-limited GET/PUT access without sharing the secret.
"""

from __future__ import annotations

import copy
import glob
import hashlib
import hmac
import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Callable, Iterable, Mapping, Sequence

from .errors import (
    Forbidden,
    NotFound,
    StateTooLarge,
    StoreUnavailable,
    TokenReused,
    UnknownClass,
    UnknownKey,
    VersionConflict,
)

MAX_STATE_BYTES = 1 << 20  # inline task payloads stay bounded; blobs are uncapped


class PersistenceMode(str, Enum):
    WRITE_THROUGH = "WRITE_THROUGH"
    WRITE_BEHIND = "WRITE_BEHIND"
    MEMORY_ONLY = "MEMORY_ONLY"


@dataclass(frozen=True)
class ObjectRecord:
    id: str
    cls: str
    state: dict
    blob_keys: frozenset[str]
    version: int
    last_committed_at: float

    def to_wire(self) -> dict:
        return {
            "id": self.id,
            "cls": self.cls,
            "state": self.state,
            "blobKeys": sorted(self.blob_keys),
            "version": self.version,
            "lastCommittedAt": self.last_committed_at,
        }

    @classmethod
    def from_wire(cls, d: Mapping) -> "ObjectRecord":
        return cls(
            id=d["id"],
            cls=d["cls"],
            state=d["state"],
            blob_keys=frozenset(d.get("blobKeys", ())),
            version=d["version"],
            last_committed_at=d.get("lastCommittedAt", 0.0),
        )


@dataclass(frozen=True)
class TransitionToken:
    token_id: str
    object_id: str
    expected_version: int
    opened_at: float


@dataclass(frozen=True)
class PresignedUrl:
    path: str
    mode: str  # "GET" | "PUT"
    expires: int
    sig: str

    @property
    def query(self) -> str:
        return f"mode={self.mode}&expires={self.expires}&sig={self.sig}"

    @property
    def url(self) -> str:
        return f"{self.path}?{self.query}"


class FileKVStore:
    """Append/compact key-value file per partition.

    Each ``write_batch`` appends one line (a JSON array of records) to the
    partition's log — exactly one backing-store write call regardless of the
    record count. Records at or below the already-flushed version are
    dropped before writing, which makes replay after a flusher failure a
    content-level no-op.
    """

    def __init__(self, directory: str, fsync: bool = False):
        self.directory = directory
        self.fsync = fsync
        os.makedirs(directory, exist_ok=True)
        self._lock = threading.Lock()
        self._index: dict[str, dict] = {}
        self.write_calls = 0
        self.fail_times = 0  # test hook: next N write_batch calls raise StoreUnavailable
        self._replay()

    def _replay(self) -> None:
        for path in sorted(glob.glob(os.path.join(self.directory, "*.log"))):
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    for rec in json.loads(line):
                        current = self._index.get(rec["id"])
                        if current is None or rec["version"] > current["version"]:
                            self._index[rec["id"]] = rec

    def _log_path(self, partition: str) -> str:
        return os.path.join(self.directory, f"{partition}.log")

    def write_batch(self, records: Sequence[ObjectRecord], partition: str = "main") -> int:
        with self._lock:
            if self.fail_times > 0:
                self.fail_times -= 1
                raise StoreUnavailable("injected failure")
            self.write_calls += 1
            fresh = []
            for rec in records:
                current = self._index.get(rec.id)
                if current is None or rec.version > current["version"]:
                    fresh.append(rec.to_wire())
            if fresh:
                with open(self._log_path(partition), "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(fresh, separators=(",", ":")) + "\n")
                    fh.flush()
                    if self.fsync:
                        os.fsync(fh.fileno())
                for rec_wire in fresh:
                    self._index[rec_wire["id"]] = rec_wire
            return len(fresh)

    def load(self, object_id: str) -> ObjectRecord | None:
        with self._lock:
            raw = self._index.get(object_id)
        return ObjectRecord.from_wire(raw) if raw else None

    def flushed_version(self, object_id: str) -> int:
        with self._lock:
            raw = self._index.get(object_id)
        return raw["version"] if raw else -1

    def __len__(self) -> int:
        with self._lock:
            return len(self._index)

    def compact(self) -> None:
        """Rewrite all partitions into one log holding only the latest records."""
        with self._lock:
            for path in glob.glob(os.path.join(self.directory, "*.log")):
                os.remove(path)
            if self._index:
                with open(self._log_path("compacted"), "w", encoding="utf-8") as fh:
                    fh.write(json.dumps(list(self._index.values()), separators=(",", ":")) + "\n")


class BlobStore:
    """Directory-tree blob storage: one file per (objectId, key)."""

    def __init__(self, directory: str):
        self.directory = directory
        os.makedirs(directory, exist_ok=True)

    def _path(self, object_id: str, key: str) -> str:
        # ids/keys are identifiers; keep paths flat and traversal-safe
        safe = os.path.join(self.directory, object_id, key)
        if os.path.commonpath([os.path.abspath(safe), os.path.abspath(self.directory)]) != os.path.abspath(
            self.directory
        ):
            raise Forbidden("blob path escapes storage root")
        return safe

    def write(self, object_id: str, key: str, data: bytes) -> None:
        path = self._path(object_id, key)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        tmp = f"{path}.tmp-{uuid.uuid4().hex}"
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)

    def read(self, object_id: str, key: str) -> bytes:
        path = self._path(object_id, key)
        if not os.path.exists(path):
            raise NotFound(f"blob {object_id}/{key}")
        with open(path, "rb") as fh:
            return fh.read()

    def exists(self, object_id: str, key: str) -> bool:
        return os.path.exists(self._path(object_id, key))

    def keys(self, object_id: str) -> set[str]:
        base = os.path.join(self.directory, object_id)
        if not os.path.isdir(base):
            return set()
        return {name for name in os.listdir(base) if not name.endswith(".tmp")}


def _check_state(state: Any) -> dict:
    if not isinstance(state, dict):
        raise ValueError("state must be a string-keyed document")
    try:
        encoded = json.dumps(state)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"state must be a JSON tree of scalars/lists/maps: {exc}") from None
    if len(encoded.encode("utf-8")) > MAX_STATE_BYTES:
        raise StateTooLarge(len(encoded), MAX_STATE_BYTES)
    return copy.deepcopy(state)


class StateStore:
    """Canonical object table with fail-safe transitions and presigned blobs."""

    def __init__(
        self,
        durable: FileKVStore | None,
        blobs: BlobStore | None,
        secret: str,
        key_specs_of: Callable[[str], set[str] | None],
        default_mode: PersistenceMode = PersistenceMode.WRITE_THROUGH,
        clock: Callable[[], float] = time.time,
    ):
        self.durable = durable
        self.blobs = blobs
        self._secret = secret.encode("utf-8")
        self._key_specs_of = key_specs_of
        self._default_mode = default_mode
        self._clock = clock
        self._objects: dict[str, ObjectRecord] = {}
        self._tokens: dict[str, bool] = {}  # token_id -> used
        self._class_modes: dict[str, PersistenceMode] = {}
        self._table_lock = threading.Lock()
        self._object_locks: dict[str, threading.Lock] = {}

    # -- modes ------------------------------------------------------------

    def set_class_mode(self, cls: str, mode: PersistenceMode) -> None:
        self._class_modes[cls] = mode

    def mode_of(self, cls: str) -> PersistenceMode:
        return self._class_modes.get(cls, self._default_mode)

    # -- locking ------------------------------------------------------------

    def _lock_for(self, object_id: str) -> threading.Lock:
        with self._table_lock:
            lock = self._object_locks.get(object_id)
            if lock is None:
                lock = self._object_locks[object_id] = threading.Lock()
            return lock

    # -- objects ------------------------------------------------------------

    def create_object(self, cls: str, init_state: dict | None = None, object_id: str | None = None) -> ObjectRecord:
        if self._key_specs_of(cls) is None:
            raise UnknownClass(cls)
        state = _check_state(init_state or {})
        record = ObjectRecord(
            id=object_id or uuid.uuid4().hex,
            cls=cls,
            state=state,
            blob_keys=frozenset(),
            version=0,
            last_committed_at=self._clock(),
        )
        with self._lock_for(record.id):
            if record.id in self._objects:
                raise ValueError(f"object id {record.id} already exists")
            self._objects[record.id] = record
            if self.mode_of(cls) is PersistenceMode.WRITE_THROUGH and self.durable is not None:
                self.durable.write_batch([record])
        return record

    def get_object(self, object_id: str) -> ObjectRecord:
        record = self._objects.get(object_id)
        if record is not None:
            return record
        # after a restart the canonical table warms lazily from durable storage
        if self.durable is not None:
            durable_rec = self.durable.load(object_id)
            if durable_rec is not None:
                with self._lock_for(object_id):
                    if object_id not in self._objects:
                        stored = self.blobs.keys(object_id) if self.blobs else set()
                        self._objects[object_id] = replace(
                            durable_rec, blob_keys=frozenset(stored | set(durable_rec.blob_keys))
                        )
                return self._objects[object_id]
        raise NotFound(f"object {object_id}")

    def stored_blob_keys(self, object_id: str) -> set[str]:
        return set(self.get_object(object_id).blob_keys)

    def durable_version(self, object_id: str) -> int:
        return self.durable.flushed_version(object_id) if self.durable is not None else -1

    def ensure_durable(self, record: ObjectRecord) -> None:
        """Persist the record now unless the durable store already has this version."""
        if self.durable is not None and self.durable.flushed_version(record.id) < record.version:
            self.durable.write_batch([record])

    # -- transitions -----------------------------------------------------------

    def begin_transition(self, object_id: str, expected_version: int) -> TransitionToken:
        self.get_object(object_id)  # NotFound if absent
        token = TransitionToken(
            token_id=uuid.uuid4().hex,
            object_id=object_id,
            expected_version=expected_version,
            opened_at=self._clock(),
        )
        self._tokens[token.token_id] = False
        return token

    def commit_transition(self, token: TransitionToken, new_state: dict) -> ObjectRecord:
        """Atomically replace state iff the stored version still matches.

        On mismatch nothing mutates and the token is consumed — it could
        never succeed anyway. At most one commit ever succeeds per token.
        """
        with self._lock_for(token.object_id):
            used = self._tokens.get(token.token_id)
            if used is None or used:
                raise TokenReused()
            current = self._objects.get(token.object_id)
            if current is None:
                self._tokens[token.token_id] = True
                raise NotFound(f"object {token.object_id}")
            if current.version != token.expected_version:
                self._tokens[token.token_id] = True
                raise VersionConflict(current.version)
            state = _check_state(new_state)
            record = replace(
                current,
                state=state,
                version=current.version + 1,
                last_committed_at=self._clock(),
            )
            self._objects[token.object_id] = record
            self._tokens[token.token_id] = True
            if self.mode_of(record.cls) is PersistenceMode.WRITE_THROUGH and self.durable is not None:
                self.durable.write_batch([record])
            return record

    def abort_transition(self, token: TransitionToken) -> bool:
        self._tokens[token.token_id] = True
        return True

    # -- presigned blobs -----------------------------------------------------------

    def _sign(self, object_id: str, key: str, mode: str, expires: int) -> str:
        msg = f"{object_id}\n{key}\n{mode}\n{expires}".encode("utf-8")
        return hmac.new(self._secret, msg, hashlib.sha256).hexdigest()

    def presign_blob(self, object_id: str, key: str, mode: str, ttl_seconds: int) -> PresignedUrl:
        record = self.get_object(object_id)
        specs = self._key_specs_of(record.cls) or set()
        if key not in specs:
            raise UnknownKey(key, record.cls)
        if mode not in ("GET", "PUT"):
            raise ValueError(f"mode must be GET or PUT, got {mode!r}")
        expires = int(self._clock()) + int(ttl_seconds)
        return PresignedUrl(
            path=f"/blobs/{object_id}/{key}",
            mode=mode,
            expires=expires,
            sig=self._sign(object_id, key, mode, expires),
        )

    def verify_access(self, object_id: str, key: str, verb_mode: str, query: Mapping[str, str]) -> None:
        """Reject tampered, expired, or mode-mismatched presigned access."""
        mode = str(query.get("mode", ""))
        sig = str(query.get("sig", ""))
        raw_expires = str(query.get("expires", ""))
        try:
            expires = int(raw_expires)
        except ValueError:
            raise Forbidden("malformed expiry") from None
        expected = self._sign(object_id, key, mode, expires)
        if not hmac.compare_digest(expected, sig):
            raise Forbidden("signature mismatch")
        if mode != verb_mode:
            raise Forbidden(f"URL signed for {mode}, used for {verb_mode}")
        if expires < self._clock():
            raise Forbidden("URL expired")

    def read_blob(self, object_id: str, key: str, query: Mapping[str, str]) -> bytes:
        if self.blobs is None:
            raise StoreUnavailable("no blob storage configured")
        self.verify_access(object_id, key, "GET", query)
        return self.blobs.read(object_id, key)

    def write_blob(self, object_id: str, key: str, query: Mapping[str, str], data: bytes) -> None:
        if self.blobs is None:
            raise StoreUnavailable("no blob storage configured")
        self.verify_access(object_id, key, "PUT", query)
        self.blobs.write(object_id, key, data)
        with self._lock_for(object_id):
            record = self._objects.get(object_id)
            if record is not None and key not in record.blob_keys:
                self._objects[object_id] = replace(record, blob_keys=record.blob_keys | {key})

    # -- batched persistence -----------------------------------------------------------

    def persist_batch(self, records: Sequence[ObjectRecord], partition: str = "main") -> int:
        """One backing-store write call for the whole batch (the flusher's hook)."""
        if self.durable is None:
            raise StoreUnavailable("no durable store configured")
        return self.durable.write_batch(records, partition=partition)

    # -- introspection -----------------------------------------------------------

    def object_count(self) -> int:
        return len(self._objects)

    def object_ids(self) -> Iterable[str]:
        return list(self._objects.keys())
