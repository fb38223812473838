"""Single-flight dedup cache: one generation per cache key, shared by all
concurrent requesters, with LRU eviction of published entries."""

from __future__ import annotations

import enum
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any

from emf.model import EmfError


class LeaderFailed(EmfError):
    """The requester that owned this key's generation reported failure."""


class Role(enum.Enum):
    LEADER = "leader"
    FOLLOWER = "follower"


@dataclass
class _Pending:
    done: threading.Event = field(default_factory=threading.Event)
    value: Any = None
    error: str | None = None
    waiters: int = 0


class DedupCache:
    """At most one generation in flight per key.

    First acquirer of an unknown key becomes LEADER and must publish() or
    fail(). Followers block until the leader resolves. Ready values are kept
    under an LRU policy; pending entries are never evicted.
    """

    def __init__(self, capacity: int = 256):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._lock = threading.Lock()
        self._ready: OrderedDict[str, Any] = OrderedDict()
        self._pending: dict[str, _Pending] = {}
        self.hits = 0
        self.misses = 0
        self.evictions = 0

    def acquire_or_wait(self, key: str, timeout: float | None = None) -> tuple[Role, Any]:
        """(LEADER, None) when this caller must generate; (FOLLOWER, value)
        when the value exists or another caller published it while we waited.

        Raises LeaderFailed if the leader failed, TimeoutError on wait
        timeout.
        """
        with self._lock:
            if key in self._ready:
                self._ready.move_to_end(key)
                self.hits += 1
                return Role.FOLLOWER, self._ready[key]
            entry = self._pending.get(key)
            if entry is None:
                self.misses += 1
                self._pending[key] = _Pending()
                return Role.LEADER, None
            entry.waiters += 1
            self.hits += 1
        if not entry.done.wait(timeout):
            raise TimeoutError(f"timed out waiting for key {key}")
        if entry.error is not None:
            raise LeaderFailed(entry.error)
        return Role.FOLLOWER, entry.value

    def publish(self, key: str, value: Any) -> None:
        with self._lock:
            entry = self._pending.pop(key, None)
            if entry is None:
                raise KeyError(f"publish without pending acquire for key {key}")
            self._ready[key] = value
            self._ready.move_to_end(key)
            while len(self._ready) > self.capacity:
                self._ready.popitem(last=False)
                self.evictions += 1
        entry.value = value
        entry.done.set()

    def fail(self, key: str, reason: str) -> None:
        """Abort the in-flight generation; waiting followers see LeaderFailed
        and the key becomes acquirable again (next caller is the new leader)."""
        with self._lock:
            entry = self._pending.pop(key, None)
            if entry is None:
                raise KeyError(f"fail without pending acquire for key {key}")
        entry.error = reason
        entry.done.set()

    def contains_ready(self, key: str) -> bool:
        with self._lock:
            return key in self._ready

    def stats(self) -> dict:
        with self._lock:
            return {
                "ready_entries": len(self._ready),
                "pending_entries": len(self._pending),
                "hits": self.hits,
                "misses": self.misses,
                "evictions": self.evictions,
                "capacity": self.capacity,
            }
