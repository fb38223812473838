"""Expert registry and routing: liveness tracking, load accounting, and the
three selection policies under single-gate or multi-gate semantics."""

from __future__ import annotations

import enum
import threading
import time
from dataclasses import dataclass, field

from emf.linksim import LinkParams
from emf.model import EmfError, TaskKind

# An expert missing this many consecutive heartbeats is no longer eligible.
LIVENESS_INTERVALS = 3


class DuplicateExpert(EmfError):
    pass


class UnknownExpert(EmfError):
    pass


class NoEligibleExpert(EmfError):
    pass


class Policy(enum.Enum):
    ROUND_ROBIN = "round_robin"
    LEAST_LOADED = "least_loaded"
    LATENCY_AWARE = "latency_aware"


class GateMode(enum.Enum):
    SINGLE_GATE = "single_gate"
    MULTI_GATE = "multi_gate"


@dataclass(frozen=True)
class RoutingPolicy:
    policy: Policy = Policy.ROUND_ROBIN
    gate_mode: GateMode = GateMode.SINGLE_GATE


@dataclass
class ExpertDescriptor:
    expert_id: str
    task_kinds_served: frozenset[TaskKind] = frozenset(TaskKind)
    max_pixels: int = 1920 * 1080
    link: LinkParams = field(default_factory=LinkParams)
    heartbeat_interval_ms: int = 1000
    inflight: int = 0
    total_served: int = 0
    last_heartbeat: float = 0.0

    def __post_init__(self) -> None:
        if not self.expert_id:
            raise ValueError("expert_id must be non-empty")
        self.task_kinds_served = frozenset(self.task_kinds_served)
        if not self.task_kinds_served:
            raise ValueError("task_kinds_served must be non-empty")
        if self.inflight < 0:
            raise ValueError("inflight must be >= 0")

    def estimate_ms(self, payload_bytes: int) -> float:
        """Estimated service time for LatencyAware routing."""
        return self.link.latency_ms + 1000.0 * payload_bytes / self.link.bandwidth_bps

    def snapshot(self) -> dict:
        return {
            "expert_id": self.expert_id,
            "task_kinds": sorted(k.value for k in self.task_kinds_served),
            "max_pixels": self.max_pixels,
            "link": self.link.to_dict(),
            "heartbeat_interval_ms": self.heartbeat_interval_ms,
            "inflight": self.inflight,
            "total_served": self.total_served,
            "last_heartbeat": self.last_heartbeat,
        }


class Registry:
    """Shared mutable expert table; every operation is linearizable."""

    def __init__(self, clock=time.monotonic):
        self._clock = clock
        self._lock = threading.Lock()
        self._experts: dict[str, ExpertDescriptor] = {}
        self._rotation = 0  # RoundRobin cursor, part of observable state

    def register(self, d: ExpertDescriptor) -> None:
        with self._lock:
            if d.expert_id in self._experts:
                raise DuplicateExpert(d.expert_id)
            d.last_heartbeat = self._clock()
            self._experts[d.expert_id] = d

    def deregister(self, expert_id: str) -> None:
        with self._lock:
            self._experts.pop(expert_id, None)

    def heartbeat(self, expert_id: str, timestamp: float | None = None) -> None:
        with self._lock:
            d = self._experts.get(expert_id)
            if d is None:
                raise UnknownExpert(expert_id)
            d.last_heartbeat = self._clock() if timestamp is None else timestamp

    def expire(self, now: float | None = None) -> list[str]:
        """Drop experts silent for more than LIVENESS_INTERVALS heartbeats."""
        now = self._clock() if now is None else now
        with self._lock:
            evicted = [
                eid
                for eid, d in self._experts.items()
                if now - d.last_heartbeat > LIVENESS_INTERVALS * d.heartbeat_interval_ms / 1000.0
            ]
            for eid in evicted:
                del self._experts[eid]
            return evicted

    def _eligible(self, kind: TaskKind, gate_mode: GateMode, now: float) -> list[ExpertDescriptor]:
        out = []
        for d in self._experts.values():
            if now - d.last_heartbeat > LIVENESS_INTERVALS * d.heartbeat_interval_ms / 1000.0:
                continue
            if gate_mode is GateMode.MULTI_GATE and kind not in d.task_kinds_served:
                continue
            out.append(d)
        return sorted(out, key=lambda d: d.expert_id)

    def eligible_ids(self, kind: TaskKind, gate_mode: GateMode = GateMode.SINGLE_GATE) -> list[str]:
        with self._lock:
            return [d.expert_id for d in self._eligible(kind, gate_mode, self._clock())]

    def select_expert(
        self,
        kind: TaskKind,
        policy: RoutingPolicy,
        payload_estimate: int = 0,
        exclude: frozenset[str] = frozenset(),
    ) -> str:
        """Pick an expert; deterministic given registry state. `exclude` lets
        retries skip experts that already failed this request."""
        with self._lock:
            now = self._clock()
            eligible = [
                d for d in self._eligible(kind, policy.gate_mode, now) if d.expert_id not in exclude
            ]
            if not eligible:
                raise NoEligibleExpert(f"no live expert for kind {kind.value}")
            if policy.policy is Policy.ROUND_ROBIN:
                choice = eligible[self._rotation % len(eligible)]
                self._rotation += 1
            elif policy.policy is Policy.LEAST_LOADED:
                choice = min(eligible, key=lambda d: (d.inflight, d.expert_id))
            else:
                choice = min(eligible, key=lambda d: (d.estimate_ms(payload_estimate), d.expert_id))
            return choice.expert_id

    def mark_dispatch(self, expert_id: str) -> None:
        with self._lock:
            d = self._experts.get(expert_id)
            if d is None:
                raise UnknownExpert(expert_id)
            d.inflight += 1

    def mark_complete(self, expert_id: str) -> None:
        with self._lock:
            d = self._experts.get(expert_id)
            if d is None:
                return  # expert expired while serving; nothing to account
            d.inflight = max(0, d.inflight - 1)
            d.total_served += 1

    def mark_failed(self, expert_id: str) -> None:
        """Dispatch ended without a usable result: release the slot but do
        not count it as served."""
        with self._lock:
            d = self._experts.get(expert_id)
            if d is None:
                return
            d.inflight = max(0, d.inflight - 1)

    def get(self, expert_id: str) -> ExpertDescriptor:
        with self._lock:
            d = self._experts.get(expert_id)
            if d is None:
                raise UnknownExpert(expert_id)
            return d

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "rotation": self._rotation,
                "experts": [d.snapshot() for d in sorted(self._experts.values(), key=lambda d: d.expert_id)],
            }

    def __len__(self) -> int:
        with self._lock:
            return len(self._experts)
