"""Seeded edge-link simulator: latency, bandwidth, and message drop.

A transfer outcome is Delivered(elapsed_ms) or Dropped. Exactly one RNG draw
is consumed per transfer, from a per-link seeded stream, so outcome sequences
reproduce across runs independent of wall-clock scheduling.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

# XOR'd into the link seed for the heartbeat-plane stream so background
# heartbeat traffic cannot perturb the request-plane drop sequence.
HEARTBEAT_STREAM_SALT = 0x48425254


@dataclass(frozen=True)
class LinkParams:
    latency_ms: int = 20
    bandwidth_bps: int = 10_000_000
    drop_probability: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.latency_ms < 0:
            raise ValueError(f"latency_ms must be >= 0, got {self.latency_ms}")
        if self.bandwidth_bps <= 0:
            raise ValueError(f"bandwidth_bps must be > 0, got {self.bandwidth_bps}")
        if not 0.0 <= self.drop_probability < 1.0:
            raise ValueError(f"drop_probability must be in [0,1), got {self.drop_probability}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {self.seed}")

    def to_dict(self) -> dict:
        return {
            "latency_ms": self.latency_ms,
            "bandwidth_bps": self.bandwidth_bps,
            "drop_probability": self.drop_probability,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> LinkParams:
        return cls(
            latency_ms=d["latency_ms"],
            bandwidth_bps=d["bandwidth_bps"],
            drop_probability=d["drop_probability"],
            seed=d["seed"],
        )


@dataclass(frozen=True)
class Delivered:
    elapsed_ms: int


@dataclass(frozen=True)
class Dropped:
    pass


def transfer_time_ms(bytes_len: int, link: LinkParams) -> int:
    # Integer ceiling keeps the formula exact for arbitrarily large payloads.
    return link.latency_ms + -(-1000 * bytes_len // link.bandwidth_bps)


class LinkSimulator:
    """One seeded RNG stream for one link (or one message class of a link)."""

    def __init__(self, link: LinkParams, stream_salt: int = 0):
        self.link = link
        self._rng = random.Random((link.seed ^ stream_salt) & (2**64 - 1))

    def simulate_transfer(self, bytes_len: int) -> Delivered | Dropped:
        if bytes_len < 0:
            raise ValueError("bytes_len must be >= 0")
        draw = self._rng.random()
        if draw < self.link.drop_probability:
            return Dropped()
        return Delivered(elapsed_ms=transfer_time_ms(bytes_len, self.link))


def simulate_transfer(
    bytes_len: int, link: LinkParams, rng: random.Random
) -> Delivered | Dropped:
    """Functional form taking an explicit RNG state; one draw per call."""
    if bytes_len < 0:
        raise ValueError("bytes_len must be >= 0")
    if rng.random() < link.drop_probability:
        return Dropped()
    return Delivered(elapsed_ms=transfer_time_ms(bytes_len, link))
