"""Service configuration file: JSON, schema documented in docs/config.md.

Everything is optional; defaults give a self-contained local deployment with
three in-process mock workers and an in-memory store.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from emf.gate import GateConfig, GateMode, LLMEndpointConfig
from emf.linksim import LinkParams
from emf.metrics import MetricsConfig
from emf.orchestrator import Orchestrator, OrchestratorConfig, build_local_fleet
from emf.registry import Policy, RoutingPolicy
from emf.registry import GateMode as RoutingGateMode
from emf.store import Store


@dataclass(frozen=True)
class AppConfig:
    data_dir: str | None = None
    listen: str = "127.0.0.1:8080"
    local_workers: int = 3
    worker_endpoints: tuple[tuple[str, int], ...] = ()
    worker_link: LinkParams = field(default_factory=LinkParams)
    time_scale: float = 0.0
    orchestrator: OrchestratorConfig = field(default_factory=OrchestratorConfig)

    @classmethod
    def from_dict(cls, raw: dict) -> AppConfig:
        known = {
            "data_dir",
            "listen",
            "local_workers",
            "worker_endpoints",
            "worker_link",
            "time_scale",
            "policy",
            "gate_mode",
            "gate",
            "metrics",
            "retries",
            "request_timeout_s",
            "dedup_capacity",
            "crossfade_frames",
            "max_concurrent_jobs",
        }
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")

        gate_raw = raw.get("gate", {})
        llm = (
            LLMEndpointConfig(
                base_url=gate_raw["llm"]["base_url"],
                model_name=gate_raw["llm"]["model_name"],
                api_key=gate_raw["llm"].get("api_key", ""),
                timeout_ms=gate_raw["llm"].get("timeout_ms", 10_000),
                max_retries=gate_raw["llm"].get("max_retries", 2),
            )
            if "llm" in gate_raw
            else None
        )
        gate = GateConfig(mode=GateMode(gate_raw.get("mode", "rule_based")), llm=llm)

        metrics_raw = raw.get("metrics", {})
        metrics = MetricsConfig(
            hist_bins=metrics_raw.get("hist_bins", 8),
            k_sharpness=metrics_raw.get("k_sharpness", 100.0),
            scorer_endpoint=metrics_raw.get("scorer_endpoint"),
            scorer_timeout_ms=metrics_raw.get("scorer_timeout_ms", 10_000),
        )

        orchestrator = OrchestratorConfig(
            policy=RoutingPolicy(
                policy=Policy(raw.get("policy", "round_robin")),
                gate_mode=RoutingGateMode(raw.get("gate_mode", "single_gate")),
            ),
            gate=gate,
            metrics=metrics,
            retries=raw.get("retries", 2),
            request_timeout_s=raw.get("request_timeout_s", 30.0),
            dedup_capacity=raw.get("dedup_capacity", 256),
            crossfade_frames=raw.get("crossfade_frames", 0),
            max_concurrent_jobs=raw.get("max_concurrent_jobs", 4),
        )

        endpoints = []
        for entry in raw.get("worker_endpoints", []):
            endpoints.append((entry["host"], int(entry["port"])))

        return cls(
            data_dir=raw.get("data_dir"),
            listen=raw.get("listen", "127.0.0.1:8080"),
            local_workers=raw.get("local_workers", 3),
            worker_endpoints=tuple(endpoints),
            worker_link=LinkParams.from_dict(raw["worker_link"])
            if "worker_link" in raw
            else LinkParams(),
            time_scale=raw.get("time_scale", 0.0),
            orchestrator=orchestrator,
        )


def load_config(path: str | Path) -> AppConfig:
    return AppConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def build_orchestrator(cfg: AppConfig, data_dir: str | None = None) -> Orchestrator:
    """Orchestrator plus its worker fleet per config. `data_dir` (e.g. from
    EMF_DATA_DIR) overrides the config value."""
    store = Store(data_dir if data_dir is not None else cfg.data_dir)
    orchestrator = Orchestrator(store=store, config=cfg.orchestrator)
    if cfg.local_workers > 0:
        build_local_fleet(
            orchestrator,
            count=cfg.local_workers,
            base_seed=cfg.worker_link.seed,
            latency_ms=cfg.worker_link.latency_ms,
            bandwidth_bps=cfg.worker_link.bandwidth_bps,
            drop_probability=cfg.worker_link.drop_probability,
            time_scale=cfg.time_scale,
        )
    for host, port in cfg.worker_endpoints:
        orchestrator.attach_tcp_worker(host, port)
    return orchestrator
