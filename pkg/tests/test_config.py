"""Config file parsing and orchestrator assembly."""

import json

import pytest

from emf.config import AppConfig, build_orchestrator, load_config
from emf.gate import GateMode
from emf.registry import Policy


class TestParsing:
    def test_defaults(self):
        cfg = AppConfig.from_dict({})
        assert cfg.data_dir is None
        assert cfg.local_workers == 3
        assert cfg.orchestrator.policy.policy is Policy.ROUND_ROBIN
        assert cfg.orchestrator.gate.mode is GateMode.RULE_BASED

    def test_full_document(self, tmp_path):
        doc = {
            "data_dir": str(tmp_path / "state"),
            "listen": "0.0.0.0:9999",
            "local_workers": 1,
            "worker_endpoints": [{"host": "10.0.0.5", "port": 7070}],
            "worker_link": {"latency_ms": 5, "bandwidth_bps": 1000, "drop_probability": 0.1, "seed": 3},
            "policy": "latency_aware",
            "gate_mode": "multi_gate",
            "gate": {
                "mode": "llm_with_rule_fallback",
                "llm": {"base_url": "http://gate.local", "model_name": "m1"},
            },
            "metrics": {"hist_bins": 16, "k_sharpness": 50.0},
            "retries": 1,
            "request_timeout_s": 5.0,
        }
        path = tmp_path / "config.json"
        path.write_text(json.dumps(doc))
        cfg = load_config(path)
        assert cfg.listen == "0.0.0.0:9999"
        assert cfg.worker_endpoints == (("10.0.0.5", 7070),)
        assert cfg.worker_link.latency_ms == 5
        assert cfg.orchestrator.policy.policy is Policy.LATENCY_AWARE
        assert cfg.orchestrator.gate.mode is GateMode.LLM_WITH_RULE_FALLBACK
        assert cfg.orchestrator.gate.llm.model_name == "m1"
        assert cfg.orchestrator.metrics.hist_bins == 16
        assert cfg.orchestrator.retries == 1

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config keys"):
            AppConfig.from_dict({"data_dirr": "/tmp"})

    def test_bad_policy_rejected(self):
        with pytest.raises(ValueError):
            AppConfig.from_dict({"policy": "fastest"})


class TestAssembly:
    def test_build_orchestrator_spawns_fleet(self, tmp_path):
        cfg = AppConfig.from_dict({"local_workers": 2, "data_dir": str(tmp_path / "d")})
        orchestrator = build_orchestrator(cfg)
        try:
            assert len(orchestrator.registry) == 2
            assert orchestrator.store.data_dir is not None
        finally:
            orchestrator.close()

    def test_data_dir_override_wins(self, tmp_path):
        cfg = AppConfig.from_dict({"local_workers": 0, "data_dir": str(tmp_path / "a")})
        orchestrator = build_orchestrator(cfg, data_dir=str(tmp_path / "b"))
        try:
            assert orchestrator.store.data_dir == tmp_path / "b"
        finally:
            orchestrator.close()
