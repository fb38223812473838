"""emf-adapter: run the reference adapter against an orchestrator.

Exit codes: 0 clean shutdown, 1 bad arguments, 2 handshake rejected.
"""

from __future__ import annotations

import argparse
import signal
import sys
import threading

from emf_adapter.adapter import Adapter, AdapterConfig, HandshakeRejected, TASK_KINDS


def _endpoint(value: str) -> tuple[str, int]:
    host, sep, port = value.rpartition(":")
    if not sep or not host:
        raise argparse.ArgumentTypeError(f"expected host:port, got {value!r}")
    return host, int(port)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emf-adapter",
        description="Register a procedural reference expert with an orchestrator.",
    )
    parser.add_argument("--endpoint", type=_endpoint, required=True, help="orchestrator host:port")
    parser.add_argument("--expert-id", required=True)
    parser.add_argument("--kinds", default=",".join(TASK_KINDS), help="comma-separated task kinds")
    parser.add_argument("--max-pixels", type=int, default=1920 * 1080)
    parser.add_argument("--heartbeat-ms", type=int, default=1000)
    parser.add_argument("--latency-ms", type=int, default=20)
    parser.add_argument("--bandwidth-bps", type=int, default=10_000_000)
    parser.add_argument("--drop", type=float, default=0.0)
    parser.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        host, port = args.endpoint
        config = AdapterConfig(
            host=host,
            port=port,
            expert_id=args.expert_id,
            task_kinds=tuple(k.strip() for k in args.kinds.split(",") if k.strip()),
            heartbeat_interval_ms=args.heartbeat_ms,
            max_pixels=args.max_pixels,
            link={
                "latency_ms": args.latency_ms,
                "bandwidth_bps": args.bandwidth_bps,
                "drop_probability": args.drop,
                "seed": args.seed,
            },
        )
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    adapter = Adapter(config)
    stop = threading.Event()

    def on_signal(signum, frame):
        adapter.stop()
        stop.set()

    signal.signal(signal.SIGINT, on_signal)
    signal.signal(signal.SIGTERM, on_signal)
    try:
        adapter.serve_forever()
    except HandshakeRejected as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
