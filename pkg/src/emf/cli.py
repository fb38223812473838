"""Command-line surface.

Verbs: submit, status, fetch, experts, experiment, worker, eval, serve.
Job verbs talk to a running gateway (--server, default localhost); experiment,
worker, and eval run locally. Exit codes: 0 success, 1 user error, 2 server
error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import signal
import sys
import threading
import time
from pathlib import Path

import httpx

from emf.model import DEFAULT_PARAMS, GenerationParams, PromptSpec, TaskKind

DEFAULT_SERVER = "http://127.0.0.1:8080"

USER_ERROR = 1
SERVER_ERROR = 2


class UserError(Exception):
    pass


def _params_from_args(args) -> GenerationParams:
    return GenerationParams(
        width=args.width,
        height=args.height,
        frame_count=args.frames,
        fps=args.fps,
        seed=args.seed,
    )


def _subjects_from_arg(raw: str | None) -> tuple[str, ...] | None:
    if raw is None:
        return None
    subjects = tuple(s.strip().lower() for s in raw.split(",") if s.strip())
    return subjects or None


def _client(server: str) -> httpx.Client:
    return httpx.Client(base_url=server, timeout=30.0)


def _api_fail(response) -> int:
    try:
        body = response.json()
        message = f"{body.get('code', 'error')}: {body.get('message', '')}"
        if body.get("detail"):
            message += f" ({body['detail']})"
    except ValueError:
        message = response.text
    print(f"server returned {response.status_code}: {message}", file=sys.stderr)
    return SERVER_ERROR if response.status_code >= 500 else USER_ERROR


def cmd_submit(args) -> int:
    if not args.prompt.strip():
        raise UserError("prompt must be non-empty (positional PROMPT)")
    body = {
        "prompt": args.prompt,
        "params": _params_from_args(args).to_dict(),
        "subjects": list(_subjects_from_arg(args.subjects) or ()) or None,
        "policy": args.policy,
    }
    with _client(args.server) as client:
        response = client.post("/v1/jobs", json=body)
        if response.status_code != 202:
            return _api_fail(response)
        print(response.json()["job_id"])
    return 0


def cmd_status(args) -> int:
    with _client(args.server) as client:
        response = client.get(f"/v1/jobs/{args.job_id}")
        if response.status_code != 200:
            return _api_fail(response)
        json.dump(response.json(), sys.stdout, indent=2, sort_keys=True)
        print()
    return 0


def cmd_fetch(args) -> int:
    with _client(args.server) as client:
        deadline = time.monotonic() + args.wait
        while True:
            response = client.get(f"/v1/jobs/{args.job_id}/video")
            if response.status_code == 409 and time.monotonic() < deadline:
                time.sleep(0.1)
                continue
            break
        if response.status_code != 200:
            return _api_fail(response)
        Path(args.output).write_bytes(response.content)
        print(f"wrote {len(response.content)} bytes to {args.output}")
    return 0


def cmd_experts(args) -> int:
    with _client(args.server) as client:
        response = client.get("/v1/experts")
        if response.status_code != 200:
            return _api_fail(response)
        json.dump(response.json(), sys.stdout, indent=2, sort_keys=True)
        print()
    return 0


def _format_table(report: dict) -> str:
    keys = (
        "imaging_quality",
        "background_consistency",
        "subject_consistency",
        "overall_consistency",
        "average_quality",
    )
    lines = [
        f"mode={report['mode']} seed={report['seed']} trials={report['trials']}"
        f" corpus={report['corpus_size']} failures={report['failures']}"
    ]
    header = f"{'prompt':<44} " + " ".join(f"{k.split('_')[0][:7]:>8}" for k in keys)
    lines.append(header)
    for row in report["rows"]:
        label = (row["prompt"][:41] + "...") if len(row["prompt"]) > 44 else row["prompt"]
        if row["metrics"] is None:
            lines.append(f"{label:<44} FAILED: {row['failure_reason']}")
        else:
            cells = " ".join(f"{row['metrics'][k]:>8.4f}" for k in keys)
            lines.append(f"{label:<44} {cells}")
    if report["means"] is not None:
        cells = " ".join(f"{report['means'][k]:>8.4f}" for k in keys)
        lines.append(f"{'MEAN':<44} {cells}")
    return "\n".join(lines)


def cmd_experiment(args) -> int:
    from emf.corpus import default_corpus, load_corpus
    from emf.gateway import parse_mode
    from emf.orchestrator import (
        ExperimentSpec,
        Orchestrator,
        build_local_fleet,
        experiment_report_json,
    )

    try:
        mode = parse_mode(args.mode)
    except ValueError as exc:
        raise UserError(str(exc)) from None
    if args.corpus == "builtin":
        corpus = default_corpus()
    else:
        path = Path(args.corpus)
        if not path.exists():
            raise UserError(f"--corpus file not found: {path}")
        corpus = load_corpus(path)
        if not corpus:
            raise UserError(f"--corpus file {path} contains no prompts")
    orchestrator = Orchestrator()
    build_local_fleet(orchestrator, count=args.workers)
    try:
        spec = ExperimentSpec(corpus=corpus, mode=mode, trials=args.trials, seed=args.seed)
        report = orchestrator.run_experiment(spec, lanes=args.lanes)
    finally:
        orchestrator.close()
    print(_format_table(report))
    if args.out:
        Path(args.out).write_text(experiment_report_json(report), encoding="utf-8")
        print(f"report written to {args.out}")
    return 0


def cmd_worker(args) -> int:
    from emf.linksim import LinkParams
    from emf.worker import Worker, WorkerConfig

    try:
        host, _, port = args.listen.rpartition(":")
        config = WorkerConfig(
            expert_id=args.expert_id,
            task_kinds=tuple(TaskKind(k.strip()) for k in args.kinds.split(",") if k.strip()),
            max_pixels=args.max_pixels,
            link=LinkParams(
                latency_ms=args.latency_ms,
                bandwidth_bps=args.bandwidth_bps,
                drop_probability=args.drop,
                seed=args.seed,
            ),
            heartbeat_interval_ms=args.heartbeat_ms,
            time_scale=args.time_scale,
        )
    except ValueError as exc:
        raise UserError(str(exc)) from None
    worker = Worker(config)
    bound_host, bound_port = worker.listen(host or "127.0.0.1", int(port))
    print(f"worker {config.expert_id} listening on {bound_host}:{bound_port}", file=sys.stderr)
    stop = threading.Event()
    with contextlib.suppress(ValueError):  # signals only work in the main thread
        signal.signal(signal.SIGTERM, lambda *_: stop.set())
        signal.signal(signal.SIGINT, lambda *_: stop.set())
    try:
        stop.wait()
    finally:
        worker.stop()
    return 0


def cmd_eval(args) -> int:
    from emf.container import MalformedContainer, decode_clip
    from emf.metrics import evaluate

    path = Path(args.clip)
    if not path.exists():
        raise UserError(f"clip file not found: {path} (positional CLIP)")
    try:
        clip = decode_clip(path.read_bytes())
    except MalformedContainer as exc:
        raise UserError(f"not a valid clip container: {exc}") from None
    prompt = PromptSpec(
        text=args.prompt,
        params=clip.params,
        declared_subjects=_subjects_from_arg(args.subjects),
    )
    report = evaluate(clip, prompt)
    json.dump(report.to_dict(), sys.stdout, indent=2, sort_keys=True)
    print()
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from emf.config import AppConfig, build_orchestrator, load_config
    from emf.gateway import configure_logging, create_app

    try:
        cfg = load_config(args.config) if args.config else AppConfig()
    except (ValueError, OSError) as exc:
        raise UserError(f"--config: {exc}") from None
    data_dir = args.data_dir or os.environ.get("EMF_DATA_DIR") or None
    orchestrator = build_orchestrator(cfg, data_dir=data_dir)
    configure_logging()
    app = create_app(orchestrator, max_workers=cfg.orchestrator.max_concurrent_jobs)
    listen = args.listen or cfg.listen
    host, _, port = listen.rpartition(":")
    try:
        uvicorn.run(app, host=host or "127.0.0.1", port=int(port), log_level="warning")
    finally:
        orchestrator.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emf", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    def add_server(p):
        p.add_argument("--server", default=DEFAULT_SERVER, help="gateway base URL")

    p = sub.add_parser("submit", help="submit a generation job")
    p.add_argument("prompt")
    p.add_argument("--subjects", help="comma-separated scoring subjects")
    p.add_argument("--policy", choices=["round_robin", "least_loaded", "latency_aware"])
    p.add_argument("--width", type=int, default=DEFAULT_PARAMS.width)
    p.add_argument("--height", type=int, default=DEFAULT_PARAMS.height)
    p.add_argument("--frames", type=int, default=DEFAULT_PARAMS.frame_count)
    p.add_argument("--fps", type=float, default=DEFAULT_PARAMS.fps)
    p.add_argument("--seed", type=int, default=DEFAULT_PARAMS.seed)
    add_server(p)
    p.set_defaults(func=cmd_submit)

    p = sub.add_parser("status", help="show a job record")
    p.add_argument("job_id")
    add_server(p)
    p.set_defaults(func=cmd_status)

    p = sub.add_parser("fetch", help="download a finished clip")
    p.add_argument("job_id")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--wait", type=float, default=0.0, help="seconds to poll while not done")
    add_server(p)
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser("experts", help="list registered experts")
    add_server(p)
    p.set_defaults(func=cmd_experts)

    p = sub.add_parser("experiment", help="run a merge-strategy experiment locally")
    p.add_argument("--mode", required=True, choices=["correct", "mismatch", "single"])
    p.add_argument("--corpus", default="builtin", help="prompt file, or 'builtin'")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--lanes", type=int, default=1, help="concurrent jobs (1 = deterministic order)")
    p.add_argument("--workers", type=int, default=3, help="mock workers to spawn")
    p.add_argument("--out", help="write the canonical JSON report here")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("worker", help="run a TCP expert worker")
    p.add_argument("--listen", default="127.0.0.1:0", help="host:port")
    p.add_argument("--expert-id", required=True)
    p.add_argument("--kinds", default="atomic,temporal,spatial")
    p.add_argument("--max-pixels", type=int, default=1920 * 1080)
    p.add_argument("--latency-ms", type=int, default=20)
    p.add_argument("--bandwidth-bps", type=int, default=10_000_000)
    p.add_argument("--drop", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--heartbeat-ms", type=int, default=1000)
    p.add_argument("--time-scale", type=float, default=1.0)
    p.set_defaults(func=cmd_worker)

    p = sub.add_parser("eval", help="score a clip container against a prompt")
    p.add_argument("clip")
    p.add_argument("--prompt", required=True)
    p.add_argument("--subjects", help="comma-separated scoring subjects")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="run the HTTP gateway")
    p.add_argument("--listen", help="host:port (default from config)")
    p.add_argument("--config", help="JSON config file (docs/config.md)")
    p.add_argument("--data-dir", help="journal/clip directory (or env EMF_DATA_DIR)")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors; --help exits 0
        return 0 if exc.code == 0 else USER_ERROR
    try:
        return args.func(args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USER_ERROR
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USER_ERROR
    except httpx.HTTPError as exc:
        print(f"cannot reach server: {exc}", file=sys.stderr)
        return SERVER_ERROR


def worker_main(argv: list[str] | None = None) -> int:
    return main(["worker", *(argv if argv is not None else sys.argv[1:])])


def eval_main(argv: list[str] | None = None) -> int:
    return main(["eval", *(argv if argv is not None else sys.argv[1:])])


if __name__ == "__main__":
    sys.exit(main())
