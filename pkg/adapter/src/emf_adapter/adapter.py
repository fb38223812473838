"""Expert adapter: registers a text-to-video callable with an orchestrator.

The adapter dials the orchestrator's expert listener, introduces itself with
a HELLO carrying its capabilities, then serves GENERATE requests until
stopped. Steady-state traffic (GENERATE in; PROGRESS, RESULT, ERROR,
HEARTBEAT out) is byte-compatible with the orchestrator's own workers, so
the far side cannot tell an adapter-wrapped model from a built-in expert.

The model callable is never trusted: params and every produced frame are
validated locally, and a broken contract becomes an ERROR reply instead of a
malformed container on the wire.
"""

from __future__ import annotations

import hashlib
import socket
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from emf_adapter.video import (
    FrameContractError,
    Track,
    check_params,
    collect_frames,
    encode_video,
)
from emf_adapter.wire import Frame, WireError, read_frame, write_frame

#: (sub_prompt, params dict) -> (frame iterable, optional track list).
GenerateFn = Callable[[str, dict], tuple[Iterable[bytes], Sequence[Track] | None]]

TASK_KINDS = ("atomic", "temporal", "spatial")

_FILLERS = frozenset({"a", "an", "the", "video", "clip", "footage", "of"})


def subject_phrase(sub_prompt: str) -> str:
    """Label heuristic matching what the orchestrator's metrics look for:
    the leading noun phrase, cut before the first verb-ish -ing token."""
    tokens = [t for t in sub_prompt.lower().split() if t not in _FILLERS]
    kept: list[str] = []
    for i, tok in enumerate(tokens):
        if i > 0 and tok.endswith("ing") and len(tok) > 3:
            break
        kept.append(tok)
    return " ".join(kept) or sub_prompt.strip().lower()


def reference_generate(sub_prompt: str, params: dict) -> tuple[list[bytes], list[Track]]:
    """Weightless stand-in for a real model: deterministic flat background
    with one subject box sweeping left to right, tracked by label."""
    width, height, frame_count = params["width"], params["height"], params["frame_count"]
    digest = hashlib.sha256(sub_prompt.strip().lower().encode("utf-8")).digest()
    bg = digest[0:3]
    fg = bytes(255 - b for b in digest[3:6])
    box_w, box_h = max(2, width // 4), max(2, height // 3)
    frames: list[bytes] = []
    boxes: list[tuple[int, int, int, int]] = []
    for i in range(frame_count):
        x = (i * (width - box_w)) // max(1, frame_count - 1)
        y = (height - box_h) // 2
        frame = bytearray(bg * (width * height))
        for row in range(y, y + box_h):
            start = (row * width + x) * 3
            frame[start : start + box_w * 3] = fg * box_w
        frames.append(bytes(frame))
        boxes.append((x, y, box_w, box_h))
    return frames, [(subject_phrase(sub_prompt), boxes)]


@dataclass(frozen=True)
class AdapterConfig:
    host: str
    port: int
    expert_id: str
    task_kinds: tuple[str, ...] = TASK_KINDS
    generate_fn: GenerateFn = reference_generate
    heartbeat_interval_ms: int = 1000
    max_pixels: int = 1920 * 1080
    # Advertised link characteristics; the orchestrator prices transfers
    # with these, the adapter itself never simulates delay.
    link: dict = field(
        default_factory=lambda: {
            "latency_ms": 20,
            "bandwidth_bps": 10_000_000,
            "drop_probability": 0.0,
            "seed": 0,
        }
    )
    reconnect_initial_s: float = 0.2
    reconnect_cap_s: float = 5.0

    def __post_init__(self) -> None:
        if not self.expert_id:
            raise ValueError("expert_id must be non-empty")
        if not self.task_kinds:
            raise ValueError("task_kinds must be non-empty")
        unknown = set(self.task_kinds) - set(TASK_KINDS)
        if unknown:
            raise ValueError(f"unknown task kinds {sorted(unknown)}")
        if self.heartbeat_interval_ms <= 0:
            raise ValueError("heartbeat_interval_ms must be > 0")

    def capabilities(self) -> dict:
        return {
            "expert_id": self.expert_id,
            "task_kinds": list(self.task_kinds),
            "max_pixels": self.max_pixels,
            "link": dict(self.link),
            "heartbeat_interval_ms": self.heartbeat_interval_ms,
        }


class HandshakeRejected(Exception):
    pass


class Adapter:
    """Serving loop around one model callable. One request in flight at a
    time; heartbeats ride their own timer thread."""

    def __init__(self, config: AdapterConfig):
        self.config = config
        self.served = 0  # completed GENERATE requests, across reconnects
        self._stop = threading.Event()
        self._sock: socket.socket | None = None
        self._sock_lock = threading.Lock()

    # -- connection lifecycle ---------------------------------------------

    def _handshake(self):
        sock = socket.create_connection((self.config.host, self.config.port), timeout=10)
        # One buffered stream for the connection's whole life: a second
        # makefile would miss bytes this one over-read past the ack.
        stream = sock.makefile("rwb")
        write_frame(stream, Frame("HELLO", self.config.capabilities()))
        ack = read_frame(stream)
        if ack is None:
            # Peer hung up before answering: transport loss, retryable.
            sock.close()
            raise OSError("connection closed before HELLO_ACK")
        if ack.type != "HELLO_ACK":
            sock.close()
            raise HandshakeRejected(f"expected HELLO_ACK, got {ack.type}")
        sock.settimeout(None)
        return sock, stream

    def serve_forever(self) -> None:
        """Connect, serve, and reconnect with exponential backoff until
        stop(). A rejected handshake raises; transport loss does not."""
        backoff = self.config.reconnect_initial_s
        while not self._stop.is_set():
            try:
                sock, stream = self._handshake()
            except (OSError, WireError):
                if self._stop.wait(backoff):
                    return
                backoff = min(backoff * 2, self.config.reconnect_cap_s)
                continue
            backoff = self.config.reconnect_initial_s
            with self._sock_lock:
                self._sock = sock
            try:
                self._serve_connection(stream)
            finally:
                with self._sock_lock:
                    self._sock = None
                sock.close()

    def stop(self) -> None:
        self._stop.set()
        with self._sock_lock:
            sock = self._sock
        if sock is not None:
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass

    # -- request handling ---------------------------------------------------

    def _serve_connection(self, stream) -> None:
        write_lock = threading.Lock()
        alive = threading.Event()
        alive.set()

        def send(frame: Frame) -> None:
            with write_lock:
                write_frame(stream, frame)

        heartbeat = threading.Thread(
            target=self._heartbeat_loop, args=(send, alive), daemon=True
        )
        heartbeat.start()
        try:
            while not self._stop.is_set():
                frame = read_frame(stream)
                if frame is None:
                    break
                if frame.type == "GENERATE":
                    self._handle_generate(frame, send)
                elif frame.type in ("HELLO", "HEARTBEAT"):
                    pass  # liveness probes need no reply
                elif frame.request_id:
                    send(Frame("ERROR", {"code": "unexpected_type", "error": frame.type}, frame.request_id))
        except (OSError, ValueError, WireError):
            pass  # transport loss; serve_forever reconnects
        finally:
            alive.clear()

    def _handle_generate(self, frame: Frame, send: Callable[[Frame], None]) -> None:
        request_id = frame.request_id
        try:
            params = frame.body["params"]
            sub_prompt = frame.body["sub_prompt"]
            if not isinstance(sub_prompt, str) or not isinstance(params, dict):
                raise FrameContractError("sub_prompt must be a string and params an object")
            width, height, frame_count, fps, seed = check_params(params)
        except (KeyError, FrameContractError) as exc:
            send(Frame("ERROR", {"code": "bad_params", "error": str(exc)}, request_id))
            return
        if width * height > self.config.max_pixels:
            send(
                Frame(
                    "ERROR",
                    {"code": "over_resolution", "error": f"{width}x{height} exceeds ceiling"},
                    request_id,
                )
            )
            return
        try:
            produced, tracks = self.config.generate_fn(sub_prompt, dict(params))
            frames = collect_frames(produced, width, height, frame_count)
            blob = encode_video(width, height, frame_count, fps, seed, frames, tracks or ())
        except Exception as exc:  # model code is third-party; keep serving
            send(Frame("ERROR", {"code": "generation_failed", "error": str(exc)}, request_id))
            return
        send(Frame("PROGRESS", {"progress": 1.0}, request_id))
        send(Frame("RESULT", {}, request_id, payload=blob))
        self.served += 1

    def _heartbeat_loop(self, send: Callable[[Frame], None], alive: threading.Event) -> None:
        interval_s = self.config.heartbeat_interval_ms / 1000.0
        while alive.is_set() and not self._stop.is_set():
            if self._stop.wait(interval_s) or not alive.is_set():
                break
            try:
                send(Frame("HEARTBEAT", {"expert_id": self.config.expert_id}))
            except (OSError, ValueError):
                break


def serve(config: AdapterConfig) -> Adapter:
    """Start an adapter on a background thread; returns the running instance
    (call .stop() to shut down)."""
    adapter = Adapter(config)
    thread = threading.Thread(target=adapter.serve_forever, daemon=True)
    thread.start()
    return adapter
