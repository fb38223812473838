"""Expert worker: serves the wire protocol over a byte-stream socket.

A worker answers HELLO with its capabilities, generates clips for GENERATE
requests (one at a time), heartbeats on an interval, and pushes every
outbound request-plane or heartbeat message through the link simulator.
Handshake frames (HELLO/HELLO_ACK) are exempt from drop simulation: a worker
that cannot register is indistinguishable from one that does not exist.
"""

from __future__ import annotations

import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Callable

from emf.container import encode_clip
from emf.linksim import (
    HEARTBEAT_STREAM_SALT,
    Delivered,
    Dropped,
    LinkParams,
    LinkSimulator,
)
from emf.mock_expert import mock_generate
from emf.model import EmfError, GenerationParams, TaskKind, VideoClip
from emf.protocol import Message, MessageType, encode_message, read_frame

Behavior = Callable[[str, GenerationParams], VideoClip]

ALL_KINDS = (TaskKind.ATOMIC, TaskKind.TEMPORAL, TaskKind.SPATIAL)


@dataclass(frozen=True)
class WorkerConfig:
    expert_id: str
    task_kinds: tuple[TaskKind, ...] = ALL_KINDS
    max_pixels: int = 1920 * 1080  # per-frame width*height ceiling
    link: LinkParams = field(default_factory=LinkParams)
    heartbeat_interval_ms: int = 1000
    time_scale: float = 1.0  # wall seconds slept per simulated second

    def __post_init__(self) -> None:
        if not self.expert_id:
            raise ValueError("expert_id must be non-empty")
        if not self.task_kinds:
            raise ValueError("task_kinds must be non-empty")
        if self.heartbeat_interval_ms <= 0:
            raise ValueError("heartbeat_interval_ms must be > 0")
        if self.time_scale < 0:
            raise ValueError("time_scale must be >= 0")

    def capabilities(self) -> dict:
        return {
            "expert_id": self.expert_id,
            "task_kinds": [k.value for k in self.task_kinds],
            "max_pixels": self.max_pixels,
            "link": self.link.to_dict(),
            "heartbeat_interval_ms": self.heartbeat_interval_ms,
        }


class Worker:
    """One expert process (in-process threads here; same bytes over TCP)."""

    def __init__(self, config: WorkerConfig, behavior: Behavior = mock_generate):
        self.config = config
        self.behavior = behavior
        self.invocations = 0  # GENERATE requests actually executed
        self._gen_lock = threading.Lock()  # one request in flight per worker
        self._count_lock = threading.Lock()
        self._stop = threading.Event()
        self._listener: socket.socket | None = None
        self._threads: list[threading.Thread] = []

    # -- sending ---------------------------------------------------------

    def _send(self, stream, write_lock: threading.Lock, sim: LinkSimulator | None, m: Message) -> None:
        blob = encode_message(m)
        if sim is not None:
            outcome = sim.simulate_transfer(len(blob))
            if isinstance(outcome, Dropped):
                return
            assert isinstance(outcome, Delivered)
            if self.config.time_scale > 0 and outcome.elapsed_ms > 0:
                time.sleep(outcome.elapsed_ms / 1000.0 * self.config.time_scale)
        with write_lock:
            stream.write(blob)
            stream.flush()

    # -- request handling --------------------------------------------------

    def _handle_generate(self, m: Message, send) -> None:
        try:
            params = GenerationParams.from_dict(m.body["params"])
            sub_prompt = m.body["sub_prompt"]
            if not isinstance(sub_prompt, str):
                raise ValueError("sub_prompt must be a string")
        except (KeyError, TypeError, ValueError) as exc:
            send(Message(MessageType.ERROR, {"code": "bad_params", "error": str(exc)}, m.request_id))
            return
        if params.width * params.height > self.config.max_pixels:
            send(
                Message(
                    MessageType.ERROR,
                    {"code": "over_resolution", "error": f"{params.width}x{params.height} exceeds ceiling"},
                    m.request_id,
                )
            )
            return
        with self._gen_lock:
            with self._count_lock:
                self.invocations += 1
            try:
                clip = self.behavior(sub_prompt, params)
            except EmfError as exc:
                send(
                    Message(
                        MessageType.ERROR,
                        {"code": "generation_failed", "error": str(exc)},
                        m.request_id,
                    )
                )
                return
        send(Message(MessageType.PROGRESS, {"progress": 1.0}, m.request_id))
        send(Message(MessageType.RESULT, {}, m.request_id, payload=encode_clip(clip)))

    def _heartbeat_loop(self, stream, write_lock, sim: LinkSimulator, alive: threading.Event) -> None:
        interval_s = self.config.heartbeat_interval_ms / 1000.0
        while not self._stop.is_set() and alive.is_set():
            if self._stop.wait(interval_s):
                break
            if not alive.is_set():
                break
            try:
                self._send(
                    stream,
                    write_lock,
                    sim,
                    Message(MessageType.HEARTBEAT, {"expert_id": self.config.expert_id}),
                )
            except (OSError, ValueError):
                break

    # -- connection loop ---------------------------------------------------

    def serve_connection(self, conn: socket.socket) -> None:
        """Blocking serve loop for one orchestrator connection."""
        stream = conn.makefile("rwb")
        write_lock = threading.Lock()
        request_sim = LinkSimulator(self.config.link)
        heartbeat_sim = LinkSimulator(self.config.link, stream_salt=HEARTBEAT_STREAM_SALT)
        alive = threading.Event()
        alive.set()
        hb_thread: threading.Thread | None = None
        send = lambda m: self._send(stream, write_lock, request_sim, m)
        try:
            while not self._stop.is_set():
                message, _ = read_frame(stream)
                if message is None:
                    break
                if message.type is MessageType.HELLO:
                    # Handshake bypasses the simulator (registration must land).
                    self._send(
                        stream,
                        write_lock,
                        None,
                        Message(MessageType.HELLO_ACK, self.config.capabilities()),
                    )
                    if hb_thread is None:
                        hb_thread = threading.Thread(
                            target=self._heartbeat_loop,
                            args=(stream, write_lock, heartbeat_sim, alive),
                            daemon=True,
                        )
                        hb_thread.start()
                elif message.type is MessageType.GENERATE:
                    self._handle_generate(message, send)
                elif message.type is MessageType.HEARTBEAT:
                    pass  # peer liveness probes need no reply
                else:
                    send_id = message.request_id
                    if send_id:
                        send(
                            Message(
                                MessageType.ERROR,
                                {"code": "unexpected_type", "error": message.type.value},
                                send_id,
                            )
                        )
        except (OSError, ValueError):
            pass  # connection torn down mid-frame
        finally:
            alive.clear()
            try:
                stream.close()
            except OSError:
                pass
            conn.close()

    # -- transports ----------------------------------------------------------

    def connect_in_process(self) -> socket.socket:
        """Loopback transport: returns the orchestrator-side socket of a pair
        whose other end this worker serves on a daemon thread. Framing is
        byte-identical to the TCP path."""
        ours, theirs = socket.socketpair()
        t = threading.Thread(target=self.serve_connection, args=(ours,), daemon=True)
        t.start()
        self._threads.append(t)
        return theirs

    def listen(self, host: str = "127.0.0.1", port: int = 0) -> tuple[str, int]:
        """TCP listener; returns the bound (host, port)."""
        self._listener = socket.create_server((host, port))
        bound = self._listener.getsockname()[:2]
        t = threading.Thread(target=self._accept_loop, daemon=True)
        t.start()
        self._threads.append(t)
        return bound

    def _accept_loop(self) -> None:
        assert self._listener is not None
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except OSError:
                break
            t = threading.Thread(target=self.serve_connection, args=(conn,), daemon=True)
            t.start()
            self._threads.append(t)

    def stop(self) -> None:
        self._stop.set()
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
