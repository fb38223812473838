"""Orchestrator-side expert connections.

Each connection pairs a request/reply channel with a reader thread that
dispatches interleaved traffic: RESULT/ERROR complete the pending request,
HEARTBEAT updates the registry, PROGRESS updates the pending entry. Workers
serve one request at a time, so each connection serializes requests.
"""

from __future__ import annotations

import socket
import threading
from dataclasses import dataclass

from emf.container import decode_clip
from emf.linksim import LinkParams, transfer_time_ms
from emf.model import EmfError, GenerationParams, TaskKind, VideoClip
from emf.protocol import Message, MessageType, encode_message, new_request_id, read_frame
from emf.registry import (
    DuplicateExpert,
    ExpertDescriptor,
    Registry,
    UnknownExpert,
)


class ExpertTimeout(EmfError):
    pass


class ExpertError(EmfError):
    def __init__(self, code: str, detail: str):
        super().__init__(f"expert error {code}: {detail}")
        self.code = code
        self.detail = detail


class HandshakeFailed(EmfError):
    pass


@dataclass
class _Pending:
    done: threading.Event
    result: Message | None = None


class ExpertConnection:
    """One byte-stream connection to one expert."""

    def __init__(self, sock: socket.socket, expert_id: str, link: LinkParams, registry: Registry):
        self._sock = sock
        self._stream = sock.makefile("rwb")
        self.expert_id = expert_id
        self.link = link
        self._registry = registry
        self._write_lock = threading.Lock()
        self._request_lock = threading.Lock()
        self._pending: _Pending | None = None
        self._pending_lock = threading.Lock()
        self._closed = threading.Event()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        try:
            while not self._closed.is_set():
                message, nbytes = read_frame(self._stream)
                if message is None:
                    break
                if message.type is MessageType.HEARTBEAT:
                    try:
                        self._registry.heartbeat(self.expert_id)
                    except UnknownExpert:
                        pass  # expired while the frame was in flight
                elif message.type in (MessageType.RESULT, MessageType.ERROR):
                    with self._pending_lock:
                        pending = self._pending
                    if pending is not None:
                        pending.result = message
                        pending.done.set()
                # PROGRESS and unsolicited types carry no completion state
        except (OSError, ValueError, EmfError):
            pass
        finally:
            self._closed.set()
            with self._pending_lock:
                if self._pending is not None:
                    self._pending.done.set()

    def request(
        self, sub_prompt: str, params: GenerationParams, request_id: str | None = None, timeout: float = 30.0
    ) -> tuple[VideoClip, int]:
        """Dispatch one GENERATE; returns (clip, simulated elapsed_ms of the
        result transfer). Raises ExpertTimeout or ExpertError."""
        if self._closed.is_set():
            raise ExpertTimeout(f"connection to {self.expert_id} is closed")
        request_id = request_id or new_request_id()
        with self._request_lock:
            pending = _Pending(done=threading.Event())
            with self._pending_lock:
                self._pending = pending
            try:
                blob = encode_message(
                    Message(
                        MessageType.GENERATE,
                        {"sub_prompt": sub_prompt, "params": params.to_dict()},
                        request_id,
                    )
                )
                with self._write_lock:
                    self._stream.write(blob)
                    self._stream.flush()
                if not pending.done.wait(timeout):
                    raise ExpertTimeout(
                        f"expert {self.expert_id} gave no result within {timeout}s"
                    )
                reply = pending.result
                if reply is None:
                    raise ExpertTimeout(f"connection to {self.expert_id} dropped mid-request")
            finally:
                with self._pending_lock:
                    self._pending = None
        if reply.type is MessageType.ERROR:
            raise ExpertError(reply.body.get("code", "unknown"), reply.body.get("error", ""))
        if reply.request_id != request_id:
            raise ExpertError("request_mismatch", f"reply for {reply.request_id}")
        clip = decode_clip(reply.payload)
        # The worker's Delivered elapsed is the same deterministic formula
        # over the frame it sent; recompute instead of re-drawing RNG.
        elapsed = transfer_time_ms(len(encode_message(reply)), self.link)
        return clip, elapsed

    def close(self) -> None:
        self._closed.set()
        # Shut the socket down first so the reader thread wakes on EOF;
        # closing the buffered stream first would block on its read lock.
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()
        try:
            self._stream.close()
        except (OSError, ValueError):
            pass


def descriptor_from_capabilities(caps: dict) -> ExpertDescriptor:
    return ExpertDescriptor(
        expert_id=caps["expert_id"],
        task_kinds_served=frozenset(TaskKind(k) for k in caps["task_kinds"]),
        max_pixels=caps.get("max_pixels", 1920 * 1080),
        link=LinkParams.from_dict(caps["link"]),
        heartbeat_interval_ms=caps.get("heartbeat_interval_ms", 1000),
    )


class ExpertPool:
    """Connection table keyed by expert_id, kept in sync with the registry."""

    def __init__(self, registry: Registry):
        self.registry = registry
        self._lock = threading.Lock()
        self._conns: dict[str, ExpertConnection] = {}
        self._listener: socket.socket | None = None

    def _install(self, sock: socket.socket, caps: dict) -> ExpertConnection:
        descriptor = descriptor_from_capabilities(caps)
        with self._lock:
            try:
                self.registry.register(descriptor)
            except DuplicateExpert:
                # Replace a stale connection (adapter reconnect path).
                old = self._conns.pop(descriptor.expert_id, None)
                if old is not None:
                    old.close()
                self.registry.deregister(descriptor.expert_id)
                self.registry.register(descriptor)
            conn = ExpertConnection(sock, descriptor.expert_id, descriptor.link, self.registry)
            self._conns[descriptor.expert_id] = conn
            return conn

    def dial(self, sock: socket.socket, timeout: float = 10.0) -> ExpertConnection:
        """Orchestrator-initiated handshake over an already-open socket:
        HELLO → HELLO_ACK carrying the worker's capabilities."""
        stream = sock.makefile("rwb")
        stream.write(encode_message(Message(MessageType.HELLO, {"role": "orchestrator"})))
        stream.flush()
        sock.settimeout(timeout)
        try:
            ack, _ = read_frame(stream)
        except (OSError, ValueError) as exc:
            raise HandshakeFailed(f"no HELLO_ACK: {exc}") from exc
        sock.settimeout(None)
        if ack is None or ack.type is not MessageType.HELLO_ACK:
            raise HandshakeFailed(f"expected HELLO_ACK, got {ack and ack.type}")
        return self._install(sock, ack.body)

    def dial_tcp(self, host: str, port: int, timeout: float = 10.0) -> ExpertConnection:
        return self.dial(socket.create_connection((host, port), timeout=timeout), timeout)

    def listen(self, host: str = "127.0.0.1", port: int = 0) -> tuple[str, int]:
        """Accept worker-initiated registrations: peer sends HELLO carrying
        capabilities, orchestrator answers HELLO_ACK."""
        self._listener = socket.create_server((host, port))
        bound = self._listener.getsockname()[:2]
        threading.Thread(target=self._accept_loop, daemon=True).start()
        return bound

    def _accept_loop(self) -> None:
        assert self._listener is not None
        while True:
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            threading.Thread(target=self._accept_one, args=(conn,), daemon=True).start()

    def _accept_one(self, sock: socket.socket) -> None:
        stream = sock.makefile("rwb")
        try:
            sock.settimeout(10.0)
            hello, _ = read_frame(stream)
            if hello is None or hello.type is not MessageType.HELLO or "expert_id" not in hello.body:
                sock.close()
                return
            sock.settimeout(None)
            self._install(sock, hello.body)
            stream.write(encode_message(Message(MessageType.HELLO_ACK, {})))
            stream.flush()
        except (OSError, ValueError, KeyError):
            sock.close()

    def connection(self, expert_id: str) -> ExpertConnection:
        with self._lock:
            conn = self._conns.get(expert_id)
        if conn is None:
            raise UnknownExpert(expert_id)
        return conn

    def close(self) -> None:
        if self._listener is not None:
            self._listener.close()
        with self._lock:
            conns = list(self._conns.values())
            self._conns.clear()
        for conn in conns:
            conn.close()
