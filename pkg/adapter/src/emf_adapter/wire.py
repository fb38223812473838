"""Standalone implementation of the orchestrator wire format.

Deliberately shares no code with the orchestrator package: this module is
written against the published byte layout, so round-tripping frames between
the two codebases certifies the format itself.

Frame layout:
    4 bytes   header length N, unsigned big-endian
    N bytes   canonical JSON header (UTF-8, sorted keys, compact separators)
    rest      binary payload, length declared by header field payload_len

Header fields: type, payload_len, optional request_id; every other key is
message body. GENERATE/PROGRESS/RESULT/ERROR require a UUID request_id.
"""

from __future__ import annotations

import json
import uuid
from typing import BinaryIO, NamedTuple

MESSAGE_TYPES = frozenset(
    {"HELLO", "HELLO_ACK", "GENERATE", "PROGRESS", "RESULT", "ERROR", "HEARTBEAT"}
)
REQUEST_SCOPED = frozenset({"GENERATE", "PROGRESS", "RESULT", "ERROR"})
RESERVED_KEYS = frozenset({"type", "request_id", "payload_len"})
MAX_HEADER_LEN = 1024 * 1024


class WireError(Exception):
    pass


class Frame(NamedTuple):
    type: str
    body: dict
    request_id: str | None = None
    payload: bytes = b""


def _check(frame: Frame) -> None:
    if frame.type not in MESSAGE_TYPES:
        raise WireError(f"unknown message type {frame.type!r}")
    if RESERVED_KEYS & frame.body.keys():
        raise WireError(f"body must not contain reserved keys {sorted(RESERVED_KEYS)}")
    if frame.type in REQUEST_SCOPED:
        try:
            uuid.UUID(str(frame.request_id))
        except ValueError as exc:
            raise WireError(f"{frame.type} requires a UUID request_id") from exc


def encode_frame(frame: Frame) -> bytes:
    _check(frame)
    header: dict = {"type": frame.type, "payload_len": len(frame.payload)}
    if frame.request_id is not None:
        header["request_id"] = frame.request_id
    header.update(frame.body)
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    if len(raw) > MAX_HEADER_LEN:
        raise WireError(f"header length {len(raw)} exceeds {MAX_HEADER_LEN}")
    return len(raw).to_bytes(4, "big") + raw + frame.payload


def _parse_header(raw: bytes) -> tuple[str, dict, str | None, int]:
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WireError(f"header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise WireError("header must be a JSON object")
    mtype = header.get("type")
    if mtype not in MESSAGE_TYPES:
        raise WireError(f"unknown or missing message type {mtype!r}")
    payload_len = header.get("payload_len")
    if not isinstance(payload_len, int) or payload_len < 0:
        raise WireError(f"payload_len must be a non-negative integer, got {payload_len!r}")
    request_id = header.get("request_id")
    body = {k: v for k, v in header.items() if k not in RESERVED_KEYS}
    return mtype, body, request_id, payload_len


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            raise WireError(f"stream closed {remaining} bytes early")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(stream: BinaryIO) -> Frame | None:
    """One frame from a blocking stream; None on clean EOF at a boundary."""
    first = stream.read(4)
    if not first:
        return None
    if len(first) < 4:
        first += _read_exact(stream, 4 - len(first))
    header_len = int.from_bytes(first, "big")
    if header_len > MAX_HEADER_LEN:
        raise WireError(f"header length {header_len} exceeds {MAX_HEADER_LEN}")
    mtype, body, request_id, payload_len = _parse_header(_read_exact(stream, header_len))
    payload = _read_exact(stream, payload_len) if payload_len else b""
    return Frame(mtype, body, request_id, payload)


def write_frame(stream: BinaryIO, frame: Frame) -> None:
    stream.write(encode_frame(frame))
    stream.flush()
