"""Length-prefixed wire protocol between orchestrator and expert workers.

Frame layout: 4-byte big-endian unsigned header length, then a UTF-8 JSON
header, then an optional binary payload of exactly header["payload_len"]
bytes. The header always carries "type" and "payload_len"; GENERATE,
PROGRESS, RESULT and ERROR additionally require a UUID "request_id".
"""

from __future__ import annotations

import enum
import json
import uuid
from dataclasses import dataclass, field
from typing import BinaryIO

from emf.model import EmfError

MAX_HEADER_LEN = 1024 * 1024


class ProtocolViolation(EmfError):
    """Bytes on the wire violate the frame contract.

    ``offset`` is the byte position within the frame where decoding failed.
    """

    def __init__(self, offset: int, reason: str):
        super().__init__(f"protocol violation at byte {offset}: {reason}")
        self.offset = offset
        self.reason = reason


class MessageType(enum.Enum):
    HELLO = "HELLO"
    HELLO_ACK = "HELLO_ACK"
    GENERATE = "GENERATE"
    PROGRESS = "PROGRESS"
    RESULT = "RESULT"
    ERROR = "ERROR"
    HEARTBEAT = "HEARTBEAT"


# Types whose request_id must be present and UUID-shaped.
_REQUEST_SCOPED = {
    MessageType.GENERATE,
    MessageType.PROGRESS,
    MessageType.RESULT,
    MessageType.ERROR,
}
_RESERVED_KEYS = {"type", "request_id", "payload_len"}


def _is_uuid(value: object) -> bool:
    if not isinstance(value, str):
        return False
    try:
        uuid.UUID(value)
        return True
    except ValueError:
        return False


@dataclass(frozen=True)
class Message:
    type: MessageType
    body: dict = field(default_factory=dict)
    request_id: str | None = None
    payload: bytes = b""

    def __post_init__(self) -> None:
        if self.type in _REQUEST_SCOPED:
            if not _is_uuid(self.request_id):
                raise ValueError(
                    f"{self.type.value} requires a UUID request_id, got {self.request_id!r}"
                )
        if _RESERVED_KEYS & self.body.keys():
            raise ValueError(f"body must not contain reserved keys {_RESERVED_KEYS}")


def encode_message(m: Message) -> bytes:
    header: dict = {"type": m.type.value, "payload_len": len(m.payload)}
    if m.request_id is not None:
        header["request_id"] = m.request_id
    header.update(m.body)
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    if len(header_bytes) > MAX_HEADER_LEN:
        raise ProtocolViolation(4, f"header length {len(header_bytes)} exceeds {MAX_HEADER_LEN}")
    return len(header_bytes).to_bytes(4, "big") + header_bytes + m.payload


def _parse_header(raw: bytes) -> Message:
    """Validate a decoded header + payload pair into a Message."""
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolViolation(4, f"header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise ProtocolViolation(4, "header must be a JSON object")
    try:
        mtype = MessageType(header["type"])
    except (KeyError, ValueError) as exc:
        raise ProtocolViolation(4, f"unknown or missing message type: {exc}") from exc
    payload_len = header.get("payload_len")
    if not isinstance(payload_len, int) or payload_len < 0:
        raise ProtocolViolation(4, f"payload_len must be a non-negative integer, got {payload_len!r}")
    request_id = header.get("request_id")
    if mtype in _REQUEST_SCOPED and not _is_uuid(request_id):
        raise ProtocolViolation(4, f"{mtype.value} requires a UUID request_id, got {request_id!r}")
    body = {k: v for k, v in header.items() if k not in _RESERVED_KEYS}
    return Message(type=mtype, body=body, request_id=request_id)


def decode_message(blob: bytes) -> Message:
    if len(blob) < 4:
        raise ProtocolViolation(0, f"need 4 length bytes, have {len(blob)}")
    header_len = int.from_bytes(blob[:4], "big")
    if header_len > MAX_HEADER_LEN:
        raise ProtocolViolation(0, f"header length {header_len} exceeds {MAX_HEADER_LEN}")
    if len(blob) < 4 + header_len:
        raise ProtocolViolation(4, f"header truncated: declared {header_len}, have {len(blob) - 4}")
    skeleton = _parse_header(blob[4 : 4 + header_len])
    payload = blob[4 + header_len :]
    declared = json.loads(blob[4 : 4 + header_len])["payload_len"]
    if len(payload) != declared:
        raise ProtocolViolation(
            4 + header_len, f"payload is {len(payload)} bytes, header declares {declared}"
        )
    return Message(
        type=skeleton.type, body=skeleton.body, request_id=skeleton.request_id, payload=payload
    )


def write_message(stream: BinaryIO, m: Message) -> int:
    """Write one frame; returns bytes written."""
    blob = encode_message(m)
    stream.write(blob)
    stream.flush()
    return len(blob)


def _read_exact(stream: BinaryIO, n: int, at: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            raise ProtocolViolation(at + n - remaining, f"stream closed {remaining} bytes early")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(stream: BinaryIO) -> tuple[Message | None, int]:
    """Read one frame from a blocking stream; (None, 0) on clean EOF at a
    frame boundary. Returns the message and the total frame byte count."""
    first = stream.read(4)
    if not first:
        return None, 0
    if len(first) < 4:
        first += _read_exact(stream, 4 - len(first), len(first))
    header_len = int.from_bytes(first, "big")
    if header_len > MAX_HEADER_LEN:
        raise ProtocolViolation(0, f"header length {header_len} exceeds {MAX_HEADER_LEN}")
    header_raw = _read_exact(stream, header_len, 4)
    skeleton = _parse_header(header_raw)
    declared = json.loads(header_raw)["payload_len"]
    payload = _read_exact(stream, declared, 4 + header_len) if declared else b""
    message = Message(
        type=skeleton.type, body=skeleton.body, request_id=skeleton.request_id, payload=payload
    )
    return message, 4 + header_len + declared


def read_message(stream: BinaryIO) -> Message | None:
    message, _ = read_frame(stream)
    return message


def new_request_id() -> str:
    return str(uuid.uuid4())
