"""Standalone EMV1 clip writer and reference parser.

Independent of the orchestrator package for the same reason as wire.py: the
bytes this module emits must parse under the orchestrator's decoder, and the
orchestrator's bytes must parse here, or the published format is broken.

Layout:
    bytes 0..3   magic EMV1
    bytes 4..7   header length, unsigned big-endian
    next         canonical JSON header
    rest         frame_count * width * height * 3 bytes of RGB24 frames
"""

from __future__ import annotations

import json
from typing import Iterable, Sequence

MAGIC = b"EMV1"
HEADER_VERSION = 1
MAX_HEADER_LEN = 1024 * 1024

Box = tuple[int, int, int, int]
Track = tuple[str, Sequence[Box | None]]


class FrameContractError(Exception):
    """The model callable broke the declared frame contract."""


class BadVideo(Exception):
    """Blob violates the EMV1 layout."""


def check_params(params: dict) -> tuple[int, int, int, float, int]:
    """Validate a GENERATE params object; returns (w, h, fc, fps, seed)."""
    try:
        width = int(params["width"])
        height = int(params["height"])
        frame_count = int(params["frame_count"])
        fps = float(params["fps"])
        seed = int(params["seed"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FrameContractError(f"bad params: {exc}") from exc
    if width <= 0 or width % 2 or height <= 0 or height % 2:
        raise FrameContractError(f"dimensions must be positive and even, got {width}x{height}")
    if frame_count < 2:
        raise FrameContractError(f"frame_count must be >= 2, got {frame_count}")
    if fps <= 0:
        raise FrameContractError(f"fps must be > 0, got {fps}")
    if not 0 <= seed < 2**64:
        raise FrameContractError(f"seed must fit in 64 unsigned bits, got {seed}")
    return width, height, frame_count, fps, seed


def collect_frames(frames: Iterable[bytes], width: int, height: int, frame_count: int) -> list[bytes]:
    """Drain the model's frame iterator, enforcing the contract before any
    byte leaves the device: exactly frame_count frames, each width*height*3."""
    expected = width * height * 3
    out: list[bytes] = []
    for frame in frames:
        if len(out) == frame_count:
            raise FrameContractError(f"model yielded more than {frame_count} frames")
        if not isinstance(frame, (bytes, bytearray)):
            raise FrameContractError(f"frame {len(out)} is {type(frame).__name__}, not bytes")
        if len(frame) != expected:
            raise FrameContractError(
                f"frame {len(out)} is {len(frame)} bytes, contract says {expected}"
            )
        out.append(bytes(frame))
    if len(out) != frame_count:
        raise FrameContractError(f"model yielded {len(out)} frames, contract says {frame_count}")
    return out


def encode_video(
    width: int,
    height: int,
    frame_count: int,
    fps: float,
    seed: int,
    frames: Sequence[bytes],
    tracks: Sequence[Track] = (),
) -> bytes:
    header = {
        "version": HEADER_VERSION,
        "width": width,
        "height": height,
        "frame_count": frame_count,
        "fps": fps,
        "seed": seed,
        "tracks": [
            {"label": label, "boxes": [list(b) if b else None for b in boxes]}
            for label, boxes in tracks
        ],
        "provenance": [],
    }
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return b"".join([MAGIC, len(raw).to_bytes(4, "big"), raw, *frames])


def parse_video(blob: bytes) -> dict:
    """Reference parser: header fields plus the frame list, for conformance
    comparison against the orchestrator-side decoder."""
    if blob[:4] != MAGIC:
        raise BadVideo(f"bad magic {blob[:4]!r}")
    header_len = int.from_bytes(blob[4:8], "big")
    if header_len > MAX_HEADER_LEN:
        raise BadVideo(f"header length {header_len} exceeds {MAX_HEADER_LEN}")
    try:
        header = json.loads(blob[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadVideo(f"header is not valid JSON: {exc}") from exc
    if header.get("version") != HEADER_VERSION:
        raise BadVideo(f"unsupported version {header.get('version')!r}")
    width, height, frame_count = header["width"], header["height"], header["frame_count"]
    frame_bytes = width * height * 3
    payload = blob[8 + header_len :]
    if len(payload) != frame_bytes * frame_count:
        raise BadVideo(
            f"payload is {len(payload)} bytes, header declares {frame_bytes * frame_count}"
        )
    return {
        "width": width,
        "height": height,
        "frame_count": frame_count,
        "fps": header["fps"],
        "seed": header["seed"],
        "tracks": [
            (t["label"], [tuple(b) if b else None for b in t["boxes"]])
            for t in header.get("tracks", [])
        ],
        "provenance": [tuple(p) for p in header.get("provenance", [])],
        "frames": [payload[i * frame_bytes : (i + 1) * frame_bytes] for i in range(frame_count)],
    }
