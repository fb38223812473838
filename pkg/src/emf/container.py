"""EMV1 clip container: canonical JSON header + raw RGB24 payload.

Layout:
    bytes 0..3   magic ``EMV1`` (45 4D 56 31)
    bytes 4..7   header length N, unsigned big-endian
    bytes 8..8+N canonical JSON header (UTF-8, sorted keys, compact separators)
    rest         frame_count * width * height * 3 bytes of RGB24 frames

The header is canonical so that encoding is byte-deterministic and the blob
can be content-addressed.
"""

from __future__ import annotations

import json

from emf.model import EmfError, GenerationParams, SubjectTrack, VideoClip

MAGIC = b"EMV1"
HEADER_VERSION = 1
# Sanity bound on the JSON header; the frame payload has its own ceiling.
MAX_HEADER_LEN = 1024 * 1024


class MalformedContainer(EmfError):
    """Container blob violates the EMV1 layout.

    ``offset`` is the byte position where decoding failed.
    """

    def __init__(self, offset: int, reason: str):
        super().__init__(f"malformed container at byte {offset}: {reason}")
        self.offset = offset
        self.reason = reason


def encode_clip(clip: VideoClip) -> bytes:
    header = {
        "version": HEADER_VERSION,
        "width": clip.params.width,
        "height": clip.params.height,
        "frame_count": clip.params.frame_count,
        "fps": clip.params.fps,
        "seed": clip.params.seed,
        "tracks": [t.to_dict() for t in clip.tracks],
        "provenance": [list(p) for p in clip.provenance],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, len(header_bytes).to_bytes(4, "big"), header_bytes]
    parts.extend(clip.frames)
    return b"".join(parts)


def decode_clip(blob: bytes) -> VideoClip:
    if len(blob) < 4:
        raise MalformedContainer(0, f"need 4 magic bytes, have {len(blob)}")
    if blob[:4] != MAGIC:
        raise MalformedContainer(0, f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < 8:
        raise MalformedContainer(4, f"need 4 header-length bytes, have {len(blob) - 4}")
    header_len = int.from_bytes(blob[4:8], "big")
    if header_len > MAX_HEADER_LEN:
        raise MalformedContainer(4, f"header length {header_len} exceeds {MAX_HEADER_LEN}")
    if len(blob) < 8 + header_len:
        raise MalformedContainer(
            8, f"header truncated: declared {header_len}, have {len(blob) - 8}"
        )
    try:
        header = json.loads(blob[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedContainer(8, f"header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise MalformedContainer(8, "header must be a JSON object")

    payload_start = 8 + header_len
    try:
        version = header["version"]
        params = GenerationParams(
            width=header["width"],
            height=header["height"],
            frame_count=header["frame_count"],
            fps=float(header["fps"]),
            seed=header["seed"],
        )
        tracks = tuple(SubjectTrack.from_dict(t) for t in header.get("tracks", []))
        provenance = tuple(tuple(p) for p in header.get("provenance", []))
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedContainer(8, f"invalid header fields: {exc}") from exc
    if version != HEADER_VERSION:
        raise MalformedContainer(8, f"unsupported container version {version}")

    payload = blob[payload_start:]
    expected = params.payload_bytes
    if len(payload) != expected:
        raise MalformedContainer(
            payload_start,
            f"payload is {len(payload)} bytes, header declares {expected}",
        )
    fb = params.frame_bytes
    frames = tuple(payload[i * fb : (i + 1) * fb] for i in range(params.frame_count))
    try:
        return VideoClip(params=params, frames=frames, tracks=tracks, provenance=provenance)
    except ValueError as exc:
        raise MalformedContainer(8, f"inconsistent header metadata: {exc}") from exc
