"""Deterministic procedural expert.

Renders a hash-colored constant background and exactly ONE moving subject
rectangle: the first subject phrase of the sub-prompt. Later subjects are
deliberately neither rendered nor tracked, emulating the attention loss of a
single generator on multi-subject prompts. Adds seeded zero-mean noise of
amplitude 2 so the quality metrics stay off their degenerate values.
"""

from __future__ import annotations

import hashlib

import numpy as np

from emf.model import (
    DegeneratePrompt,
    GenerationParams,
    SubjectTrack,
    VideoClip,
    canonicalize_prompt,
    extract_subject,
)

# Channel values stay in [16+2, 240-2] after noise, so no pixel ever clips.
_CHANNEL_LO = 16
_CHANNEL_SPAN = 225  # values in [16, 240]


def _hash_bytes(text: str) -> bytes:
    return hashlib.sha256(text.encode("utf-8")).digest()


def _color_from(text: str) -> tuple[int, int, int]:
    h = _hash_bytes(text)
    return tuple(_CHANNEL_LO + b % _CHANNEL_SPAN for b in h[:3])


def mock_generate(sub_prompt: str, params: GenerationParams) -> VideoClip:
    canonical = canonicalize_prompt(sub_prompt)
    subject = extract_subject(canonical)
    if not subject:
        raise DegeneratePrompt(f"no subject phrase in {sub_prompt!r}")

    w, h, fc = params.width, params.height, params.frame_count
    side = max(1, min(w, h) // 4)
    bg_color = _color_from(canonical)
    subj_hash = _hash_bytes(subject)
    subj_color = _color_from(subject)
    # Hash-derived vertical placement keeps different subjects' boxes from
    # stacking at the same rows when clips are composited.
    y = subj_hash[3] % (h - side + 1)

    rng = np.random.default_rng(
        int.from_bytes(_hash_bytes(f"{canonical}|{params.seed}")[:8], "big")
    )
    frames: list[bytes] = []
    boxes: list[tuple[int, int, int, int]] = []
    for i in range(fc):
        # Left edge sweeps 0 → w-side linearly over the clip.
        x = round(i * (w - side) / (fc - 1))
        frame = np.empty((h, w, 3), dtype=np.int16)
        frame[:, :] = bg_color
        frame[y : y + side, x : x + side] = subj_color
        noise = rng.integers(-2, 3, size=(h, w, 3), dtype=np.int16)
        frame = np.clip(frame + noise, 0, 255).astype(np.uint8)
        frames.append(frame.tobytes())
        boxes.append((x, y, side, side))

    track = SubjectTrack(label=subject, boxes=tuple(boxes))
    return VideoClip(params=params, frames=tuple(frames), tracks=(track,))
