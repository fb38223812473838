"""Clip synthesis: temporal concatenation and spatial keying composition,
with resolution/fps harmonization and provenance propagation.

Conventions fixed here (callers rely on them):
  - nearest-neighbor scaling maps output pixel (X, Y) to source pixel
    (floor(X*sw/tw), floor(Y*sh/th)); box coordinates round half-up;
  - fps resampling maps output frame i to source frame floor(i*src/target);
  - spatial length mismatch trims to the shortest input;
  - same-label tracks are merged, the later input winning frame conflicts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from emf.model import (
    Anchor,
    Box,
    EmfError,
    GenerationParams,
    SubTask,
    SubjectTrack,
    TaskKind,
    VideoClip,
)

# Chroma key fallback for clips without tracks: pixels within this per-channel
# Chebyshev distance of pure green are background.
KEY_COLOR = (0, 255, 0)
KEY_TOLERANCE = 32


class EmptyClip(EmfError):
    pass


class SlotGap(EmfError):
    pass


class NoBaseLayer(EmfError):
    pass


@dataclass(frozen=True)
class MergePlan:
    strategy: TaskKind
    inputs: tuple[tuple[SubTask, VideoClip], ...]
    crossfade_frames: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "inputs", tuple(tuple(pair) for pair in self.inputs))
        if not self.inputs:
            raise EmptyClip("merge plan has no inputs")
        if self.crossfade_frames < 0:
            raise ValueError("crossfade_frames must be >= 0")


def _to_array(clip: VideoClip) -> np.ndarray:
    return np.frombuffer(b"".join(clip.frames), dtype=np.uint8).reshape(
        clip.params.frame_count, clip.params.height, clip.params.width, 3
    )


def _to_frames(arr: np.ndarray) -> tuple[bytes, ...]:
    return tuple(arr[i].tobytes() for i in range(arr.shape[0]))


def _round_half_up(v: float) -> int:
    return int(np.floor(v + 0.5))


def _scale_box(box: Box, sw: int, sh: int, tw: int, th: int) -> Box:
    x, y, w, h = box
    fx, fy = tw / sw, th / sh
    nx = min(_round_half_up(x * fx), tw - 1)
    ny = min(_round_half_up(y * fy), th - 1)
    nw = max(1, min(_round_half_up(w * fx), tw - nx))
    nh = max(1, min(_round_half_up(h * fy), th - ny))
    return (nx, ny, nw, nh)


def harmonize_clip(clip: VideoClip, target: GenerationParams) -> VideoClip:
    """Rescale to target width/height (nearest neighbor) and resample to
    target fps (nearest frame). Identity when already conformant."""
    sw, sh = clip.params.width, clip.params.height
    tw, th = target.width, target.height
    if (sw, sh) == (tw, th) and clip.params.fps == target.fps:
        return clip

    frame_map = list(range(clip.params.frame_count))
    out_fc = clip.params.frame_count
    if clip.params.fps != target.fps:
        out_fc = max(1, _round_half_up(clip.params.frame_count * target.fps / clip.params.fps))
        frame_map = [int(i * clip.params.fps // target.fps) for i in range(out_fc)]

    arr = _to_array(clip)[frame_map]
    if (sw, sh) != (tw, th):
        ys = (np.arange(th) * sh) // th
        xs = (np.arange(tw) * sw) // tw
        arr = arr[:, ys][:, :, xs]

    tracks = []
    for t in clip.tracks:
        boxes = [t.boxes[src] for src in frame_map]
        if (sw, sh) != (tw, th):
            boxes = [None if b is None else _scale_box(b, sw, sh, tw, th) for b in boxes]
        tracks.append(SubjectTrack(t.label, tuple(boxes)))

    params = GenerationParams(
        width=tw, height=th, frame_count=out_fc, fps=target.fps, seed=clip.params.seed
    )
    return VideoClip(
        params=params, frames=_to_frames(arr), tracks=tuple(tracks), provenance=clip.provenance
    )


def harmonize(clips: list[VideoClip], target: GenerationParams) -> list[VideoClip]:
    if not clips:
        raise EmptyClip("nothing to harmonize")
    return [harmonize_clip(c, target) for c in clips]


def _merge_tracks_by_label(track_lists: list[tuple[SubjectTrack, ...]], frame_count: int) -> tuple[SubjectTrack, ...]:
    """One output track per label; later lists overwrite earlier ones at
    frames where both carry a box."""
    order: list[str] = []
    boxes_by_label: dict[str, list[Box | None]] = {}
    for tracks in track_lists:
        for t in tracks:
            if t.label not in boxes_by_label:
                order.append(t.label)
                boxes_by_label[t.label] = [None] * frame_count
            slot = boxes_by_label[t.label]
            for i, b in enumerate(t.boxes):
                if b is not None and i < frame_count:
                    slot[i] = b
    return tuple(SubjectTrack(label, tuple(boxes_by_label[label])) for label in order)


def _dedup_provenance(chains) -> tuple[tuple[str, str], ...]:
    seen = []
    for chain in chains:
        for entry in chain:
            if entry not in seen:
                seen.append(entry)
    return tuple(seen)


def _offset_track(track: SubjectTrack, offset: int, total: int) -> SubjectTrack:
    boxes: list[Box | None] = [None] * total
    for i, b in enumerate(track.boxes):
        pos = offset + i
        if 0 <= pos < total:
            boxes[pos] = b
    return SubjectTrack(track.label, tuple(boxes))


def merge_temporal(plan: MergePlan) -> VideoClip:
    if plan.strategy is not TaskKind.TEMPORAL:
        raise ValueError(f"merge_temporal got strategy {plan.strategy.value}")
    indices = [task.time_index for task, _ in plan.inputs]
    if any(i is None for i in indices) or sorted(indices) != list(range(len(indices))):
        raise SlotGap(f"time indices must be contiguous 0..n-1, got {indices}")
    ordered = sorted(plan.inputs, key=lambda pair: pair[0].time_index)
    clips = [clip for _, clip in ordered]
    target = clips[0].params
    clips = harmonize(clips, target)

    c = plan.crossfade_frames
    if c > 0 and any(clip.params.frame_count <= c for clip in clips):
        raise EmptyClip(f"crossfade {c} consumes an entire input")

    total = sum(clip.params.frame_count for clip in clips) - (len(clips) - 1) * c
    h, w = target.height, target.width
    out = np.zeros((total, h, w, 3), dtype=np.uint8)
    offsets: list[int] = []
    cursor = 0
    for idx, clip in enumerate(clips):
        arr = _to_array(clip)
        fc = clip.params.frame_count
        offsets.append(cursor)
        if idx == 0:
            out[:fc] = arr
        else:
            # Blend the overlap linearly: position k of c gets weight k/(c+1)
            # toward the incoming clip.
            for k in range(c):
                alpha = (k + 1) / (c + 1)
                blended = (1 - alpha) * out[cursor + k].astype(np.float64) + alpha * arr[k].astype(
                    np.float64
                )
                out[cursor + k] = np.floor(blended + 0.5).astype(np.uint8)
            out[cursor + c : cursor + fc] = arr[c:]
        cursor += fc - c

    track_lists = [
        tuple(_offset_track(t, offsets[i], total) for t in clip.tracks)
        for i, clip in enumerate(clips)
    ]
    params = GenerationParams(
        width=w, height=h, frame_count=total, fps=target.fps, seed=target.seed
    )
    return VideoClip(
        params=params,
        frames=_to_frames(out),
        tracks=_merge_tracks_by_label(track_lists, total),
        provenance=_dedup_provenance([clip.provenance for clip in clips]),
    )


def _anchor_rect(anchor: Anchor, w: int, h: int) -> Box:
    half_w, half_h = w // 2, h // 2
    return {
        Anchor.FULL: (0, 0, w, h),
        Anchor.LEFT_HALF: (0, 0, half_w, h),
        Anchor.RIGHT_HALF: (half_w, 0, half_w, h),
        Anchor.TOP_HALF: (0, 0, w, half_h),
        Anchor.BOTTOM_HALF: (0, half_h, w, half_h),
    }[anchor]


def _chroma_mask(frame_pixels: np.ndarray) -> np.ndarray:
    """Foreground = pixels farther than the tolerance from the key color in
    per-channel Chebyshev distance."""
    diff = np.abs(frame_pixels.astype(np.int16) - np.array(KEY_COLOR, dtype=np.int16))
    return diff.max(axis=2) > KEY_TOLERANCE


def _paste_layer(
    out: np.ndarray,
    frame: int,
    layer_arr: np.ndarray,
    rect: Box,
    fg_boxes: list[Box] | None,
) -> None:
    """Composite one layer frame into the anchor rect of the output frame.

    With declared boxes (`fg_boxes`, already in output coordinates) the paste
    region IS those boxes, so metrics reading the transformed tracks see
    exactly the pasted pixels. Without boxes the chroma mask decides.
    """
    ax, ay, aw, ah = rect
    lh, lw = layer_arr.shape[1:3]
    ys = (np.arange(ah) * lh) // ah
    xs = (np.arange(aw) * lw) // aw
    scaled = layer_arr[frame][ys][:, xs]
    region = out[frame, ay : ay + ah, ax : ax + aw]
    if fg_boxes is None:
        scaled_mask = _chroma_mask(layer_arr[frame])[ys][:, xs]
        region[scaled_mask] = scaled[scaled_mask]
        return
    for bx, by, bw, bh in fg_boxes:
        rx, ry = bx - ax, by - ay
        region[ry : ry + bh, rx : rx + bw] = scaled[ry : ry + bh, rx : rx + bw]


def _transform_layer_box(box: Box, lw: int, lh: int, rect: Box) -> Box:
    ax, ay, aw, ah = rect
    x, y, w, h = box
    fx, fy = aw / lw, ah / lh
    nx = ax + min(_round_half_up(x * fx), aw - 1)
    ny = ay + min(_round_half_up(y * fy), ah - 1)
    nw = max(1, min(_round_half_up(w * fx), ax + aw - nx))
    nh = max(1, min(_round_half_up(h * fy), ay + ah - ny))
    return (nx, ny, nw, nh)


def merge_spatial(plan: MergePlan) -> VideoClip:
    if plan.strategy is not TaskKind.SPATIAL:
        raise ValueError(f"merge_spatial got strategy {plan.strategy.value}")
    layers = []
    for task, clip in plan.inputs:
        if task.layer is None:
            raise NoBaseLayer("spatial merge requires layer slots on every input")
        layers.append((task.layer, clip))
    zs = [layer.z_index for layer, _ in layers]
    if len(set(zs)) != len(zs):
        raise NoBaseLayer(f"z indices must be distinct, got {zs}")
    base = [(layer, clip) for layer, clip in layers if layer.z_index == 0]
    if len(base) != 1 or base[0][0].anchor is not Anchor.FULL:
        raise NoBaseLayer("exactly one z=0 layer with full anchor required")

    target = base[0][1].params
    layers = sorted(
        ((layer, harmonize_clip(clip, target)) for layer, clip in layers),
        key=lambda pair: pair[0].z_index,
    )
    out_fc = min(clip.params.frame_count for _, clip in layers)
    w, h = target.width, target.height

    base_clip = layers[0][1]
    out = _to_array(base_clip)[:out_fc].copy()
    track_lists: list[tuple[SubjectTrack, ...]] = [base_clip.tracks]

    for layer, clip in layers[1:]:
        rect = _anchor_rect(layer.anchor, w, h)
        arr = _to_array(clip)
        lw, lh = clip.params.width, clip.params.height
        transformed = tuple(
            SubjectTrack(
                t.label,
                tuple(
                    None if (i >= out_fc or t.boxes[i] is None)
                    else _transform_layer_box(t.boxes[i], lw, lh, rect)
                    for i in range(out_fc)
                ),
            )
            for t in clip.tracks
        )
        for frame in range(out_fc):
            if clip.tracks:
                fg_boxes = [t.boxes[frame] for t in transformed if t.boxes[frame] is not None]
            else:
                fg_boxes = None
            _paste_layer(out, frame, arr, rect, fg_boxes)
        track_lists.append(transformed)

    params = GenerationParams(
        width=w, height=h, frame_count=out_fc, fps=target.fps, seed=target.seed
    )
    return VideoClip(
        params=params,
        frames=_to_frames(out),
        tracks=_merge_tracks_by_label(track_lists, out_fc),
        provenance=_dedup_provenance([clip.provenance for _, clip in layers]),
    )


def merge(plan: MergePlan) -> VideoClip:
    """Dispatch on strategy; Atomic passes the single input through."""
    if plan.strategy is TaskKind.ATOMIC:
        if len(plan.inputs) != 1:
            raise ValueError("atomic merge takes exactly one input")
        return plan.inputs[0][1]
    if plan.strategy is TaskKind.TEMPORAL:
        return merge_temporal(plan)
    return merge_spatial(plan)
