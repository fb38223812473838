"""Core domain types: prompts, generation parameters, plans, clips, reports."""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field

# Raw frame payload ceiling for a single clip (width * height * frame_count * 3).
DEFAULT_PAYLOAD_CEILING = 64 * 1024 * 1024

# Leading filler tokens stripped when extracting a subject phrase from a clause.
_SUBJECT_FILLERS = ("a", "an", "the", "video", "clip", "footage", "of")


class EmfError(Exception):
    """Base class for all framework errors."""


class DegeneratePrompt(EmfError):
    """Prompt or clause carries no usable content (no clauses / no subject)."""


def canonicalize_prompt(text: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace.

    Keeps alphanumeric characters and single spaces; idempotent. Canonical
    equality is what makes two sub-prompts "the same" for dedup purposes.
    """
    cleaned = []
    for ch in text.lower():
        if ch.isalnum():
            cleaned.append(ch)
        else:
            cleaned.append(" ")
    return " ".join("".join(cleaned).split())


def extract_subject(clause: str) -> str:
    """Subject phrase of a clause: leading fillers dropped, tokens up to the
    first "-ing" word. The head token is always kept (a subject is never
    empty, so a leading gerund like "king" or "running water" stays).
    Returns "" when nothing usable remains."""
    tokens = canonicalize_prompt(clause).split()
    while tokens and tokens[0] in _SUBJECT_FILLERS:
        tokens.pop(0)
    subject = []
    for i, tok in enumerate(tokens):
        if i > 0 and tok.endswith("ing") and len(tok) > 3:
            break
        subject.append(tok)
    return " ".join(subject)


class TaskKind(enum.Enum):
    ATOMIC = "atomic"
    TEMPORAL = "temporal"
    SPATIAL = "spatial"


class Anchor(enum.Enum):
    FULL = "full"
    LEFT_HALF = "left_half"
    RIGHT_HALF = "right_half"
    TOP_HALF = "top_half"
    BOTTOM_HALF = "bottom_half"


class PlanOrigin(enum.Enum):
    RULE_BASED = "rule_based"
    EXTERNAL_LLM = "external_llm"


@dataclass(frozen=True)
class GenerationParams:
    width: int
    height: int
    frame_count: int
    fps: float
    seed: int

    def __post_init__(self) -> None:
        if self.width <= 0 or self.width % 2 != 0:
            raise ValueError(f"width must be positive and even, got {self.width}")
        if self.height <= 0 or self.height % 2 != 0:
            raise ValueError(f"height must be positive and even, got {self.height}")
        if self.frame_count < 2:
            raise ValueError(f"frame_count must be >= 2, got {self.frame_count}")
        if not self.fps > 0:
            raise ValueError(f"fps must be > 0, got {self.fps}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {self.seed}")
        if self.payload_bytes > DEFAULT_PAYLOAD_CEILING:
            raise ValueError(
                f"raw payload {self.payload_bytes} exceeds ceiling {DEFAULT_PAYLOAD_CEILING}"
            )

    @property
    def frame_bytes(self) -> int:
        return self.width * self.height * 3

    @property
    def payload_bytes(self) -> int:
        return self.frame_bytes * self.frame_count

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "frame_count": self.frame_count,
            "fps": self.fps,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> GenerationParams:
        return cls(
            width=d["width"],
            height=d["height"],
            frame_count=d["frame_count"],
            fps=float(d["fps"]),
            seed=d["seed"],
        )


DEFAULT_PARAMS = GenerationParams(width=64, height=64, frame_count=16, fps=8.0, seed=0)


@dataclass(frozen=True)
class PromptSpec:
    text: str
    params: GenerationParams = DEFAULT_PARAMS
    declared_subjects: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("prompt text must be non-empty")
        if self.declared_subjects is not None:
            subjects = tuple(s.lower() for s in self.declared_subjects)
            if len(set(subjects)) != len(subjects):
                raise ValueError("declared_subjects must be unique")
            object.__setattr__(self, "declared_subjects", subjects)


def cache_key(sub_prompt: str, params: GenerationParams) -> str:
    """256-bit content key for a sub-task, as 64 hex chars.

    Canonically-equal sub-prompts with equal params map to equal keys; the
    params serialization is field-order fixed so keys are stable across runs.
    """
    message = json.dumps(
        {"prompt": canonicalize_prompt(sub_prompt), "params": params.to_dict()},
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(message.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class LayerSlot:
    z_index: int
    anchor: Anchor

    def to_dict(self) -> dict:
        return {"z_index": self.z_index, "anchor": self.anchor.value}

    @classmethod
    def from_dict(cls, d: dict) -> LayerSlot:
        return cls(z_index=d["z_index"], anchor=Anchor(d["anchor"]))


@dataclass(frozen=True)
class SubTask:
    sub_prompt: str
    subjects: tuple[str, ...]
    cache_key: str
    time_index: int | None = None
    layer: LayerSlot | None = None

    def __post_init__(self) -> None:
        if not self.sub_prompt.strip():
            raise ValueError("sub_prompt must be non-empty")
        if (self.time_index is None) == (self.layer is None):
            raise ValueError("sub-task must carry exactly one of time_index / layer")
        object.__setattr__(self, "subjects", tuple(self.subjects))

    def to_dict(self) -> dict:
        d: dict = {
            "sub_prompt": self.sub_prompt,
            "subjects": list(self.subjects),
            "cache_key": self.cache_key,
        }
        if self.time_index is not None:
            d["time_index"] = self.time_index
        if self.layer is not None:
            d["layer"] = self.layer.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SubTask:
        return cls(
            sub_prompt=d["sub_prompt"],
            subjects=tuple(d["subjects"]),
            cache_key=d["cache_key"],
            time_index=d.get("time_index"),
            layer=LayerSlot.from_dict(d["layer"]) if "layer" in d else None,
        )


@dataclass(frozen=True)
class DecompositionPlan:
    kind: TaskKind
    subtasks: tuple[SubTask, ...]
    origin: PlanOrigin = PlanOrigin.RULE_BASED

    def __post_init__(self) -> None:
        object.__setattr__(self, "subtasks", tuple(self.subtasks))
        if not self.subtasks:
            raise ValueError("plan must contain at least one sub-task")
        if self.kind is TaskKind.ATOMIC:
            if len(self.subtasks) != 1:
                raise ValueError("atomic plan must contain exactly one sub-task")
        if self.kind in (TaskKind.ATOMIC, TaskKind.TEMPORAL):
            indices = [t.time_index for t in self.subtasks]
            if any(i is None for i in indices):
                raise ValueError(f"{self.kind.value} plan requires time slots")
            if sorted(indices) != list(range(len(indices))):
                raise ValueError(f"time indices must be contiguous 0..n-1, got {indices}")
        if self.kind is TaskKind.SPATIAL:
            layers = [t.layer for t in self.subtasks]
            if any(l is None for l in layers):
                raise ValueError("spatial plan requires layer slots")
            zs = [l.z_index for l in layers]
            if len(set(zs)) != len(zs):
                raise ValueError(f"z indices must be distinct, got {zs}")
            base = [l for l in layers if l.z_index == 0]
            if len(base) != 1 or base[0].anchor is not Anchor.FULL:
                raise ValueError("spatial plan requires exactly one z=0 full-anchor layer")

    @property
    def subject_union(self) -> tuple[str, ...]:
        seen: list[str] = []
        for task in self.subtasks:
            for s in task.subjects:
                if s not in seen:
                    seen.append(s)
        return tuple(seen)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "origin": self.origin.value,
            "subtasks": [t.to_dict() for t in self.subtasks],
        }

    @classmethod
    def from_dict(cls, d: dict) -> DecompositionPlan:
        return cls(
            kind=TaskKind(d["kind"]),
            subtasks=tuple(SubTask.from_dict(t) for t in d["subtasks"]),
            origin=PlanOrigin(d["origin"]),
        )


Box = tuple[int, int, int, int]  # x, y, w, h in pixels


@dataclass(frozen=True)
class SubjectTrack:
    label: str
    boxes: tuple[Box | None, ...]

    def __post_init__(self) -> None:
        object.__setattr__(
            self,
            "boxes",
            tuple(None if b is None else (int(b[0]), int(b[1]), int(b[2]), int(b[3])) for b in self.boxes),
        )

    def present_frames(self) -> list[int]:
        return [i for i, b in enumerate(self.boxes) if b is not None]

    def to_dict(self) -> dict:
        return {"label": self.label, "boxes": [list(b) if b else None for b in self.boxes]}

    @classmethod
    def from_dict(cls, d: dict) -> SubjectTrack:
        return cls(
            label=d["label"],
            boxes=tuple(tuple(b) if b else None for b in d["boxes"]),
        )


@dataclass(frozen=True)
class VideoClip:
    params: GenerationParams
    frames: tuple[bytes, ...]
    tracks: tuple[SubjectTrack, ...] = ()
    provenance: tuple[tuple[str, str], ...] = ()  # (cache_key, expert_id)

    def __post_init__(self) -> None:
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "tracks", tuple(self.tracks))
        object.__setattr__(self, "provenance", tuple(tuple(p) for p in self.provenance))
        if len(self.frames) != self.params.frame_count:
            raise ValueError(
                f"expected {self.params.frame_count} frames, got {len(self.frames)}"
            )
        expected = self.params.frame_bytes
        for i, frame in enumerate(self.frames):
            if len(frame) != expected:
                raise ValueError(f"frame {i} has {len(frame)} bytes, expected {expected}")
        for track in self.tracks:
            if len(track.boxes) != self.params.frame_count:
                raise ValueError(
                    f"track {track.label!r} has {len(track.boxes)} boxes, "
                    f"expected {self.params.frame_count}"
                )
            for i, box in enumerate(track.boxes):
                if box is None:
                    continue
                x, y, w, h = box
                if w < 1 or h < 1:
                    raise ValueError(f"track {track.label!r} frame {i}: box must be >= 1x1")
                if x < 0 or y < 0 or x + w > self.params.width or y + h > self.params.height:
                    raise ValueError(
                        f"track {track.label!r} frame {i}: box {box} outside frame bounds"
                    )

    @property
    def track_labels(self) -> set[str]:
        return {t.label for t in self.tracks}


@dataclass(frozen=True)
class QualityReport:
    imaging_quality: float
    background_consistency: float
    subject_consistency: float
    overall_consistency: float
    average_quality: float = field(default=-1.0)

    def __post_init__(self) -> None:
        scores = (
            self.imaging_quality,
            self.background_consistency,
            self.subject_consistency,
            self.overall_consistency,
        )
        for name, value in zip(
            ("imaging_quality", "background_consistency", "subject_consistency", "overall_consistency"),
            scores,
        ):
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        mean = sum(scores) / 4.0
        if self.average_quality < 0.0:
            object.__setattr__(self, "average_quality", mean)
        elif abs(self.average_quality - mean) > 1e-9:
            raise ValueError(
                f"average_quality {self.average_quality} is not the mean {mean} of the four scores"
            )

    def to_dict(self) -> dict:
        return {
            "imaging_quality": self.imaging_quality,
            "background_consistency": self.background_consistency,
            "subject_consistency": self.subject_consistency,
            "overall_consistency": self.overall_consistency,
            "average_quality": self.average_quality,
        }

    @classmethod
    def from_dict(cls, d: dict) -> QualityReport:
        return cls(
            imaging_quality=d["imaging_quality"],
            background_consistency=d["background_consistency"],
            subject_consistency=d["subject_consistency"],
            overall_consistency=d["overall_consistency"],
            average_quality=d["average_quality"],
        )
