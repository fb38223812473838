"""Edge mixture-of-experts video generation framework."""

from emf.model import (
    Anchor,
    DecompositionPlan,
    EmfError,
    GenerationParams,
    LayerSlot,
    PlanOrigin,
    PromptSpec,
    QualityReport,
    SubTask,
    SubjectTrack,
    TaskKind,
    VideoClip,
    cache_key,
    canonicalize_prompt,
)

__all__ = [
    "Anchor",
    "DecompositionPlan",
    "EmfError",
    "GenerationParams",
    "LayerSlot",
    "PlanOrigin",
    "PromptSpec",
    "QualityReport",
    "SubTask",
    "SubjectTrack",
    "TaskKind",
    "VideoClip",
    "cache_key",
    "canonicalize_prompt",
]
