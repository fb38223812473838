"""Worker-side SDK: wrap any text-to-video callable as an edge expert."""

from emf_adapter.adapter import (
    Adapter,
    AdapterConfig,
    GenerateFn,
    HandshakeRejected,
    reference_generate,
    serve,
)
from emf_adapter.video import BadVideo, FrameContractError
from emf_adapter.wire import Frame, WireError

__all__ = [
    "Adapter",
    "AdapterConfig",
    "BadVideo",
    "Frame",
    "FrameContractError",
    "GenerateFn",
    "HandshakeRejected",
    "WireError",
    "reference_generate",
    "serve",
]
