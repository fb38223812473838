"""Prompt gate: classify a prompt as atomic/temporal/spatial and decompose it
into sub-prompts with time or layer slots.

The rule-based path is the reference implementation. An external LLM endpoint
(OpenAI-style chat completions) can replace it; its reply is validated against
the same plan invariants and falls back to the rules when configured to.
"""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass, field

import httpx

from emf.model import (
    Anchor,
    DecompositionPlan,
    DegeneratePrompt,
    EmfError,
    LayerSlot,
    PlanOrigin,
    PromptSpec,
    SubTask,
    TaskKind,
    cache_key,
    canonicalize_prompt,
    extract_subject,
)

DEFAULT_TEMPORAL_MARKERS = ("and then", "then", "after that", "followed by", "afterwards")
DEFAULT_SPATIAL_MARKERS = ("while", "meanwhile", "as", "at the same time")

# Leading phrase dropped before splitting; prompts phrased as "a video of X"
# decompose to sub-prompts about X itself.
_PREFIXES = ("a video of ", "video of ")

# Instruction sent to an external gate endpoint. Invented here (no published
# template exists); mirrored in docs/llm-gate.md.
LLM_SYSTEM_INSTRUCTION = (
    "You classify a text-to-video prompt and split it into clauses. "
    'Reply with a single JSON object, no prose: {"kind": "atomic"|"temporal"|"spatial", '
    '"clauses": ["...", ...]}. "temporal" means the clauses happen one after another; '
    '"spatial" means they happen in the same scene at the same time; "atomic" means '
    "the prompt is one indivisible scene (exactly one clause). Clauses must be "
    "lowercase, free of the connective words, and ordered as in the prompt."
)


class GateUnavailable(EmfError):
    """External gate endpoint unreachable or erroring after retries."""


class MalformedLLMResponse(EmfError):
    """External gate replied with something that is not a valid plan."""


class GateMode(enum.Enum):
    RULE_BASED = "rule_based"
    EXTERNAL_LLM = "external_llm"
    LLM_WITH_RULE_FALLBACK = "llm_with_rule_fallback"


@dataclass(frozen=True)
class LLMEndpointConfig:
    base_url: str
    model_name: str
    api_key: str = ""
    timeout_ms: int = 10_000
    max_retries: int = 2

    def __post_init__(self) -> None:
        if self.timeout_ms <= 0:
            raise ValueError(f"timeout_ms must be > 0, got {self.timeout_ms}")
        if self.max_retries < 0:
            raise ValueError(f"max_retries must be >= 0, got {self.max_retries}")

    def resolved_api_key(self) -> str:
        return self.api_key or os.environ.get("EMF_LLM_API_KEY", "")


@dataclass(frozen=True)
class GateConfig:
    temporal_markers: tuple[str, ...] = DEFAULT_TEMPORAL_MARKERS
    spatial_markers: tuple[str, ...] = DEFAULT_SPATIAL_MARKERS
    mode: GateMode = GateMode.RULE_BASED
    llm: LLMEndpointConfig | None = None

    def __post_init__(self) -> None:
        for name, markers in (("temporal", self.temporal_markers), ("spatial", self.spatial_markers)):
            markers = tuple(markers)
            object.__setattr__(self, f"{name}_markers", markers)
            if not markers:
                raise ValueError(f"{name}_markers must be non-empty")
            for m in markers:
                if not m or m != m.lower() or canonicalize_prompt(m) != m:
                    raise ValueError(f"marker {m!r} must be lowercase canonical text")
        if self.mode is not GateMode.RULE_BASED and self.llm is None:
            raise ValueError(f"mode {self.mode.value} requires an llm endpoint config")


def _marker_spans(tokens: list[str], markers: tuple[str, ...]) -> list[tuple[int, int]]:
    """Non-overlapping (start, end) token spans where a marker separates two
    non-empty clauses. Longest marker wins at each position."""
    by_length = sorted((m.split() for m in markers), key=len, reverse=True)
    spans: list[tuple[int, int]] = []
    i = 0
    while i < len(tokens):
        matched = None
        for words in by_length:
            end = i + len(words)
            if 0 < i and end < len(tokens) and tokens[i:end] == words:
                matched = (i, end)
                break
        if matched:
            spans.append(matched)
            i = matched[1]
        else:
            i += 1
    return spans


def _strip_prefix(canonical: str) -> str:
    for prefix in _PREFIXES:
        if canonical.startswith(prefix):
            return canonical[len(prefix):]
    return canonical


def classify(prompt: PromptSpec, cfg: GateConfig | None = None) -> TaskKind:
    """Temporal if any temporal marker separates clauses, else spatial by the
    same rule, else atomic. Deterministic; canonicalizes internally."""
    cfg = cfg or GateConfig()
    tokens = _strip_prefix(canonicalize_prompt(prompt.text)).split()
    if _marker_spans(tokens, cfg.temporal_markers):
        return TaskKind.TEMPORAL
    if _marker_spans(tokens, cfg.spatial_markers):
        return TaskKind.SPATIAL
    return TaskKind.ATOMIC


def _split_clauses(tokens: list[str], markers: tuple[str, ...]) -> list[str]:
    spans = _marker_spans(tokens, markers)
    clauses: list[str] = []
    start = 0
    for s, e in spans:
        clauses.append(" ".join(tokens[start:s]))
        start = e
    clauses.append(" ".join(tokens[start:]))
    return [c for c in clauses if c]


def _build_plan(
    kind: TaskKind,
    clauses: list[str],
    prompt: PromptSpec,
    origin: PlanOrigin,
) -> DecompositionPlan:
    if not clauses:
        raise DegeneratePrompt(f"no usable clauses in prompt {prompt.text!r}")
    subtasks = []
    halves = (Anchor.LEFT_HALF, Anchor.RIGHT_HALF)
    for i, clause in enumerate(clauses):
        subject = extract_subject(clause)
        subjects = (subject,) if subject else ()
        if kind is TaskKind.SPATIAL:
            slot = {"layer": LayerSlot(i, Anchor.FULL if i == 0 else halves[(i - 1) % 2])}
        else:
            slot = {"time_index": i}
        subtasks.append(
            SubTask(
                sub_prompt=clause,
                subjects=subjects,
                cache_key=cache_key(clause, prompt.params),
                **slot,
            )
        )
    return DecompositionPlan(kind=kind, subtasks=tuple(subtasks), origin=origin)


def decompose(
    prompt: PromptSpec,
    kind: TaskKind | None = None,
    cfg: GateConfig | None = None,
) -> DecompositionPlan:
    """Split the prompt at the markers of `kind` (default: classify first).

    A caller-forced `kind` splits at that kind's markers regardless of the
    classification, which is how the mismatch experiment misroutes prompts.
    """
    cfg = cfg or GateConfig()
    if kind is None:
        kind = classify(prompt, cfg)
    text = _strip_prefix(canonicalize_prompt(prompt.text))
    tokens = text.split()
    if kind is TaskKind.ATOMIC:
        clauses = [text] if text else []
    elif kind is TaskKind.TEMPORAL:
        clauses = _split_clauses(tokens, cfg.temporal_markers)
    else:
        clauses = _split_clauses(tokens, cfg.spatial_markers)
    return _build_plan(kind, clauses, prompt, PlanOrigin.RULE_BASED)


def llm_decompose(prompt: PromptSpec, cfg: LLMEndpointConfig) -> DecompositionPlan:
    """One chat-completion round trip to an external gate endpoint.

    Raises GateUnavailable on transport failure after max_retries, and
    MalformedLLMResponse when the reply does not describe a valid plan.
    """
    body = {
        "model": cfg.model_name,
        "messages": [
            {"role": "system", "content": LLM_SYSTEM_INSTRUCTION},
            {"role": "user", "content": prompt.text},
        ],
        "temperature": 0,
    }
    headers = {}
    key = cfg.resolved_api_key()
    if key:
        headers["Authorization"] = f"Bearer {key}"
    last_error: Exception | None = None
    for _ in range(cfg.max_retries + 1):
        try:
            resp = httpx.post(
                cfg.base_url.rstrip("/") + "/chat/completions",
                json=body,
                headers=headers,
                timeout=cfg.timeout_ms / 1000.0,
            )
            resp.raise_for_status()
            payload = resp.json()
            break
        except (httpx.TransportError, httpx.HTTPStatusError) as exc:
            last_error = exc
    else:
        raise GateUnavailable(f"gate endpoint failed after {cfg.max_retries + 1} attempts: {last_error}")

    try:
        content = payload["choices"][0]["message"]["content"]
        reply = json.loads(content)
        kind = TaskKind(str(reply["kind"]).lower())
        clauses = [canonicalize_prompt(str(c)) for c in reply["clauses"]]
        clauses = [c for c in clauses if c]
    except (KeyError, IndexError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise MalformedLLMResponse(f"unusable gate reply: {exc}") from exc
    try:
        return _build_plan(kind, clauses, prompt, PlanOrigin.EXTERNAL_LLM)
    except (DegeneratePrompt, ValueError) as exc:
        raise MalformedLLMResponse(f"gate reply violates plan invariants: {exc}") from exc


def plan_prompt(prompt: PromptSpec, cfg: GateConfig | None = None) -> DecompositionPlan:
    """Mode dispatcher: rule-based, external LLM, or LLM with rule fallback."""
    cfg = cfg or GateConfig()
    if cfg.mode is GateMode.RULE_BASED:
        return decompose(prompt, None, cfg)
    assert cfg.llm is not None
    try:
        return llm_decompose(prompt, cfg.llm)
    except (GateUnavailable, MalformedLLMResponse):
        if cfg.mode is GateMode.LLM_WITH_RULE_FALLBACK:
            return decompose(prompt, None, cfg)
        raise
