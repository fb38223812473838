"""Corpus files: prompt-per-line text with declared scoring subjects.

Line grammar: `<prompt text> | <subject>, <subject>, ...`; the pipe and
subject list are optional. Blank lines and `#` comments are skipped.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from emf.model import DEFAULT_PARAMS, GenerationParams, PromptSpec


def parse_corpus(text: str, params: GenerationParams = DEFAULT_PARAMS) -> tuple[PromptSpec, ...]:
    prompts = []
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        prompt_text, _, subject_part = line.partition("|")
        prompt_text = prompt_text.strip()
        if not prompt_text:
            raise ValueError(f"corpus line {line_number}: empty prompt before '|'")
        subjects = tuple(s.strip().lower() for s in subject_part.split(",") if s.strip())
        prompts.append(
            PromptSpec(
                text=prompt_text,
                params=params,
                declared_subjects=subjects if subjects else None,
            )
        )
    return tuple(prompts)


def load_corpus(path: str | Path, params: GenerationParams = DEFAULT_PARAMS) -> tuple[PromptSpec, ...]:
    return parse_corpus(Path(path).read_text(encoding="utf-8"), params)


def default_corpus(params: GenerationParams = DEFAULT_PARAMS) -> tuple[PromptSpec, ...]:
    """The bundled 20-prompt classroom corpus (synthetic)."""
    text = resources.files("emf.data").joinpath("corpus.txt").read_text(encoding="utf-8")
    return parse_corpus(text, params)
