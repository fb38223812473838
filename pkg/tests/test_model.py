from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emf.model import (
    Anchor,
    DecompositionPlan,
    GenerationParams,
    LayerSlot,
    PromptSpec,
    QualityReport,
    SubTask,
    SubjectTrack,
    TaskKind,
    VideoClip,
    cache_key,
    canonicalize_prompt,
    extract_subject,
)


def small_params(**overrides) -> GenerationParams:
    base = dict(width=8, height=8, frame_count=4, fps=8.0, seed=0)
    base.update(overrides)
    return GenerationParams(**base)


class TestCanonicalize:
    def test_case_punctuation_whitespace(self):
        assert canonicalize_prompt("  School Teacher  teaching!") == "school teacher teaching"

    def test_empty(self):
        assert canonicalize_prompt("!!! ???") == ""

    def test_keeps_digits(self):
        assert canonicalize_prompt("Scene 2: a dog") == "scene 2 a dog"

    @given(st.text(max_size=200))
    def test_idempotent(self, text):
        once = canonicalize_prompt(text)
        assert canonicalize_prompt(once) == once

    @given(st.text(max_size=200))
    def test_output_alphabet(self, text):
        out = canonicalize_prompt(text)
        assert "  " not in out
        assert out == out.strip()
        assert all(c.isalnum() or c == " " for c in out)


class TestExtractSubject:
    def test_filler_stripping(self):
        assert extract_subject("a video of school teacher teaching") == "school teacher"

    def test_no_ing_token(self):
        assert extract_subject("the red fox") == "red fox"

    def test_short_ing_words_kept(self):
        # "king" ends in ing but is the subject noun itself
        assert extract_subject("a king walking") == "king"

    def test_empty_clause(self):
        assert extract_subject("a video of") == ""


class TestCacheKey:
    def test_deterministic(self):
        p = small_params()
        assert cache_key("a dog running", p) == cache_key("a dog running", p)

    def test_canonical_equality(self):
        p = small_params()
        assert cache_key("A  Dog running!", p) == cache_key("a dog running", p)

    def test_seed_changes_key(self):
        assert cache_key("a dog", small_params(seed=1)) != cache_key("a dog", small_params(seed=2))

    def test_prompt_changes_key(self):
        p = small_params()
        assert cache_key("a dog", p) != cache_key("a cat", p)

    def test_shape(self):
        key = cache_key("a dog", small_params())
        assert len(key) == 64
        assert set(key) <= set("0123456789abcdef")

    def test_collision_smoke(self):
        # 10^5 distinct inputs must map to 10^5 distinct keys.
        p = small_params()
        keys = {cache_key(f"prompt variant {i}", p) for i in range(100_000)}
        assert len(keys) == 100_000


class TestGenerationParams:
    @pytest.mark.parametrize(
        "overrides",
        [
            {"width": 0},
            {"width": 7},
            {"height": -2},
            {"frame_count": 1},
            {"fps": 0.0},
            {"seed": -1},
            {"seed": 2**64},
        ],
    )
    def test_rejects_bad_values(self, overrides):
        with pytest.raises(ValueError):
            small_params(**overrides)

    def test_rejects_oversized_payload(self):
        with pytest.raises(ValueError):
            GenerationParams(width=4096, height=4096, frame_count=2048, fps=8.0, seed=0)

    def test_payload_bytes(self):
        assert small_params().payload_bytes == 8 * 8 * 3 * 4

    def test_round_trip(self):
        p = small_params(seed=99)
        assert GenerationParams.from_dict(p.to_dict()) == p


class TestPromptSpec:
    def test_rejects_blank(self):
        with pytest.raises(ValueError):
            PromptSpec(text="   ")

    def test_subjects_lowercased_and_unique(self):
        spec = PromptSpec(text="x", declared_subjects=("Teacher", "Student"))
        assert spec.declared_subjects == ("teacher", "student")
        with pytest.raises(ValueError):
            PromptSpec(text="x", declared_subjects=("dog", "Dog"))


def make_subtask(prompt: str, *, time_index=None, layer=None) -> SubTask:
    return SubTask(
        sub_prompt=prompt,
        subjects=(extract_subject(prompt),),
        cache_key=cache_key(prompt, small_params()),
        time_index=time_index,
        layer=layer,
    )


class TestPlanInvariants:
    def test_atomic_single_subtask(self):
        plan = DecompositionPlan(TaskKind.ATOMIC, (make_subtask("a dog", time_index=0),))
        assert len(plan.subtasks) == 1
        with pytest.raises(ValueError):
            DecompositionPlan(
                TaskKind.ATOMIC,
                (make_subtask("a dog", time_index=0), make_subtask("a cat", time_index=1)),
            )

    def test_temporal_contiguous_indices(self):
        DecompositionPlan(
            TaskKind.TEMPORAL,
            (make_subtask("a dog", time_index=0), make_subtask("a cat", time_index=1)),
        )
        with pytest.raises(ValueError):
            DecompositionPlan(
                TaskKind.TEMPORAL,
                (make_subtask("a dog", time_index=0), make_subtask("a cat", time_index=2)),
            )

    def test_subtask_needs_exactly_one_slot(self):
        with pytest.raises(ValueError):
            make_subtask("a dog")
        with pytest.raises(ValueError):
            SubTask(
                sub_prompt="a dog",
                subjects=("dog",),
                cache_key="0" * 64,
                time_index=0,
                layer=LayerSlot(0, Anchor.FULL),
            )

    def test_spatial_one_full_base(self):
        DecompositionPlan(
            TaskKind.SPATIAL,
            (
                make_subtask("a beach", layer=LayerSlot(0, Anchor.FULL)),
                make_subtask("a dog", layer=LayerSlot(1, Anchor.LEFT_HALF)),
            ),
        )
        with pytest.raises(ValueError):
            DecompositionPlan(
                TaskKind.SPATIAL,
                (
                    make_subtask("a beach", layer=LayerSlot(0, Anchor.LEFT_HALF)),
                    make_subtask("a dog", layer=LayerSlot(1, Anchor.FULL)),
                ),
            )
        with pytest.raises(ValueError):
            DecompositionPlan(
                TaskKind.SPATIAL,
                (
                    make_subtask("a beach", layer=LayerSlot(0, Anchor.FULL)),
                    make_subtask("a dog", layer=LayerSlot(0, Anchor.LEFT_HALF)),
                ),
            )

    def test_subject_union_preserves_order(self):
        plan = DecompositionPlan(
            TaskKind.TEMPORAL,
            (
                make_subtask("a dog running", time_index=0),
                make_subtask("a cat sitting", time_index=1),
                make_subtask("the dog sleeping", time_index=2),
            ),
        )
        assert plan.subject_union == ("dog", "cat")

    def test_round_trip(self):
        plan = DecompositionPlan(
            TaskKind.SPATIAL,
            (
                make_subtask("a beach", layer=LayerSlot(0, Anchor.FULL)),
                make_subtask("a dog", layer=LayerSlot(1, Anchor.RIGHT_HALF)),
            ),
        )
        assert DecompositionPlan.from_dict(plan.to_dict()) == plan


class TestVideoClip:
    def test_frame_count_must_match(self):
        p = small_params()
        frames = tuple(bytes(p.frame_bytes) for _ in range(3))
        with pytest.raises(ValueError):
            VideoClip(params=p, frames=frames)

    def test_frame_size_must_match(self):
        p = small_params()
        frames = tuple(bytes(p.frame_bytes) for _ in range(3)) + (bytes(5),)
        with pytest.raises(ValueError):
            VideoClip(params=p, frames=frames)

    def test_track_box_bounds(self):
        p = small_params()
        frames = tuple(bytes(p.frame_bytes) for _ in range(p.frame_count))
        good = SubjectTrack("dog", ((0, 0, 4, 4), None, (4, 4, 4, 4), (7, 7, 1, 1)))
        VideoClip(params=p, frames=frames, tracks=(good,))
        bad = SubjectTrack("dog", ((0, 0, 9, 4), None, None, None))
        with pytest.raises(ValueError):
            VideoClip(params=p, frames=frames, tracks=(bad,))
        short = SubjectTrack("dog", ((0, 0, 4, 4),))
        with pytest.raises(ValueError):
            VideoClip(params=p, frames=frames, tracks=(short,))


class TestQualityReport:
    def test_average_computed(self):
        r = QualityReport(0.8, 0.6, 0.4, 0.2)
        assert r.average_quality == pytest.approx(0.5, abs=1e-12)

    def test_average_must_be_mean(self):
        with pytest.raises(ValueError):
            QualityReport(0.8, 0.6, 0.4, 0.2, average_quality=0.9)

    def test_scores_bounded(self):
        with pytest.raises(ValueError):
            QualityReport(1.2, 0.5, 0.5, 0.5)

    @given(
        st.lists(st.floats(min_value=0.0, max_value=1.0, allow_nan=False), min_size=4, max_size=4)
    )
    @settings(max_examples=50)
    def test_mean_invariant_holds(self, scores):
        r = QualityReport(*scores)
        assert abs(r.average_quality - sum(scores) / 4.0) <= 1e-9
