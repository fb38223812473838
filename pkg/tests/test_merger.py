from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emf.merger import (
    EmptyClip,
    MergePlan,
    NoBaseLayer,
    SlotGap,
    harmonize,
    harmonize_clip,
    merge,
    merge_spatial,
    merge_temporal,
)
from emf.mock_expert import mock_generate
from emf.model import (
    Anchor,
    GenerationParams,
    LayerSlot,
    SubTask,
    SubjectTrack,
    TaskKind,
    VideoClip,
    cache_key,
)


def params(**overrides) -> GenerationParams:
    base = dict(width=8, height=8, frame_count=4, fps=8.0, seed=0)
    base.update(overrides)
    return GenerationParams(**base)


def solid_clip(color, p=None, tracks=()) -> VideoClip:
    p = p or params()
    frame = bytes(color) * (p.width * p.height)
    return VideoClip(params=p, frames=tuple(frame for _ in range(p.frame_count)), tracks=tracks)


def task_for(prompt: str, p: GenerationParams, *, time_index=None, layer=None) -> SubTask:
    from emf.model import extract_subject

    subject = extract_subject(prompt)
    return SubTask(
        sub_prompt=prompt,
        subjects=(subject,) if subject else (),
        cache_key=cache_key(prompt, p),
        time_index=time_index,
        layer=layer,
    )


def as_array(clip) -> np.ndarray:
    return np.frombuffer(b"".join(clip.frames), dtype=np.uint8).reshape(
        clip.params.frame_count, clip.params.height, clip.params.width, 3
    )


class TestHarmonize:
    def test_upscale_nearest_neighbor_blocks(self):
        p4 = params(width=4, height=4, frame_count=2)
        src = np.arange(4 * 4 * 3 * 2, dtype=np.uint8).reshape(2, 4, 4, 3)
        clip = VideoClip(
            params=p4,
            frames=tuple(src[i].tobytes() for i in range(2)),
            tracks=(SubjectTrack("s", ((1, 1, 2, 2), (1, 1, 2, 2))),),
        )
        out = harmonize_clip(clip, params(width=8, height=8, frame_count=2))
        arr = as_array(out)
        for Y in range(8):
            for X in range(8):
                assert (arr[0, Y, X] == src[0, Y // 2, X // 2]).all()
        assert out.tracks[0].boxes[0] == (2, 2, 4, 4)

    def test_identity_when_conformant(self):
        clip = mock_generate("a dog running", params(width=16, height=16))
        assert harmonize_clip(clip, clip.params) is clip

    def test_fps_upsample_duplicates_frames(self):
        clip = mock_generate("a dog running", params(width=16, height=16, frame_count=4, fps=8.0))
        out = harmonize_clip(clip, params(width=16, height=16, frame_count=4, fps=16.0))
        assert out.params.frame_count == 8
        src = as_array(clip)
        dst = as_array(out)
        for i in range(8):
            assert (dst[i] == src[int(i * 8.0 // 16.0)]).all()
        # Track boxes follow the same index map.
        assert out.tracks[0].boxes == tuple(
            clip.tracks[0].boxes[int(i * 8.0 // 16.0)] for i in range(8)
        )

    def test_fps_downsample(self):
        clip = mock_generate("a dog running", params(width=16, height=16, frame_count=8, fps=16.0))
        out = harmonize_clip(clip, params(width=16, height=16, frame_count=4, fps=8.0))
        assert out.params.frame_count == 4
        src = as_array(clip)
        dst = as_array(out)
        for i in range(4):
            assert (dst[i] == src[i * 2]).all()

    def test_empty_list_rejected(self):
        with pytest.raises(EmptyClip):
            harmonize([], params())


class TestMergeTemporal:
    def make_plan(self, prompts, p=None, crossfade=0) -> MergePlan:
        p = p or params(width=16, height=16, frame_count=16)
        inputs = tuple(
            (task_for(text, p, time_index=i), mock_generate(text, p))
            for i, text in enumerate(prompts)
        )
        return MergePlan(TaskKind.TEMPORAL, inputs, crossfade_frames=crossfade)

    def test_concat_byte_exact(self):
        plan = self.make_plan(["a dog running", "a cat sitting"])
        out = merge_temporal(plan)
        assert out.params.frame_count == 32
        assert out.frames[16] == plan.inputs[1][1].frames[0]
        assert out.frames[:16] == plan.inputs[0][1].frames

    def test_single_input_identity_frames(self):
        plan = self.make_plan(["a dog running"])
        out = merge_temporal(plan)
        assert out.frames == plan.inputs[0][1].frames
        assert out.tracks == plan.inputs[0][1].tracks

    def test_track_retiming_halves(self):
        p = params(width=16, height=16, frame_count=16)
        plan = self.make_plan(
            ["school student studying in classroom", "school teacher teaching in a classroom"], p
        )
        out = merge_temporal(plan)
        by_label = {t.label: t for t in out.tracks}
        student = by_label["school student"]
        teacher = by_label["school teacher"]
        assert [b is not None for b in student.boxes] == [True] * 16 + [False] * 16
        assert [b is not None for b in teacher.boxes] == [False] * 16 + [True] * 16

    def test_same_label_tracks_merge(self):
        plan = self.make_plan(["a dog running", "a dog sleeping"])
        out = merge_temporal(plan)
        assert [t.label for t in out.tracks] == ["dog"]
        assert all(b is not None for b in out.tracks[0].boxes)

    def test_slot_gap_rejected(self):
        p = params()
        inputs = (
            (task_for("a dog", p, time_index=0), mock_generate("a dog", p)),
            (task_for("a cat", p, time_index=2), mock_generate("a cat", p)),
        )
        with pytest.raises(SlotGap):
            merge_temporal(MergePlan(TaskKind.TEMPORAL, inputs))

    def test_crossfade_blend_weights(self):
        p = params(width=4, height=4, frame_count=6)
        a = solid_clip((90, 90, 90), p)
        b = solid_clip((30, 30, 30), p)
        inputs = ((task_for("x a", p, time_index=0), a), (task_for("y b", p, time_index=1), b))
        out = merge_temporal(MergePlan(TaskKind.TEMPORAL, inputs, crossfade_frames=2))
        assert out.params.frame_count == 10
        arr = as_array(out)
        # overlap frames 4,5: alpha 1/3 then 2/3 toward the incoming clip
        assert (arr[4] == 70).all()  # 90*2/3 + 30*1/3
        assert (arr[5] == 50).all()  # 90*1/3 + 30*2/3
        assert (arr[3] == 90).all() and (arr[6] == 30).all()

    def test_crossfade_output_count_formula(self):
        plan = self.make_plan(["a dog running", "a cat sitting", "a fox jumping"], crossfade=3)
        out = merge_temporal(plan)
        assert out.params.frame_count == 3 * 16 - 2 * 3

    def test_provenance_concatenated(self):
        p = params()
        a = mock_generate("a dog", p)
        a = VideoClip(params=a.params, frames=a.frames, tracks=a.tracks, provenance=(("k1", "e1"),))
        b = mock_generate("a cat", p)
        b = VideoClip(params=b.params, frames=b.frames, tracks=b.tracks, provenance=(("k2", "e2"),))
        inputs = ((task_for("a dog", p, time_index=0), a), (task_for("a cat", p, time_index=1), b))
        out = merge_temporal(MergePlan(TaskKind.TEMPORAL, inputs))
        assert out.provenance == (("k1", "e1"), ("k2", "e2"))


class TestMergeSpatial:
    def make_plan(self, base_prompt="teacher teaching", layer_prompt="student studying", p=None) -> MergePlan:
        p = p or params(width=32, height=32, frame_count=8)
        inputs = (
            (
                task_for(base_prompt, p, layer=LayerSlot(0, Anchor.FULL)),
                mock_generate(base_prompt, p),
            ),
            (
                task_for(layer_prompt, p, layer=LayerSlot(1, Anchor.LEFT_HALF)),
                mock_generate(layer_prompt, p),
            ),
        )
        return MergePlan(TaskKind.SPATIAL, inputs)

    def test_both_tracks_present_every_frame(self):
        out = merge_spatial(self.make_plan())
        labels = {t.label for t in out.tracks}
        assert labels == {"teacher", "student"}
        for t in out.tracks:
            assert all(b is not None for b in t.boxes)

    def test_base_pixels_outside_paste_unchanged(self):
        plan = self.make_plan()
        base_clip = plan.inputs[0][1]
        out = merge_spatial(plan)
        base_arr = as_array(base_clip)
        out_arr = as_array(out)
        layer_track = next(t for t in out.tracks if t.label == "student")
        for i in range(out.params.frame_count):
            mask = np.zeros((32, 32), dtype=bool)
            x, y, w, h = layer_track.boxes[i]
            mask[y : y + h, x : x + w] = True
            assert (out_arr[i][~mask] == base_arr[i][~mask]).all()
            assert (out_arr[i][mask] != base_arr[i][mask]).any()

    def test_single_full_layer_identity(self):
        p = params()
        clip = mock_generate("a dog", p)
        plan = MergePlan(
            TaskKind.SPATIAL, ((task_for("a dog", p, layer=LayerSlot(0, Anchor.FULL)), clip),)
        )
        out = merge_spatial(plan)
        assert out.frames == clip.frames
        assert out.tracks == clip.tracks

    def test_layer_boxes_mapped_into_anchor(self):
        out = merge_spatial(self.make_plan())
        student = next(t for t in out.tracks if t.label == "student")
        for b in student.boxes:
            x, y, w, h = b
            assert x + w <= 16  # left half of a 32-wide frame

    def test_trim_to_shortest(self):
        p_long = params(width=16, height=16, frame_count=8)
        p_short = params(width=16, height=16, frame_count=4)
        inputs = (
            (task_for("a dog", p_long, layer=LayerSlot(0, Anchor.FULL)), mock_generate("a dog", p_long)),
            (task_for("a cat", p_short, layer=LayerSlot(1, Anchor.RIGHT_HALF)), mock_generate("a cat", p_short)),
        )
        out = merge_spatial(MergePlan(TaskKind.SPATIAL, inputs))
        assert out.params.frame_count == 4

    def test_missing_base_rejected(self):
        p = params()
        inputs = (
            (task_for("a dog", p, layer=LayerSlot(1, Anchor.LEFT_HALF)), mock_generate("a dog", p)),
        )
        with pytest.raises(NoBaseLayer):
            merge_spatial(MergePlan(TaskKind.SPATIAL, inputs))

    def test_chroma_key_fallback_for_trackless_layer(self):
        p = params(width=8, height=8, frame_count=2)
        base = solid_clip((200, 50, 50), p)
        # trackless layer: pure green background, red square foreground
        layer_arr = np.zeros((2, 8, 8, 3), dtype=np.uint8)
        layer_arr[:, :, :, 1] = 255
        layer_arr[:, 2:5, 2:5] = (250, 10, 10)
        layer = VideoClip(params=p, frames=tuple(layer_arr[i].tobytes() for i in range(2)))
        inputs = (
            (task_for("scene base", p, layer=LayerSlot(0, Anchor.FULL)), base),
            (task_for("red box", p, layer=LayerSlot(1, Anchor.FULL)), layer),
        )
        out = merge_spatial(MergePlan(TaskKind.SPATIAL, inputs))
        arr = as_array(out)
        assert (arr[0, 2:5, 2:5] == (250, 10, 10)).all()  # keyed foreground pasted
        assert (arr[0, 0, 0] == (200, 50, 50)).all()  # green background not pasted

    def test_label_union_never_shrinks(self):
        plan = self.make_plan()
        input_labels = set()
        for _, clip in plan.inputs:
            input_labels |= clip.track_labels
        out = merge_spatial(plan)
        assert out.track_labels >= input_labels


class TestMergeDispatch:
    def test_atomic_passthrough(self):
        p = params()
        clip = mock_generate("a dog", p)
        plan = MergePlan(TaskKind.ATOMIC, ((task_for("a dog", p, time_index=0), clip),))
        assert merge(plan) is clip

    def test_routes_by_strategy(self):
        p = params(width=16, height=16)
        temporal = MergePlan(
            TaskKind.TEMPORAL,
            (
                (task_for("a dog", p, time_index=0), mock_generate("a dog", p)),
                (task_for("a cat", p, time_index=1), mock_generate("a cat", p)),
            ),
        )
        assert merge(temporal).params.frame_count == 8
        spatial = MergePlan(
            TaskKind.SPATIAL,
            (
                (task_for("a dog", p, layer=LayerSlot(0, Anchor.FULL)), mock_generate("a dog", p)),
                (task_for("a cat", p, layer=LayerSlot(1, Anchor.TOP_HALF)), mock_generate("a cat", p)),
            ),
        )
        assert merge(spatial).params.frame_count == 4


PROMPTS = st.sampled_from(
    ["a dog running", "teacher teaching", "a cat sitting", "red car driving", "a kite flying"]
)


@given(
    prompts=st.lists(PROMPTS, min_size=1, max_size=3, unique=True),
    kind=st.sampled_from([TaskKind.TEMPORAL, TaskKind.SPATIAL]),
    dims=st.sampled_from([(8, 8), (16, 8), (16, 16), (24, 16)]),
    fc=st.integers(min_value=2, max_value=8),
)
@settings(max_examples=40, deadline=None)
def test_merge_output_always_valid(prompts, kind, dims, fc):
    # VideoClip.__post_init__ enforces dimension and track-bound invariants,
    # so constructing the merge output without error is the assertion.
    p = GenerationParams(width=dims[0], height=dims[1], frame_count=fc, fps=8.0, seed=1)
    anchors = [Anchor.FULL, Anchor.LEFT_HALF, Anchor.RIGHT_HALF]
    inputs = []
    for i, text in enumerate(prompts):
        slot = (
            {"time_index": i} if kind is TaskKind.TEMPORAL else {"layer": LayerSlot(i, anchors[i])}
        )
        inputs.append((task_for(text, p, **slot), mock_generate(text, p)))
    out = merge(MergePlan(kind, tuple(inputs)))
    input_labels = set()
    for _, clip in inputs:
        input_labels |= clip.track_labels
    assert out.track_labels == input_labels
