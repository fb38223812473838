"""Byte-level conformance between the adapter SDK and the orchestrator.

Every check here parses one side's bytes with the other side's decoder (and
with the SDK's own reference parser), so a drift in either implementation of
the wire format or the video container fails loudly.
"""

import io
import socket
import threading
import uuid

import pytest

from emf.container import decode_clip, encode_clip
from emf.model import GenerationParams, SubjectTrack, VideoClip
from emf.protocol import Message, MessageType
from emf.protocol import encode_message as primary_encode
from emf.protocol import read_frame as primary_read

from emf_adapter.adapter import Adapter, AdapterConfig, reference_generate, subject_phrase
from emf_adapter.video import FrameContractError, collect_frames, encode_video, parse_video
from emf_adapter.wire import Frame, encode_frame, read_frame

PARAMS = {"width": 16, "height": 16, "frame_count": 3, "fps": 8.0, "seed": 5}
REQUEST_ID = str(uuid.UUID(int=7))


def sample_frames() -> list[tuple[Frame, Message]]:
    """The same logical messages built through both codebases."""
    caps = AdapterConfig(host="h", port=1, expert_id="e1").capabilities()
    payload = b"\x00\x01\x02"
    pairs = [
        (Frame("HELLO", caps), Message(MessageType.HELLO, caps)),
        (Frame("HELLO_ACK", {}), Message(MessageType.HELLO_ACK, {})),
        (
            Frame("GENERATE", {"sub_prompt": "a dog running", "params": PARAMS}, REQUEST_ID),
            Message(MessageType.GENERATE, {"sub_prompt": "a dog running", "params": PARAMS}, REQUEST_ID),
        ),
        (
            Frame("PROGRESS", {"progress": 1.0}, REQUEST_ID),
            Message(MessageType.PROGRESS, {"progress": 1.0}, REQUEST_ID),
        ),
        (
            Frame("RESULT", {}, REQUEST_ID, payload),
            Message(MessageType.RESULT, {}, REQUEST_ID, payload),
        ),
        (
            Frame("ERROR", {"code": "generation_failed", "error": "boom"}, REQUEST_ID),
            Message(MessageType.ERROR, {"code": "generation_failed", "error": "boom"}, REQUEST_ID),
        ),
        (
            Frame("HEARTBEAT", {"expert_id": "e1"}),
            Message(MessageType.HEARTBEAT, {"expert_id": "e1"}),
        ),
    ]
    return pairs


class TestWireConformance:
    def test_both_encoders_emit_identical_bytes(self):
        for frame, message in sample_frames():
            assert encode_frame(frame) == primary_encode(message), frame.type

    def test_primary_decoder_reads_sdk_bytes(self):
        for frame, _ in sample_frames():
            message, _ = primary_read(io.BytesIO(encode_frame(frame)))
            assert message.type.value == frame.type
            assert message.body == frame.body
            assert message.request_id == frame.request_id
            assert message.payload == frame.payload

    def test_sdk_decoder_reads_primary_bytes(self):
        for frame, message in sample_frames():
            got = read_frame(io.BytesIO(primary_encode(message)))
            assert got == frame


class TestContainerConformance:
    def clip_fixture(self):
        params = GenerationParams(**PARAMS)
        frames = [bytes((i, 2 * i, 3 * i)) * (16 * 16) for i in range(3)]
        boxes = [(0, 0, 4, 4), None, (2, 2, 4, 4)]
        return params, frames, [("dog", boxes)]

    def test_both_encoders_emit_identical_bytes(self):
        params, frames, tracks = self.clip_fixture()
        sdk_blob = encode_video(
            params.width, params.height, params.frame_count, params.fps, params.seed, frames, tracks
        )
        clip = VideoClip(
            params=params,
            frames=tuple(frames),
            tracks=(SubjectTrack("dog", tuple(tracks[0][1])),),
        )
        assert sdk_blob == encode_clip(clip)

    def test_primary_decoder_reads_sdk_container(self):
        params, frames, tracks = self.clip_fixture()
        blob = encode_video(
            params.width, params.height, params.frame_count, params.fps, params.seed, frames, tracks
        )
        clip = decode_clip(blob)
        assert clip.params == params
        assert list(clip.frames) == frames
        assert clip.tracks[0].label == "dog"
        assert list(clip.tracks[0].boxes) == tracks[0][1]

    def test_sdk_parser_reads_primary_container(self):
        params, frames, tracks = self.clip_fixture()
        clip = VideoClip(
            params=params,
            frames=tuple(frames),
            tracks=(SubjectTrack("dog", tuple(tracks[0][1])),),
        )
        parsed = parse_video(encode_clip(clip))
        assert parsed["width"] == params.width
        assert parsed["frames"] == frames
        assert parsed["tracks"] == [("dog", tracks[0][1])]


class TestFrameContract:
    def test_exact_frame_count_enforced(self):
        good = [b"\x00" * (4 * 4 * 3)] * 2
        assert collect_frames(good, 4, 4, 2) == good
        with pytest.raises(FrameContractError, match="yielded 1 frames"):
            collect_frames(good[:1], 4, 4, 2)
        with pytest.raises(FrameContractError, match="more than 2"):
            collect_frames(good * 2, 4, 4, 2)

    def test_frame_size_enforced(self):
        with pytest.raises(FrameContractError, match="contract says 48"):
            collect_frames([b"\x00" * 47, b"\x00" * 48], 4, 4, 2)

    def test_reference_generator_honors_contract(self):
        frames, tracks = reference_generate("a dog running", PARAMS)
        assert len(frames) == PARAMS["frame_count"]
        assert all(len(f) == 16 * 16 * 3 for f in frames)
        assert tracks[0][0] == "dog"
        assert len(tracks[0][1]) == PARAMS["frame_count"]

    def test_subject_phrase_keeps_head_noun(self):
        assert subject_phrase("a school student studying in a classroom") == "school student"
        assert subject_phrase("the teacher teaching") == "teacher"


class ScriptedOrchestrator:
    """Minimal orchestrator side: accepts one adapter connection and records
    every byte the adapter sends."""

    def __init__(self):
        self._listener = socket.create_server(("127.0.0.1", 0))
        self.port = self._listener.getsockname()[1]
        self.recorded = bytearray()
        self._sock: socket.socket | None = None
        self._stream = None

    class _Tee:
        def __init__(self, raw, sink: bytearray):
            self._raw = raw
            self._sink = sink

        def read(self, n: int) -> bytes:
            chunk = self._raw.read(n)
            self._sink.extend(chunk)
            return chunk

    def accept(self, timeout: float = 5.0):
        self._listener.settimeout(timeout)
        self._sock, _ = self._listener.accept()
        self._stream = self._sock.makefile("rwb")
        self._tee = self._Tee(self._sock.makefile("rb"), self.recorded)
        return self

    def read(self) -> Message | None:
        message, _ = primary_read(self._tee)
        return message

    def send(self, message: Message) -> None:
        self._stream.write(primary_encode(message))
        self._stream.flush()

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
        self._listener.close()


@pytest.fixture
def scripted():
    """Factory: start an adapter with the given model callable and a scripted
    orchestrator side already past accept(). HELLO_ACK stays the test's job."""

    cleanup = []

    def start(generate_fn=reference_generate):
        orch = ScriptedOrchestrator()
        config = AdapterConfig(
            host="127.0.0.1",
            port=orch.port,
            expert_id="adapter-under-test",
            generate_fn=generate_fn,
            heartbeat_interval_ms=60_000,  # out of the way of the scripted exchange
        )
        adapter = Adapter(config)
        thread = threading.Thread(target=adapter.serve_forever, daemon=True)
        thread.start()
        orch.accept()
        cleanup.append((orch, adapter, thread))
        return orch, adapter

    yield start
    for orch, adapter, thread in cleanup:
        adapter.stop()
        orch.close()
        thread.join(timeout=5)


def generate_message(sub_prompt: str, request_id: str, params: dict | None = None) -> Message:
    return Message(
        MessageType.GENERATE,
        {"sub_prompt": sub_prompt, "params": params or PARAMS},
        request_id,
    )


class TestRecordedExchange:
    def test_recorded_exchange_parses_identically_under_both_decoders(self, scripted):
        orch, _ = scripted()
        hello = orch.read()
        assert hello.type is MessageType.HELLO
        orch.send(Message(MessageType.HELLO_ACK, {}))
        request_id = str(uuid.uuid4())
        orch.send(generate_message("a dog running", request_id))
        progress = orch.read()
        assert progress.type is MessageType.PROGRESS and progress.request_id == request_id
        result = orch.read()
        assert result.type is MessageType.RESULT and result.request_id == request_id

        # Replay the raw recording through both codebases.
        primary_view = []
        stream = io.BytesIO(bytes(orch.recorded))
        while True:
            message, _ = primary_read(stream)
            if message is None:
                break
            primary_view.append(message)
        sdk_view = []
        stream = io.BytesIO(bytes(orch.recorded))
        while True:
            frame = read_frame(stream)
            if frame is None:
                break
            sdk_view.append(frame)

        assert [m.type.value for m in primary_view] == ["HELLO", "PROGRESS", "RESULT"]
        assert len(primary_view) == len(sdk_view)
        for message, frame in zip(primary_view, sdk_view):
            assert message.type.value == frame.type
            assert message.body == frame.body
            assert message.request_id == frame.request_id
            assert message.payload == frame.payload

        # The RESULT payload is one container under either parser.
        clip = decode_clip(result.payload)
        parsed = parse_video(result.payload)
        assert list(clip.frames) == parsed["frames"]
        assert [(t.label, list(t.boxes)) for t in clip.tracks] == [
            (label, list(boxes)) for label, boxes in parsed["tracks"]
        ]
        assert clip.params.frame_count == PARAMS["frame_count"]

    def test_model_exception_becomes_error_and_loop_survives(self, scripted):
        calls = {"n": 0}

        def flaky(sub_prompt, params):
            calls["n"] += 1
            if calls["n"] == 1:
                raise RuntimeError("cuda out of memory")
            return reference_generate(sub_prompt, params)

        orch, _ = scripted(generate_fn=flaky)
        assert orch.read().type is MessageType.HELLO
        orch.send(Message(MessageType.HELLO_ACK, {}))

        first_id = str(uuid.uuid4())
        orch.send(generate_message("a dog running", first_id))
        reply = orch.read()
        assert reply.type is MessageType.ERROR
        assert reply.request_id == first_id
        assert reply.body["code"] == "generation_failed"
        assert "cuda out of memory" in reply.body["error"]

        second_id = str(uuid.uuid4())
        orch.send(generate_message("a dog running", second_id))
        assert orch.read().type is MessageType.PROGRESS
        assert orch.read().request_id == second_id

    def test_contract_violation_never_reaches_the_wire(self, scripted):
        orch, _ = scripted(generate_fn=lambda s, p: ([b"short"], None))
        assert orch.read().type is MessageType.HELLO
        orch.send(Message(MessageType.HELLO_ACK, {}))
        request_id = str(uuid.uuid4())
        orch.send(generate_message("a dog running", request_id))
        reply = orch.read()
        assert reply.type is MessageType.ERROR
        assert reply.body["code"] == "generation_failed"
        assert reply.payload == b""

    def test_bad_params_rejected(self, scripted):
        orch, _ = scripted()
        assert orch.read().type is MessageType.HELLO
        orch.send(Message(MessageType.HELLO_ACK, {}))
        request_id = str(uuid.uuid4())
        orch.send(generate_message("a dog", request_id, params={"width": 3}))
        reply = orch.read()
        assert reply.type is MessageType.ERROR and reply.body["code"] == "bad_params"

    def test_over_resolution_rejected(self, scripted):
        orch, _ = scripted()
        assert orch.read().type is MessageType.HELLO
        orch.send(Message(MessageType.HELLO_ACK, {}))
        request_id = str(uuid.uuid4())
        big = dict(PARAMS, width=4096, height=4096)
        orch.send(generate_message("a dog", request_id, params=big))
        reply = orch.read()
        assert reply.type is MessageType.ERROR and reply.body["code"] == "over_resolution"
