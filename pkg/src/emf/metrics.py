"""Four clip-quality scores, each in [0,1], plus their mean.

Reference scorers are self-contained proxies: 8-bin per-channel color
histograms stand in for learned frame embeddings, and label-presence recall
stands in for text-video agreement. An external scorer endpoint can replace
the overall-consistency proxy.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass

import httpx
import numpy as np

from emf.model import EmfError, PromptSpec, QualityReport, SubjectTrack, VideoClip


class TooFewFrames(EmfError):
    pass


class ScorerUnavailable(EmfError):
    pass


@dataclass(frozen=True)
class MetricsConfig:
    hist_bins: int = 8
    k_sharpness: float = 100.0  # variance scale in v/(v+K)
    clip_low: int = 0
    clip_high: int = 255
    # None → label-presence proxy; URL → external POST {prompt, container_b64}
    scorer_endpoint: str | None = None
    scorer_timeout_ms: int = 10_000

    def __post_init__(self) -> None:
        if self.hist_bins < 2:
            raise ValueError("hist_bins must be >= 2")
        if self.k_sharpness <= 0:
            raise ValueError("k_sharpness must be > 0")


DEFAULT_METRICS = MetricsConfig()


def _frames_array(clip: VideoClip) -> np.ndarray:
    return np.frombuffer(b"".join(clip.frames), dtype=np.uint8).reshape(
        clip.params.frame_count, clip.params.height, clip.params.width, 3
    )


def imaging_quality(clip: VideoClip, cfg: MetricsConfig = DEFAULT_METRICS) -> float:
    arr = _frames_array(clip)
    h, w = clip.params.height, clip.params.width
    scores = []
    for i in range(arr.shape[0]):
        frame = arr[i]
        clipped = ((frame == cfg.clip_low) | (frame == cfg.clip_high)).any(axis=2)
        exposure = 1.0 - float(clipped.sum()) / (w * h)
        if w < 3 or h < 3:
            sharpness = 0.0
        else:
            f = frame.astype(np.float64)
            gray = np.floor(0.299 * f[:, :, 0] + 0.587 * f[:, :, 1] + 0.114 * f[:, :, 2] + 0.5)
            lap = (
                gray[:-2, 1:-1]
                + gray[2:, 1:-1]
                + gray[1:-1, :-2]
                + gray[1:-1, 2:]
                - 4 * gray[1:-1, 1:-1]
            )
            mean = float(lap.mean())
            variance = float(((lap - mean) ** 2).mean())
            sharpness = variance / (variance + cfg.k_sharpness)
        scores.append(0.5 * exposure + 0.5 * sharpness)
    return sum(scores) / len(scores)


def _region_histogram(pixels: np.ndarray, bins: int) -> np.ndarray:
    """(n, 3) uint8 pixels → 3*bins L1-normalized histogram; empty → uniform."""
    if pixels.shape[0] == 0:
        return np.full(3 * bins, 1.0 / bins)
    out = np.empty(3 * bins)
    n = pixels.shape[0]
    idx = (pixels.astype(np.int64) * bins) // 256
    for c in range(3):
        out[c * bins : (c + 1) * bins] = np.bincount(idx[:, c], minlength=bins) / n
    return out


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    value = float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
    return min(1.0, max(0.0, value))


def background_consistency(clip: VideoClip, cfg: MetricsConfig = DEFAULT_METRICS) -> float:
    if clip.params.frame_count < 2:
        raise TooFewFrames("background consistency needs at least 2 frames")
    arr = _frames_array(clip)
    h, w = clip.params.height, clip.params.width
    hists = []
    for i in range(arr.shape[0]):
        mask = np.ones((h, w), dtype=bool)
        for t in clip.tracks:
            b = t.boxes[i]
            if b is not None:
                x, y, bw, bh = b
                mask[y : y + bh, x : x + bw] = False
        hists.append(_region_histogram(arr[i][mask], cfg.hist_bins))
    sims = [_cosine(hists[i], hists[i + 1]) for i in range(len(hists) - 1)]
    return sum(sims) / len(sims)


def _first_track(clip: VideoClip, label: str) -> SubjectTrack | None:
    for t in clip.tracks:
        if t.label == label:
            return t
    return None


def subject_consistency(
    clip: VideoClip, subjects: list[str], cfg: MetricsConfig = DEFAULT_METRICS
) -> float:
    if not subjects:
        raise ValueError("subjects must be non-empty")
    arr = _frames_array(clip)
    per_subject = []
    for subject in subjects:
        track = _first_track(clip, subject)
        if track is None:
            per_subject.append(0.0)
            continue
        present = track.present_frames()
        if len(present) < 2:
            per_subject.append(0.0)
            continue
        hists = []
        for i in present:
            x, y, bw, bh = track.boxes[i]
            region = arr[i, y : y + bh, x : x + bw].reshape(-1, 3)
            hists.append(_region_histogram(region, cfg.hist_bins))
        sims = [_cosine(hists[k], hists[k + 1]) for k in range(len(hists) - 1)]
        per_subject.append(sum(sims) / len(sims))
    return sum(per_subject) / len(per_subject)


def _presence_recall(clip: VideoClip, subjects: list[str]) -> float:
    if not subjects:
        return 0.0
    fc = clip.params.frame_count
    satisfied = 0
    for subject in subjects:
        track = _first_track(clip, subject)
        if track is not None and 2 * len(track.present_frames()) >= fc:
            satisfied += 1
    return satisfied / len(subjects)


def _external_score(clip: VideoClip, prompt_text: str, cfg: MetricsConfig) -> float:
    from emf.container import encode_clip

    try:
        resp = httpx.post(
            cfg.scorer_endpoint,
            json={
                "prompt": prompt_text,
                "container_b64": base64.b64encode(encode_clip(clip)).decode("ascii"),
            },
            timeout=cfg.scorer_timeout_ms / 1000.0,
        )
        resp.raise_for_status()
        value = float(resp.json()["score"])
    except (httpx.HTTPError, KeyError, TypeError, ValueError) as exc:
        raise ScorerUnavailable(f"external scorer failed: {exc}") from exc
    return min(1.0, max(0.0, value))


def overall_consistency(
    clip: VideoClip,
    prompt: PromptSpec,
    subjects: list[str] | None = None,
    cfg: MetricsConfig = DEFAULT_METRICS,
) -> float:
    if cfg.scorer_endpoint is not None:
        return _external_score(clip, prompt.text, cfg)
    return _presence_recall(clip, _resolve_subjects(prompt, subjects))


def _resolve_subjects(prompt: PromptSpec, subjects: list[str] | None) -> list[str]:
    if subjects:
        return list(subjects)
    if prompt.declared_subjects:
        return list(prompt.declared_subjects)
    from emf.gate import decompose

    return list(decompose(prompt).subject_union)


def evaluate(
    clip: VideoClip,
    prompt: PromptSpec,
    cfg: MetricsConfig = DEFAULT_METRICS,
    subjects: list[str] | None = None,
) -> QualityReport:
    """All four scores plus their arithmetic mean. Subjects default to the
    prompt's declared list, falling back to gate extraction."""
    resolved = _resolve_subjects(prompt, subjects)
    imaging = imaging_quality(clip, cfg)
    background = background_consistency(clip, cfg)
    subject = subject_consistency(clip, resolved, cfg) if resolved else 0.0
    if cfg.scorer_endpoint is not None:
        overall = _external_score(clip, prompt.text, cfg)
    else:
        overall = _presence_recall(clip, resolved)
    return QualityReport(
        imaging_quality=imaging,
        background_consistency=background,
        subject_consistency=subject,
        overall_consistency=overall,
    )
