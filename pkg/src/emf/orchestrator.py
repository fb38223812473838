"""End-to-end pipeline: gate -> dedup/route -> dispatch -> merge -> score ->
persist, plus the experiment drivers that compare merge strategies.

Jobs run concurrently up to the executor limit and subtasks within a job
dispatch concurrently; the dedup cache serializes same-key generation. The
experiment driver also offers a single-lane setting, and reports are
byte-identical across lane counts because clip bytes (and therefore metric
values) depend only on prompt text and seed.
"""

from __future__ import annotations

import dataclasses
import enum
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from emf import gate as gate_mod
from emf import metrics as metrics_mod
from emf.container import encode_clip
from emf.dedupe import DedupCache, LeaderFailed, Role
from emf.gate import GateConfig, GateUnavailable
from emf.linksim import LinkParams
from emf.merger import EmptyClip, MergePlan, NoBaseLayer, SlotGap, merge
from emf.model import (
    Anchor,
    DegeneratePrompt,
    DecompositionPlan,
    EmfError,
    GenerationParams,
    LayerSlot,
    PromptSpec,
    QualityReport,
    SubTask,
    TaskKind,
    VideoClip,
)
from emf.registry import NoEligibleExpert, Registry, RoutingPolicy, UnknownExpert
from emf.store import Store, canonical_json
from emf.transport import ExpertError, ExpertPool, ExpertTimeout
from emf.worker import Worker, WorkerConfig


class JobStatus(enum.Enum):
    PENDING = "pending"
    GENERATING = "generating"
    MERGING = "merging"
    DONE = "done"
    FAILED = "failed"


class ExperimentMode(enum.Enum):
    CORRECT = "correct"
    MISMATCHED_MERGE = "mismatched_merge"
    SINGLE_DEVICE_BASELINE = "single_device_baseline"


#: Closed set of failure reasons surfaced on failed jobs.
FAILURE_REASONS = (
    "GateUnavailable",
    "NoEligibleExpert",
    "ExpertTimeout",
    "MergeError",
    "DegeneratePrompt",
)


@dataclass(frozen=True)
class RouteEntry:
    cache_key: str
    expert_id: str
    reused: bool
    elapsed_ms: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> RouteEntry:
        return cls(d["cache_key"], d["expert_id"], d["reused"], d["elapsed_ms"])


@dataclass
class JobRecord:
    job_id: str
    prompt: PromptSpec
    plan: DecompositionPlan | None = None
    routing: list[RouteEntry] = field(default_factory=list)
    merged_clip_ref: str | None = None
    report: QualityReport | None = None
    status: JobStatus = JobStatus.PENDING
    failure_reason: str | None = None
    failure_detail: str | None = None
    created_at: float = 0.0
    finished_at: float | None = None

    def __post_init__(self) -> None:
        if self.status is JobStatus.DONE:
            if self.report is None or self.merged_clip_ref is None:
                raise ValueError("done job requires report and clip ref")
            if self.plan is not None and len(self.routing) != len(self.plan.subtasks):
                raise ValueError("routing entries must cover every sub-task")
        if self.status is JobStatus.FAILED and self.failure_reason is None:
            raise ValueError("failed job requires a reason")

    def to_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "prompt": {
                "text": self.prompt.text,
                "params": self.prompt.params.to_dict(),
                "declared_subjects": list(self.prompt.declared_subjects)
                if self.prompt.declared_subjects is not None
                else None,
            },
            "plan": self.plan.to_dict() if self.plan is not None else None,
            "routing": [r.to_dict() for r in self.routing],
            "merged_clip_ref": self.merged_clip_ref,
            "report": self.report.to_dict() if self.report is not None else None,
            "status": self.status.value,
            "failure_reason": self.failure_reason,
            "failure_detail": self.failure_detail,
            "created_at": self.created_at,
            "finished_at": self.finished_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> JobRecord:
        prompt = PromptSpec(
            text=d["prompt"]["text"],
            params=GenerationParams.from_dict(d["prompt"]["params"]),
            declared_subjects=tuple(d["prompt"]["declared_subjects"])
            if d["prompt"]["declared_subjects"] is not None
            else None,
        )
        return cls(
            job_id=d["job_id"],
            prompt=prompt,
            plan=DecompositionPlan.from_dict(d["plan"]) if d["plan"] is not None else None,
            routing=[RouteEntry.from_dict(r) for r in d["routing"]],
            merged_clip_ref=d["merged_clip_ref"],
            report=QualityReport.from_dict(d["report"]) if d["report"] is not None else None,
            status=JobStatus(d["status"]),
            failure_reason=d["failure_reason"],
            failure_detail=d["failure_detail"],
            created_at=d["created_at"],
            finished_at=d["finished_at"],
        )


@dataclass(frozen=True)
class ExperimentSpec:
    corpus: tuple[PromptSpec, ...]
    mode: ExperimentMode
    trials: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "corpus", tuple(self.corpus))
        if not self.corpus:
            raise ValueError("corpus must be non-empty")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


@dataclass
class OrchestratorConfig:
    policy: RoutingPolicy = field(default_factory=RoutingPolicy)
    gate: GateConfig = field(default_factory=GateConfig)
    metrics: metrics_mod.MetricsConfig = field(default_factory=metrics_mod.MetricsConfig)
    retries: int = 2  # extra dispatch attempts per subtask, next-best expert
    request_timeout_s: float = 30.0
    dedup_capacity: int = 256
    crossfade_frames: int = 0
    max_concurrent_jobs: int = 4

    def __post_init__(self) -> None:
        if self.retries < 0:
            raise ValueError("retries must be >= 0")
        if self.request_timeout_s <= 0:
            raise ValueError("request_timeout_s must be > 0")


class _SubtaskFailed(EmfError):
    def __init__(self, reason: str, detail: str):
        super().__init__(f"{reason}: {detail}")
        self.reason = reason
        self.detail = detail


METRIC_KEYS = (
    "imaging_quality",
    "background_consistency",
    "subject_consistency",
    "overall_consistency",
    "average_quality",
)


class Orchestrator:
    def __init__(self, store: Store | None = None, config: OrchestratorConfig | None = None):
        self.config = config or OrchestratorConfig()
        # `or` would discard an empty on-disk store (len 0 is falsy).
        self.store = store if store is not None else Store()
        self.registry = Registry()
        self.pool = ExpertPool(self.registry)
        self.dedup = DedupCache(capacity=self.config.dedup_capacity)
        self._workers: list[Worker] = []

    # -- fleet wiring -----------------------------------------------------

    def attach_local_worker(self, worker: Worker) -> None:
        """Dial an in-process worker over a socketpair; same bytes as TCP."""
        self.pool.dial(worker.connect_in_process())
        self._workers.append(worker)

    def attach_tcp_worker(self, host: str, port: int) -> None:
        self.pool.dial_tcp(host, port)

    def close(self) -> None:
        self.pool.close()
        for worker in self._workers:
            worker.stop()

    # -- job pipeline ------------------------------------------------------

    def run_job(
        self,
        prompt: PromptSpec,
        policy: RoutingPolicy | None = None,
        mode: ExperimentMode = ExperimentMode.CORRECT,
        job_id: str | None = None,
    ) -> JobRecord:
        policy = policy or self.config.policy
        record = JobRecord(
            job_id=job_id or str(uuid.uuid4()), prompt=prompt, created_at=time.time()
        )
        self.store.persist(record.to_dict())

        def fail(reason: str, detail: str) -> JobRecord:
            record.status = JobStatus.FAILED
            record.failure_reason = reason
            record.failure_detail = detail
            record.finished_at = time.time()
            self.store.persist(record.to_dict())
            return record

        try:
            if mode is ExperimentMode.SINGLE_DEVICE_BASELINE:
                # Whole prompt to one expert, no decomposition.
                plan = gate_mod.decompose(prompt, kind=TaskKind.ATOMIC, cfg=self.config.gate)
            else:
                plan = gate_mod.plan_prompt(prompt, self.config.gate)
        except DegeneratePrompt as exc:
            return fail("DegeneratePrompt", str(exc))
        except (GateUnavailable, gate_mod.MalformedLLMResponse) as exc:
            return fail("GateUnavailable", str(exc))
        record.plan = plan
        record.status = JobStatus.GENERATING
        self.store.persist(record.to_dict())

        try:
            pairs, routing = self._resolve_subtasks(plan, prompt.params, policy)
        except _SubtaskFailed as exc:
            return fail(exc.reason, exc.detail)
        record.routing = routing

        record.status = JobStatus.MERGING
        self.store.persist(record.to_dict())
        strategy, inputs = _merge_inputs(plan, pairs, mode)
        try:
            merged = merge(
                MergePlan(
                    strategy=strategy,
                    inputs=tuple(inputs),
                    crossfade_frames=self.config.crossfade_frames,
                )
            )
        except (EmptyClip, SlotGap, NoBaseLayer, ValueError) as exc:
            return fail("MergeError", str(exc))

        subjects = self._evaluation_subjects(prompt, plan, mode)
        report = metrics_mod.evaluate(merged, prompt, self.config.metrics, subjects=subjects)
        record.report = report
        record.merged_clip_ref = self.store.save_clip(encode_clip(merged))
        record.status = JobStatus.DONE
        record.finished_at = time.time()
        self.store.persist(record.to_dict())
        return record

    def _evaluation_subjects(
        self, prompt: PromptSpec, plan: DecompositionPlan, mode: ExperimentMode
    ) -> list[str]:
        """Ground truth is fixed per job: declared subjects win, else the
        union of subtask subjects. The single-device baseline is scored
        against the natural decomposition so all modes share one truth."""
        if prompt.declared_subjects is not None:
            return list(prompt.declared_subjects)
        if mode is ExperimentMode.SINGLE_DEVICE_BASELINE:
            try:
                return list(gate_mod.decompose(prompt, cfg=self.config.gate).subject_union)
            except DegeneratePrompt:
                pass
        return list(plan.subject_union)

    def _resolve_subtasks(
        self, plan: DecompositionPlan, params: GenerationParams, policy: RoutingPolicy
    ) -> tuple[list[tuple[SubTask, VideoClip]], list[RouteEntry]]:
        results: list[tuple[SubTask, VideoClip]] = [None] * len(plan.subtasks)  # type: ignore[list-item]
        routing: list[RouteEntry] = [None] * len(plan.subtasks)  # type: ignore[list-item]
        if len(plan.subtasks) == 1:
            results[0], routing[0] = self._resolve_one(plan.kind, plan.subtasks[0], params, policy)
            return results, routing
        with ThreadPoolExecutor(max_workers=min(len(plan.subtasks), 8)) as pool:
            futures = [
                pool.submit(self._resolve_one, plan.kind, task, params, policy)
                for task in plan.subtasks
            ]
            first_error: _SubtaskFailed | None = None
            for i, future in enumerate(futures):
                try:
                    results[i], routing[i] = future.result()
                except _SubtaskFailed as exc:
                    if first_error is None:
                        first_error = exc
            if first_error is not None:
                raise first_error  # failed subtask fails the whole job
        return results, routing

    def _resolve_one(
        self, kind: TaskKind, task: SubTask, params: GenerationParams, policy: RoutingPolicy
    ) -> tuple[tuple[SubTask, VideoClip], RouteEntry]:
        wait_budget = self.config.request_timeout_s * (self.config.retries + 2)
        for _ in range(2):  # a failed leader makes the next caller the leader
            try:
                role, value = self.dedup.acquire_or_wait(task.cache_key, timeout=wait_budget)
            except LeaderFailed as exc:
                last_detail = str(exc)
                continue
            except TimeoutError as exc:
                raise _SubtaskFailed("ExpertTimeout", f"dedup wait: {exc}") from exc
            if role is Role.FOLLOWER:
                clip, expert_id = value
                return (task, clip), RouteEntry(task.cache_key, expert_id, True, 0)
            try:
                clip, expert_id, elapsed = self._generate(kind, task, params, policy)
            except _SubtaskFailed as exc:
                self.dedup.fail(task.cache_key, str(exc))
                raise
            self.dedup.publish(task.cache_key, (clip, expert_id))
            return (task, clip), RouteEntry(task.cache_key, expert_id, False, elapsed)
        raise _SubtaskFailed("ExpertTimeout", f"leader failed twice: {last_detail}")

    def _generate(
        self, kind: TaskKind, task: SubTask, params: GenerationParams, policy: RoutingPolicy
    ) -> tuple[VideoClip, str, int]:
        from emf.protocol import new_request_id

        request_id = new_request_id()  # one id per subtask; retries change only the expert
        tried: set[str] = set()
        last_exc: Exception | None = None
        for _ in range(self.config.retries + 1):
            try:
                expert_id = self.registry.select_expert(
                    kind, policy, payload_estimate=params.payload_bytes, exclude=frozenset(tried)
                )
            except NoEligibleExpert as exc:
                if last_exc is None:
                    raise _SubtaskFailed("NoEligibleExpert", str(exc)) from exc
                break
            tried.add(expert_id)
            try:
                conn = self.pool.connection(expert_id)
            except UnknownExpert as exc:
                last_exc = exc
                continue
            self.registry.mark_dispatch(expert_id)
            try:
                clip, elapsed = conn.request(
                    task.sub_prompt, params, request_id, timeout=self.config.request_timeout_s
                )
            except (ExpertTimeout, ExpertError) as exc:
                self.registry.mark_failed(expert_id)
                last_exc = exc
                continue
            self.registry.mark_complete(expert_id)
            clip = dataclasses.replace(clip, provenance=((task.cache_key, expert_id),))
            return clip, expert_id, elapsed
        reason = "ExpertTimeout" if isinstance(last_exc, ExpertTimeout) else "NoEligibleExpert"
        raise _SubtaskFailed(reason, f"exhausted {len(tried)} expert(s): {last_exc}")

    # -- experiments -------------------------------------------------------

    def run_experiment(self, spec: ExperimentSpec, lanes: int = 1) -> dict:
        if lanes < 1:
            raise ValueError("lanes must be >= 1")
        jobs: list[tuple[int, int, PromptSpec]] = []
        for trial in range(spec.trials):
            for index, prompt in enumerate(spec.corpus):
                params = dataclasses.replace(prompt.params, seed=spec.seed + trial)
                jobs.append((trial, index, dataclasses.replace(prompt, params=params)))

        def run_one(entry: tuple[int, int, PromptSpec]) -> dict:
            trial, index, prompt = entry
            record = self.run_job(prompt, mode=spec.mode)
            row: dict = {
                "trial": trial,
                "prompt_index": index,
                "prompt": prompt.text,
                "status": record.status.value,
                "metrics": None,
                "failure_reason": record.failure_reason,
            }
            if record.report is not None:
                report = record.report
                row["metrics"] = {
                    "imaging_quality": report.imaging_quality,
                    "background_consistency": report.background_consistency,
                    "subject_consistency": report.subject_consistency,
                    "overall_consistency": report.overall_consistency,
                    "average_quality": report.average_quality,
                }
            return row

        if lanes == 1:
            rows = [run_one(job) for job in jobs]
        else:
            with ThreadPoolExecutor(max_workers=lanes) as pool:
                rows = list(pool.map(run_one, jobs))
        rows.sort(key=lambda r: (r["trial"], r["prompt_index"]))

        scored = [r["metrics"] for r in rows if r["metrics"] is not None]
        means = (
            {key: sum(m[key] for m in scored) / len(scored) for key in METRIC_KEYS}
            if scored
            else None
        )
        return {
            "mode": spec.mode.value,
            "seed": spec.seed,
            "trials": spec.trials,
            "corpus_size": len(spec.corpus),
            "failures": len(rows) - len(scored),
            "means": means,
            "rows": rows,
        }


def experiment_report_json(report: dict) -> str:
    """Canonical serialization; equal reports are byte-equal."""
    return canonical_json(report)


def _merge_inputs(
    plan: DecompositionPlan,
    pairs: list[tuple[SubTask, VideoClip]],
    mode: ExperimentMode,
) -> tuple[TaskKind, list[tuple[SubTask, VideoClip]]]:
    """Correct mode keeps the classified strategy. MismatchedMerge swaps it:
    time slices become layers z=0..n-1 with round-robin anchors; layers become
    time slices ordered by z. Atomic plans have nothing to swap."""
    if mode is not ExperimentMode.MISMATCHED_MERGE or plan.kind is TaskKind.ATOMIC:
        return plan.kind, pairs
    halves = (Anchor.LEFT_HALF, Anchor.RIGHT_HALF)
    if plan.kind is TaskKind.TEMPORAL:
        ordered = sorted(pairs, key=lambda p: p[0].time_index)
        swapped = [
            (
                dataclasses.replace(
                    task,
                    time_index=None,
                    layer=LayerSlot(i, Anchor.FULL if i == 0 else halves[(i - 1) % 2]),
                ),
                clip,
            )
            for i, (task, clip) in enumerate(ordered)
        ]
        return TaskKind.SPATIAL, swapped
    ordered = sorted(pairs, key=lambda p: p[0].layer.z_index)
    swapped = [
        (dataclasses.replace(task, layer=None, time_index=i), clip)
        for i, (task, clip) in enumerate(ordered)
    ]
    return TaskKind.TEMPORAL, swapped


def build_local_fleet(
    orchestrator: Orchestrator,
    count: int = 3,
    base_seed: int = 0,
    latency_ms: int = 20,
    bandwidth_bps: int = 10_000_000,
    drop_probability: float = 0.0,
    time_scale: float = 0.0,
    heartbeat_interval_ms: int = 1000,
) -> list[Worker]:
    """Spawn `count` in-process mock workers and register them. Each worker
    gets its own link RNG stream (seed base_seed + i)."""
    workers = []
    for i in range(count):
        worker = Worker(
            WorkerConfig(
                expert_id=f"expert-{i}",
                link=LinkParams(
                    latency_ms=latency_ms,
                    bandwidth_bps=bandwidth_bps,
                    drop_probability=drop_probability,
                    seed=base_seed + i,
                ),
                time_scale=time_scale,
                heartbeat_interval_ms=heartbeat_interval_ms,
            )
        )
        orchestrator.attach_local_worker(worker)
        workers.append(worker)
    return workers
