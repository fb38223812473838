"""Job persistence: append-only JSONL journal plus content-addressed clips.

Records append to <data_dir>/jobs.log, one canonical-JSON line each; later
lines for the same job_id supersede earlier ones. Clip payloads live at
<data_dir>/clips/<sha256>.emv where the hash covers the container bytes.
With data_dir=None everything stays in memory (tests, ephemeral runs).
"""

from __future__ import annotations

import hashlib
import json
import threading
from pathlib import Path

from emf.model import EmfError


class UnknownJob(EmfError):
    pass


class CorruptJournal(EmfError):
    def __init__(self, line_number: int, reason: str):
        super().__init__(f"jobs.log line {line_number}: {reason}")
        self.line_number = line_number
        self.reason = reason


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def clip_address(container: bytes) -> str:
    return hashlib.sha256(container).hexdigest()


class Store:
    def __init__(self, data_dir: str | Path | None = None):
        self._lock = threading.Lock()
        self._records: dict[str, dict] = {}
        self._order: list[str] = []  # first-seen order of job_ids
        self._blobs: dict[str, bytes] = {}
        #: corrupt journal lines found at open, as CorruptJournal instances;
        #: valid lines around them still load.
        self.journal_issues: list[CorruptJournal] = []
        self._dir = Path(data_dir) if data_dir is not None else None
        if self._dir is not None:
            self._dir.mkdir(parents=True, exist_ok=True)
            (self._dir / "clips").mkdir(exist_ok=True)
            self._replay_journal()

    @property
    def data_dir(self) -> Path | None:
        return self._dir

    def _journal_path(self) -> Path:
        assert self._dir is not None
        return self._dir / "jobs.log"

    def _replay_journal(self) -> None:
        path = self._journal_path()
        if not path.exists():
            return
        with path.open("rb") as handle:
            for line_number, raw in enumerate(handle, start=1):
                raw = raw.strip()
                if not raw:
                    continue
                try:
                    record = json.loads(raw)
                    job_id = record["job_id"]
                except (ValueError, TypeError, KeyError) as exc:
                    self.journal_issues.append(CorruptJournal(line_number, str(exc)))
                    continue
                if job_id not in self._records:
                    self._order.append(job_id)
                self._records[job_id] = record

    # -- records --------------------------------------------------------

    def persist(self, record: dict) -> None:
        job_id = record["job_id"]
        line = canonical_json(record)
        with self._lock:
            if self._dir is not None:
                with self._journal_path().open("a", encoding="utf-8") as handle:
                    handle.write(line + "\n")
            if job_id not in self._records:
                self._order.append(job_id)
            self._records[job_id] = json.loads(line)

    def load(self, job_id: str) -> dict:
        with self._lock:
            record = self._records.get(job_id)
        if record is None:
            raise UnknownJob(job_id)
        return record

    def list_jobs(self, status: str | None = None, offset: int = 0, limit: int = 50) -> list[dict]:
        with self._lock:
            records = [self._records[j] for j in self._order]
        if status is not None:
            records = [r for r in records if r.get("status") == status]
        return records[offset : offset + limit]

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    # -- clips ----------------------------------------------------------

    def save_clip(self, container: bytes) -> str:
        """Returns the clip ref (relative path keyed by content hash)."""
        ref = f"clips/{clip_address(container)}.emv"
        with self._lock:
            if self._dir is not None:
                path = self._dir / ref
                if not path.exists():  # content-addressed: identical bytes share a file
                    path.write_bytes(container)
            else:
                self._blobs.setdefault(ref, container)
        return ref

    def load_clip(self, ref: str) -> bytes:
        with self._lock:
            if self._dir is not None:
                path = self._dir / ref
                if not path.exists():
                    raise UnknownJob(f"no clip at {ref}")
                return path.read_bytes()
            try:
                return self._blobs[ref]
            except KeyError:
                raise UnknownJob(f"no clip at {ref}") from None
