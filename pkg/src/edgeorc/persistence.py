"""Durable record of agents and tasks.

Two backends behind one interface: an in-memory store for tests and an
append-log-with-snapshot file store for deployments.  Writes are
acknowledged only after they are durable, and callers follow a
persist-then-announce discipline: a task state change is written here
before any message about it leaves the node, so recovery can never
regress a task below what an observer already saw.

File layout: `log.ndjson` holds one canonical store record per line;
`snapshot.<version>` files are whole-store dumps written atomically
(temp file + rename).  Recovery loads the newest readable snapshot and
replays the log tail; a torn trailing line (crash mid-append) is
ignored.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field

from . import codec
from .domain import TaskState, is_terminal

KIND_TASK = "task"
KIND_AGENT = "agent"
_KINDS = (KIND_TASK, KIND_AGENT)


class NotFound(Exception):
    def __init__(self, kind: str, ident: str):
        self.key = (kind, ident)
        super().__init__(f"no {kind} record for {ident!r}")


class StorageUnavailable(Exception):
    pass


@dataclass(frozen=True)
class StoreRecord:
    """One versioned entry: (kind, id) -> canonical serialized value."""

    kind: str
    ident: str
    version: int
    value: dict  # wire form of a TaskRecord or AgentRecord

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"store kind must be one of {_KINDS}, got {self.kind!r}")
        if self.version < 1:
            raise ValueError("versions start at 1")


def _encode_store_record(r: StoreRecord) -> dict:
    return {"record_kind": r.kind, "id": r.ident, "version": r.version, "value": r.value}


@codec._strict
def _decode_store_record(f: codec._Fields) -> StoreRecord:
    return StoreRecord(
        kind=f.take("record_kind"),
        ident=f.take("id"),
        version=f.take("version"),
        value=f.take("value"),
    )


codec.register(StoreRecord, "store_record", _encode_store_record, _decode_store_record)


class MemoryStore:
    """Dict-backed store with the same versioning semantics as the file
    backend; used in tests and inside the simulator's virtual disks."""

    def __init__(self):
        self._records: dict[tuple[str, str], StoreRecord] = {}

    def put(self, kind: str, ident: str, value) -> int:
        prev = self._records.get((kind, ident))
        version = (prev.version + 1) if prev else 1
        self._records[(kind, ident)] = StoreRecord(
            kind=kind, ident=ident, version=version, value=codec.to_wire(value)
        )
        return version

    def get(self, kind: str, ident: str):
        record = self._records.get((kind, ident))
        if record is None:
            raise NotFound(kind, ident)
        return codec.from_wire(record.value)

    def version(self, kind: str, ident: str) -> int:
        record = self._records.get((kind, ident))
        if record is None:
            raise NotFound(kind, ident)
        return record.version

    def scan(self, kind: str) -> list:
        return [
            codec.from_wire(r.value)
            for (k, _), r in sorted(self._records.items())
            if k == kind
        ]


class FileStore:
    """Append-only log plus periodic snapshots on local files.

    Every put appends one line and fsyncs before returning, so an
    acknowledged write survives a crash.  Snapshots bound replay cost;
    they are written to a temp file and renamed into place, so a crash
    between write and rename leaves the previous state intact.
    """

    def __init__(self, root: str, snapshot_every: int = 100):
        self.root = root
        self.snapshot_every = snapshot_every
        self._records: dict[tuple[str, str], StoreRecord] = {}
        self._puts_since_snapshot = 0
        try:
            os.makedirs(root, exist_ok=True)
            self._load()
            self._log = open(self._log_path(), "ab")
        except OSError as exc:
            raise StorageUnavailable(str(exc)) from exc

    def _log_path(self) -> str:
        return os.path.join(self.root, "log.ndjson")

    def _snapshot_paths(self) -> list[tuple[int, str]]:
        found = []
        for name in os.listdir(self.root):
            if name.startswith("snapshot."):
                try:
                    found.append((int(name.split(".", 1)[1]), os.path.join(self.root, name)))
                except ValueError:
                    continue
        return sorted(found)

    def _load(self):
        snapshot_version = 0
        for version, path in reversed(self._snapshot_paths()):
            try:
                with open(path, "rb") as fh:
                    records = [codec.decode_line(line.decode()) for line in fh if line.strip()]
            except (OSError, codec.CodecError):
                continue  # fall back to an older snapshot or the bare log
            for record in records:
                self._records[(record.kind, record.ident)] = record
            snapshot_version = version
            break
        try:
            with open(self._log_path(), "rb") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        record = codec.decode_line(line.decode())
                    except codec.CodecError:
                        break  # torn tail from a crash mid-append
                    key = (record.kind, record.ident)
                    current = self._records.get(key)
                    if current is None or record.version > current.version:
                        self._records[key] = record
        except FileNotFoundError:
            pass
        self._max_seen = max((r.version for r in self._records.values()), default=snapshot_version)

    def put(self, kind: str, ident: str, value) -> int:
        prev = self._records.get((kind, ident))
        version = (prev.version + 1) if prev else 1
        record = StoreRecord(kind=kind, ident=ident, version=version, value=codec.to_wire(value))
        line = codec.encode_line(record).encode() + b"\n"
        try:
            self._log.write(line)
            self._log.flush()
            os.fsync(self._log.fileno())
        except OSError as exc:
            raise StorageUnavailable(str(exc)) from exc
        self._records[(kind, ident)] = record
        self._puts_since_snapshot += 1
        if self._puts_since_snapshot >= self.snapshot_every:
            self._write_snapshot()
        return version

    def _write_snapshot(self):
        version = max(r.version for r in self._records.values())
        tmp = os.path.join(self.root, f".snapshot.{version}.tmp")
        final = os.path.join(self.root, f"snapshot.{version}")
        with open(tmp, "wb") as fh:
            for _, record in sorted(self._records.items()):
                fh.write(codec.encode_line(record).encode() + b"\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, final)
        self._puts_since_snapshot = 0

    def get(self, kind: str, ident: str):
        record = self._records.get((kind, ident))
        if record is None:
            raise NotFound(kind, ident)
        return codec.from_wire(record.value)

    def version(self, kind: str, ident: str) -> int:
        record = self._records.get((kind, ident))
        if record is None:
            raise NotFound(kind, ident)
        return record.version

    def scan(self, kind: str) -> list:
        return [
            codec.from_wire(r.value)
            for (k, _), r in sorted(self._records.items())
            if k == kind
        ]

    def close(self):
        self._log.close()


@dataclass
class RecoveredFramework:
    """What a restarted framework rebuilds from the store: every task
    record, the ids to requeue (FIFO by original enqueue tick), the ids
    to treat as lost, and the high-water id counter."""

    tasks: dict = field(default_factory=dict)
    queued: list = field(default_factory=list)
    lost: list = field(default_factory=list)
    max_seq: int = 0


def recover_framework(store) -> RecoveredFramework:
    """Rebuild a framework's queue and task table from the store.

    Non-terminal tasks are restored; tasks persisted as Staging/Running
    whose agent is no longer part of the cluster (no agent record, or
    one marked disconnected) are treated as Lost so the caller can run
    the lost-task procedure.  Terminal tasks come back as history only.
    """
    result = RecoveredFramework()
    agents_alive = set()
    for agent in store.scan(KIND_AGENT):
        if agent.liveness.kind in ("connected", "suspect"):
            agents_alive.add(agent.agent_id)
    queued: list[tuple[int, str]] = []
    for record in store.scan(KIND_TASK):
        result.tasks[record.task_id] = record
        digits = [int(n) for n in re.findall(r"\d+", record.task_id)]
        result.max_seq = max([result.max_seq] + digits)
        if is_terminal(record.state):
            continue
        if record.state is TaskState.QUEUED:
            queued.append((record.state_history[0][1], record.task_id))
            continue
        if record.state is TaskState.FAILED:
            # A crash can land between the failure notification and the
            # auto requeue; finish the requeue here.  Manual-policy
            # failures stay parked for the operator.
            if record.spec.restart_policy.value == "auto":
                queued.append((record.state_history[0][1], record.task_id))
            continue
        if record.state is TaskState.LOST:
            result.lost.append(record.task_id)
        elif record.assigned_agent not in agents_alive:
            result.lost.append(record.task_id)
    queued.sort()
    result.queued = [task_id for _, task_id in queued]
    result.lost.sort()
    return result
