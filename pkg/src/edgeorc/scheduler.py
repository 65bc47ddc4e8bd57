"""Framework-side scheduler.

Holds the task queue, matches offers against task constraints
(resources, attributes, runtime, data locality) with a pluggable
matcher, implements delayed scheduling by declining non-local offers
within a wait budget, drives replication on repeated losses, and runs
the two recovery procedures against the persistent store:

* a lost task is retrieved from the store and requeued — immediately
  for a permanent loss, after a grace period for a transient one so the
  original execution can resurface without a duplicate;
* a failed task notifies the administrator through the pluggable
  notifier sink and is requeued automatically or parked for an operator
  restart, per its restart policy.

Like the master, the scheduler is one logical event loop; the notifier
sink is fire-and-forget and must never block it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from . import codec, messages
from .config import SystemConfig
from .domain import (
    RUNTIMES_ATTR,
    AttributeConstraint,
    InsufficientResources,
    TaskRecord,
    TaskSpec,
    TaskState,
    is_terminal,
    transition,
)
from .master import Offer
from .messages import Outbox
from .persistence import KIND_TASK, MemoryStore, NotFound, recover_framework

log = logging.getLogger(__name__)


class HookAlreadyInstalled(Exception):
    pass


class UnknownTask(Exception):
    pass


class IllegalAction(Exception):
    def __init__(self, action: str, state: TaskState):
        self.action = action
        self.state = state
        super().__init__(f"cannot {action} a task in state {state.value}")


@dataclass(frozen=True)
class MatchReport:
    """Outcome of matching one spec against one offer.

    failed_constraint is present iff not matched: either the failing
    AttributeConstraint or a label like "resource:cpus" /
    "runtime:python-app" for the quantitative and runtime checks.
    locality_satisfied reports whether the offer is local for the spec
    (None when the spec has no locality) and never affects matched —
    delayed scheduling decides what to do about it.
    """

    matched: bool
    failed_constraint: "AttributeConstraint | str | None" = None
    locality_satisfied: "bool | None" = None

    def __post_init__(self):
        if self.matched == (self.failed_constraint is not None):
            raise ValueError("failed_constraint present iff not matched")


def locality_satisfied(spec: TaskSpec, offer: Offer) -> "bool | None":
    if spec.locality is None:
        return None
    value = offer.attributes.get(spec.locality.attr)
    if isinstance(value, frozenset):
        return spec.locality.value in value
    return value is not None and value == spec.locality.value


def built_in_match(spec: TaskSpec, offer: Offer) -> MatchReport:
    """Default matcher: resources fit, every constraint satisfied, and
    the offer advertises an executor for the spec's runtime."""
    local = locality_satisfied(spec, offer)
    try:
        offer.granted.subtract(spec.required)
    except InsufficientResources as exc:
        return MatchReport(
            matched=False, failed_constraint=f"resource:{exc.component}", locality_satisfied=local
        )
    for constraint in spec.constraints:
        if not constraint.satisfied_by(offer.attributes):
            return MatchReport(matched=False, failed_constraint=constraint, locality_satisfied=local)
    runtimes = offer.attributes.get(RUNTIMES_ATTR)
    advertised = (
        spec.runtime.value in runtimes
        if isinstance(runtimes, frozenset)
        else runtimes == spec.runtime.value
    )
    if not advertised:
        return MatchReport(
            matched=False,
            failed_constraint=f"runtime:{spec.runtime.value}",
            locality_satisfied=local,
        )
    return MatchReport(matched=True, locality_satisfied=local)


@dataclass
class QueueEntry:
    task: TaskRecord
    enqueued_at: int
    locality_deadline: "int | None" = None
    attempts: int = 0

    def __post_init__(self):
        if (self.task.spec.locality is None) != (self.locality_deadline is None):
            raise ValueError("locality_deadline present iff the spec has locality")

    @property
    def task_id(self) -> str:
        return self.task.task_id


@dataclass(frozen=True)
class Decision:
    kind: str  # "accept" | "decline" | "wait"
    offer: "Offer | None" = None


def decide(
    entry: QueueEntry,
    offers,
    now: int,
    matcher=built_in_match,
    probe_metrics=None,
) -> Decision:
    """Pick an offer for the queue-head entry, or wait for locality.

    A matching local offer always wins; matching non-local offers are
    declined (Wait) until the locality deadline passes, after which the
    best matching offer is taken regardless.  Ties break on the lowest
    sufferance metric from the most recent probe (unprobed agents count
    as the neutral 1.0), then the lowest agent id.
    """
    probe_metrics = probe_metrics or {}
    spec = entry.task.spec
    matching = [o for o in offers if matcher(spec, o).matched]
    if not matching:
        return Decision(kind="decline")

    def rank(offer: Offer):
        return (probe_metrics.get(offer.agent_id, 1.0), offer.agent_id)

    if spec.locality is None:
        return Decision(kind="accept", offer=min(matching, key=rank))
    local = [o for o in matching if locality_satisfied(spec, o)]
    if local:
        return Decision(kind="accept", offer=min(local, key=rank))
    if now < entry.locality_deadline:
        return Decision(kind="wait")
    return Decision(kind="accept", offer=min(matching, key=rank))


class Scheduler:
    def __init__(
        self,
        node_id: str = "framework",
        master_id: str = "master",
        config: SystemConfig = SystemConfig(),
        store=None,
        notifier=None,
        now: int = 0,
    ):
        self.node_id = node_id
        self.master_id = master_id
        self.config = config
        self.store = store if store is not None else MemoryStore()
        self.notifier = notifier if notifier is not None else _log_notifier
        self.outbox = Outbox(node_id)
        self.tasks: dict[str, TaskRecord] = {}
        self.queue: list[QueueEntry] = []
        self.offer_pool: dict[str, Offer] = {}
        self.probe_metrics: dict[str, float] = {}
        self.pending_accepts: dict[str, tuple[str, int]] = {}  # task -> (offer, deadline)
        self.deferred_requeues: dict[str, int] = {}  # task -> due tick
        self.kill_requested: set[str] = set()
        self.replica_groups: dict[str, set[str]] = {}
        self.loss_counts: dict[str, int] = {}
        self.archives: dict[str, str] = {}  # artifact sha -> base64 archive
        self._matcher = None
        self._task_seq = 0
        self._registered = False
        self._recover(now)

    # -- matcher hook ---------------------------------------------------------

    def install_matcher(self, matcher) -> None:
        """Replace the built-in matcher; at most one custom matcher may
        be active at a time."""
        if self._matcher is not None:
            raise HookAlreadyInstalled("a custom matcher is already installed")
        self._matcher = matcher

    def reset_matcher(self) -> None:
        self._matcher = None

    def match_offer(self, spec: TaskSpec, offer: Offer) -> MatchReport:
        matcher = self._matcher if self._matcher is not None else built_in_match
        return matcher(spec, offer)

    # -- submission -------------------------------------------------------------

    def submit(self, spec: TaskSpec, now: int) -> list[str]:
        """Create one Queued record per instance, persist each, and
        enqueue them FIFO.  Returns the new task ids."""
        ids = []
        for _ in range(spec.instances):
            self._task_seq += 1
            task_id = f"{spec.task_name}-{self._task_seq:03d}"
            record = TaskRecord.create(task_id, spec, now)
            self._persist(record)
            self.tasks[task_id] = record
            self._enqueue(record, now)
            ids.append(task_id)
            self.outbox.note("task_submitted", task_id=task_id)
        return ids

    def add_archive(self, sha256: str, archive_b64: str) -> None:
        self.archives[sha256] = archive_b64

    def _enqueue(self, record: TaskRecord, now: int, attempts: int = 0):
        deadline = None
        if record.spec.locality is not None:
            deadline = now + record.spec.locality.wait_ticks
        self.queue.append(
            QueueEntry(task=record, enqueued_at=now, locality_deadline=deadline, attempts=attempts)
        )
        if record.replica_group:
            self.replica_groups.setdefault(record.replica_group, set()).add(record.task_id)

    # -- recovery procedures -------------------------------------------------------

    def on_task_lost(self, task_id: str, now: int, classification: str = "permanent",
                     grace: "int | None" = None):
        """Lost-task procedure: retrieve the record from persistent
        storage and put it back in the scheduling queue.

        Transient losses wait out a grace period first, giving the
        original execution a chance to resurface; past the replication
        threshold the requeue fans out into a replica group.
        """
        try:
            record = self.store.get(KIND_TASK, task_id)
        except NotFound:
            raise UnknownTask(task_id) from None
        current = self.tasks.get(task_id, record)
        if current.state is not TaskState.LOST:
            current = transition(current, TaskState.LOST, now)
            self._persist(current)
            self.tasks[task_id] = current
        if classification == "transient":
            due = now + (grace if grace is not None else self.config.base_timeout)
            self.deferred_requeues[task_id] = due
            self.outbox.note("requeue_deferred", task_id=task_id, due=due)
            return
        self._requeue_lost(task_id, now)

    def _requeue_lost(self, task_id: str, now: int):
        record = self.tasks.get(task_id)
        if record is None or record.state is not TaskState.LOST:
            return
        self.deferred_requeues.pop(task_id, None)
        attempts = self.loss_counts.get(task_id, 0) + 1
        self.loss_counts[task_id] = attempts
        record = transition(record, TaskState.QUEUED, now)
        self._persist(record)
        self.tasks[task_id] = record
        if attempts > self.config.replication_threshold:
            group = record.replica_group or task_id
            record = record if record.replica_group else self._regroup(record, group)
            self._enqueue(record, now, attempts=attempts)
            self.outbox.note("task_requeued", task_id=task_id, attempts=attempts, from_store=True)
            for i in range(2, self.config.replica_count + 1):
                sibling_id = f"{task_id}~r{attempts}.{i}"
                sibling = TaskRecord.create(sibling_id, record.spec, now, replica_group=group)
                self._persist(sibling)
                self.tasks[sibling_id] = sibling
                self._enqueue(sibling, now, attempts=attempts)
                self.outbox.note("replica_enqueued", task_id=sibling_id, group=group)
        else:
            self._enqueue(record, now, attempts=attempts)
            self.outbox.note("task_requeued", task_id=task_id, attempts=attempts, from_store=True)

    def _regroup(self, record: TaskRecord, group: str) -> TaskRecord:
        from dataclasses import replace

        record = replace(record, replica_group=group)
        self.tasks[record.task_id] = record
        self._persist(record)
        return record

    def on_task_failed(self, task_id: str, now: int, exit_code=None):
        """Failure procedure: notify the administrator, then requeue
        (auto policy) or park the record until an operator restart."""
        record = self.tasks.get(task_id)
        if record is None:
            raise UnknownTask(task_id)
        self.notifier(
            {
                "event": "task-failed",
                "task_id": task_id,
                "task_name": record.spec.task_name,
                "exit_code": exit_code,
                "tick": now,
                "restart_policy": record.spec.restart_policy.value,
            }
        )
        self.outbox.note("admin_notified", task_id=task_id, event="task-failed")
        if record.spec.restart_policy.value == "auto":
            record = transition(record, TaskState.QUEUED, now)
            self._persist(record)
            self.tasks[task_id] = record
            self._enqueue(record, now, attempts=self.loss_counts.get(task_id, 0))
            self.outbox.note("task_requeued", task_id=task_id, attempts=0, from_store=False)
        else:
            self.outbox.note("task_parked", task_id=task_id)

    # -- operator actions ------------------------------------------------------------

    def restart_task(self, task_id: str, now: int) -> str:
        """Operator restart: legal from Failed, Lost, or Killed.  A
        killed task is terminal, so restarting it resubmits a fresh
        record in the same spirit rather than reviving the old id."""
        record = self.tasks.get(task_id)
        if record is None:
            raise UnknownTask(task_id)
        if record.state in (TaskState.FAILED, TaskState.LOST):
            self.deferred_requeues.pop(task_id, None)
            record = transition(record, TaskState.QUEUED, now)
            self._persist(record)
            self.tasks[task_id] = record
            self._enqueue(record, now, attempts=self.loss_counts.get(task_id, 0))
            self.outbox.note("task_restarted", task_id=task_id, new_task_id=task_id)
            return task_id
        if record.state is TaskState.KILLED:
            self._task_seq += 1
            new_id = f"{task_id}~again{self._task_seq}"
            fresh = TaskRecord.create(new_id, record.spec, now)
            self._persist(fresh)
            self.tasks[new_id] = fresh
            self._enqueue(fresh, now)
            self.outbox.note("task_restarted", task_id=task_id, new_task_id=new_id)
            return new_id
        raise IllegalAction("restart", record.state)

    def kill_task(self, task_id: str, now: int):
        """Operator kill: legal from Queued, Staging, or Running."""
        record = self.tasks.get(task_id)
        if record is None:
            raise UnknownTask(task_id)
        if record.state is TaskState.QUEUED:
            if task_id in self.pending_accepts:
                # Launch already racing to an agent; kill once it lands.
                self.kill_requested.add(task_id)
                return
            self.queue = [e for e in self.queue if e.task_id != task_id]
            self.deferred_requeues.pop(task_id, None)
            record = transition(record, TaskState.KILLED, now)
            self._persist(record)
            self.tasks[task_id] = record
            self.outbox.note("task_killed_queued", task_id=task_id)
        elif record.state in (TaskState.STAGING, TaskState.RUNNING):
            self.kill_requested.add(task_id)
            self.outbox.send(self.master_id, messages.KILL, now, task_id=task_id)
        else:
            raise IllegalAction("kill", record.state)

    # -- event loop ---------------------------------------------------------------------

    def on_start(self, now: int) -> list:
        self.outbox.send(self.master_id, messages.REGISTER, now, role="framework")
        self._registered = True
        return self.outbox.drain()

    def on_tick(self, now: int) -> list:
        if not self._registered or now % self.config.announce_period == 0:
            active = sorted(
                t for t, r in self.tasks.items()
                if r.state in (TaskState.STAGING, TaskState.RUNNING)
            )
            self.outbox.send(
                self.master_id, messages.REGISTER, now, role="framework", active=active
            )
            self._registered = True
        if now % self.config.announce_period == 0:
            for task_id in sorted(self.kill_requested):
                record = self.tasks.get(task_id)
                if record is not None and record.state in (TaskState.STAGING, TaskState.RUNNING):
                    self.outbox.send(self.master_id, messages.KILL, now, task_id=task_id)
        for task_id in sorted(self.deferred_requeues):
            if now >= self.deferred_requeues[task_id]:
                del self.deferred_requeues[task_id]
                self._requeue_lost(task_id, now)
        for task_id in sorted(self.pending_accepts):
            _offer, deadline = self.pending_accepts[task_id]
            if now >= deadline:
                del self.pending_accepts[task_id]
                self.outbox.note("accept_timed_out", task_id=task_id)
        self._dispatch(now)
        return self.outbox.drain()

    def handle(self, msg, now: int) -> list:
        if msg.kind == messages.OFFER:
            offer = codec.from_wire(msg.fields["offer"])
            self.offer_pool[offer.offer_id] = offer
            metric = msg.fields.get("probe_metric")
            if metric is not None:
                self.probe_metrics[offer.agent_id] = metric
        elif msg.kind == messages.STATUS:
            self._handle_status(msg, now)
        elif msg.kind == messages.PROBE_REPLY:
            self.probe_metrics[msg.fields["agent_id"]] = msg.fields["value"]
        elif msg.kind == messages.SUBMIT:
            spec = codec.from_wire(msg.fields["spec"])
            archive = msg.fields.get("archive_b64")
            if archive is not None:
                self.add_archive(spec.artifact.sha256, archive)
            ids = self.submit(spec, now)
            self.outbox.note("submit_accepted", task_ids=",".join(ids), request_id=msg.fields.get("request_id"))
        elif msg.kind == messages.TASK_ACTION:
            self._handle_action(msg, now)
        return self.outbox.drain()

    def _handle_action(self, msg, now: int):
        action = msg.fields["action"]
        task_id = msg.fields["task_id"]
        try:
            if action == "kill":
                self.kill_task(task_id, now)
            elif action == "restart":
                self.restart_task(task_id, now)
        except (UnknownTask, IllegalAction) as exc:
            self.outbox.note("action_rejected", task_id=task_id, action=action, error=str(exc))

    # -- offer dispatch --------------------------------------------------------------------

    def _dispatch(self, now: int):
        """One pass over the queue against the current offer pool.

        FIFO per replica group; entries whose accept is in flight are
        skipped; whatever no entry accepted is declined — a Wait decision
        declines the concrete offers rather than starving other
        frameworks by holding them.
        """
        pool = {
            oid: offer
            for oid, offer in self.offer_pool.items()
            if not offer.expired(now)
        }
        dispatched_groups: set[str] = set()
        for entry in list(self.queue):
            task_id = entry.task_id
            if task_id in self.pending_accepts or task_id in self.kill_requested:
                continue
            group = entry.task.replica_group
            if group is not None:
                if group in dispatched_groups:
                    continue  # only the group head dispatches this pass
                dispatched_groups.add(group)
            if not pool:
                break
            decision = decide(
                entry,
                list(pool.values()),
                now,
                matcher=self._matcher if self._matcher is not None else built_in_match,
                probe_metrics=self.probe_metrics,
            )
            if decision.kind == "accept":
                offer = decision.offer
                del pool[offer.offer_id]
                self.offer_pool.pop(offer.offer_id, None)
                fields = {
                    "offer_id": offer.offer_id,
                    "task_id": task_id,
                    "spec": codec.to_wire(entry.task.spec),
                    "replica_group": entry.task.replica_group,
                }
                archive = self.archives.get(entry.task.spec.artifact.sha256)
                if archive is not None:
                    fields["archive_b64"] = archive
                self.outbox.send(self.master_id, messages.ACCEPT, now, **fields)
                self.pending_accepts[task_id] = (offer.offer_id, now + self.config.accept_timeout)
                self.outbox.note(
                    "offer_accepted",
                    task_id=task_id,
                    offer_id=offer.offer_id,
                    agent_id=offer.agent_id,
                    local=locality_satisfied(entry.task.spec, offer),
                )
            elif decision.kind == "wait":
                self.outbox.note("locality_wait", task_id=task_id, deadline=entry.locality_deadline)
        for offer_id in sorted(self.offer_pool):
            offer = self.offer_pool[offer_id]
            if not offer.expired(now):
                self.outbox.send(self.master_id, messages.DECLINE, now, offer_id=offer_id)
        self.offer_pool.clear()

    # -- status intake --------------------------------------------------------------------------

    def _handle_status(self, msg, now: int):
        task_id = msg.fields["task_id"]
        record = self.tasks.get(task_id)
        if record is None:
            return  # another framework's task (status is broadcast)
        state = TaskState(msg.fields["state"])
        if record.state is state:
            return
        if state is TaskState.STAGING and record.state is TaskState.QUEUED:
            record = transition(record, TaskState.STAGING, now, agent=msg.fields.get("agent_id"))
            self._persist(record)
            self.tasks[task_id] = record
            self.queue = [e for e in self.queue if e.task_id != task_id]
            self.pending_accepts.pop(task_id, None)
            if task_id in self.kill_requested:
                self.outbox.send(self.master_id, messages.KILL, now, task_id=task_id)
        elif state is TaskState.RUNNING:
            if record.state is TaskState.STAGING:
                record = transition(record, TaskState.RUNNING, now)
            elif record.state is TaskState.LOST:
                # The original execution resurfaced within grace: its
                # pending requeue is satisfied by re-adoption on the spot.
                self.deferred_requeues.pop(task_id, None)
                record = transition(record, TaskState.QUEUED, now)
                record = transition(record, TaskState.STAGING, now, agent=msg.fields.get("agent_id"))
                record = transition(record, TaskState.RUNNING, now)
                self.outbox.note("task_readopted", task_id=task_id)
            elif record.state is TaskState.QUEUED and msg.fields.get("reason") == "resurfaced":
                # Requeued a beat before the resurrection news arrived:
                # the running execution wins, drop the queue entry.
                self.queue = [e for e in self.queue if e.task_id != task_id]
                self.pending_accepts.pop(task_id, None)
                record = transition(record, TaskState.STAGING, now, agent=msg.fields.get("agent_id"))
                record = transition(record, TaskState.RUNNING, now)
                self.outbox.note("task_readopted", task_id=task_id)
            else:
                return
            self._persist(record)
            self.tasks[task_id] = record
            if record.replica_group:
                self._kill_replica_siblings(record, now)
        elif state is TaskState.FINISHED:
            record = self._bridge_running(record, now)
            if self._apply(record, TaskState.FINISHED, now):
                self.outbox.note("task_finished", task_id=task_id)
        elif state is TaskState.KILLED:
            self._apply(record, TaskState.KILLED, now)
            self.kill_requested.discard(task_id)
        elif state is TaskState.FAILED:
            record = self._bridge_running(record, now)
            if self._apply(record, TaskState.FAILED, now):
                self.on_task_failed(task_id, now, exit_code=msg.fields.get("exit_code"))
        elif state is TaskState.LOST:
            if self._apply(record, TaskState.LOST, now):
                self.outbox.note(
                    "task_lost_received",
                    task_id=task_id,
                    classification=msg.fields.get("classification"),
                )
                self.on_task_lost(
                    task_id,
                    now,
                    classification=msg.fields.get("classification") or "permanent",
                    grace=msg.fields.get("grace"),
                )

    def _bridge_running(self, record: TaskRecord, now: int) -> TaskRecord:
        """A terminal report for a staging record implies the lost
        running report; fill the gap so the history stays legal."""
        if record.state is not TaskState.STAGING:
            return record
        record = transition(record, TaskState.RUNNING, now)
        self._persist(record)
        self.tasks[record.task_id] = record
        return record

    def _apply(self, record: TaskRecord, state: TaskState, now: int) -> bool:
        from .domain import LEGAL_TRANSITIONS

        if state not in LEGAL_TRANSITIONS[record.state]:
            return False
        record = transition(record, state, now)
        self._persist(record)
        self.tasks[record.task_id] = record
        return True

    def _kill_replica_siblings(self, survivor: TaskRecord, now: int):
        group = self.replica_groups.get(survivor.replica_group, set())
        for sibling_id in sorted(group):
            if sibling_id == survivor.task_id:
                continue
            sibling = self.tasks.get(sibling_id)
            if sibling is None or is_terminal(sibling.state):
                continue
            if sibling.state is TaskState.QUEUED:
                self.queue = [e for e in self.queue if e.task_id != sibling_id]
                self.deferred_requeues.pop(sibling_id, None)
                if sibling_id in self.pending_accepts:
                    self.kill_requested.add(sibling_id)
                    continue
                sibling = transition(sibling, TaskState.KILLED, now)
                self._persist(sibling)
                self.tasks[sibling_id] = sibling
                self.outbox.note("replica_killed", task_id=sibling_id, survivor=survivor.task_id)
            elif sibling.state in (TaskState.STAGING, TaskState.RUNNING):
                self.kill_requested.add(sibling_id)
                self.outbox.send(self.master_id, messages.KILL, now, task_id=sibling_id)
                self.outbox.note("replica_killed", task_id=sibling_id, survivor=survivor.task_id)
            elif sibling.state is TaskState.LOST:
                self.deferred_requeues.pop(sibling_id, None)

    # -- persistence -----------------------------------------------------------------------------

    def _persist(self, record: TaskRecord):
        self.store.put(KIND_TASK, record.task_id, record)

    def _recover(self, now: int):
        """Rebuild queue and task table from the store after a restart."""
        recovered = recover_framework(self.store)
        if not recovered.tasks:
            return
        self.tasks = dict(recovered.tasks)
        self._task_seq = recovered.max_seq
        for task_id in recovered.queued:
            record = self.tasks[task_id]
            if record.state is TaskState.FAILED:
                record = transition(record, TaskState.QUEUED, now)
                self._persist(record)
                self.tasks[task_id] = record
            self._enqueue(record, now)
        for record in self.tasks.values():
            if record.replica_group:
                self.replica_groups.setdefault(record.replica_group, set()).add(record.task_id)
        for task_id in recovered.lost:
            record = self.tasks[task_id]
            if record.state is not TaskState.LOST:
                record = transition(record, TaskState.LOST, now)
                self._persist(record)
                self.tasks[task_id] = record
            self.outbox.note("task_lost_received", task_id=task_id, classification="permanent")
            self.on_task_lost(task_id, now, classification="permanent")
        self.outbox.note(
            "framework_recovered",
            tasks=len(self.tasks),
            queued=len(recovered.queued),
            lost=len(recovered.lost),
        )


def _log_notifier(event: dict) -> None:
    log.warning("administrator notification: %s", event)


class CollectingNotifier:
    """Notifier sink that keeps events in memory (tests, dashboards)."""

    def __init__(self):
        self.events: list[dict] = []

    def __call__(self, event: dict) -> None:
        self.events.append(event)


class WebhookNotifier:
    """POSTs each event as JSON to an operator-supplied URL.

    Fire-and-forget on a daemon thread so the scheduler loop never
    blocks on a slow endpoint; delivery failures are logged, not raised.
    """

    def __init__(self, url: str, timeout: float = 5.0):
        self.url = url
        self.timeout = timeout

    def _post(self, event: dict) -> None:
        import json
        import urllib.request

        request = urllib.request.Request(
            self.url,
            data=json.dumps(event, sort_keys=True).encode(),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        try:
            urllib.request.urlopen(request, timeout=self.timeout).close()
        except OSError as exc:
            log.warning("webhook notification to %s failed: %s", self.url, exc)

    def __call__(self, event: dict) -> None:
        import threading

        threading.Thread(target=self._post, args=(event,), daemon=True).start()
