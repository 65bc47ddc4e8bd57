"""Cloud-tier controller.

Registers agents, maintains the abstract resource pool, emits
round-robin offers to framework schedulers, tracks task status,
classifies disconnections as transient or permanent, and runs scout
probes that hold resources while devices report their sufferance
metric.

The master is one logical event loop: every mutation happens while
processing a single message or timer tick, handlers are deterministic
functions of (state, message), and agent/task records are persisted
before any message announcing their new state leaves the node.

Failure detection: an agent is Suspect after `suspect_after_misses`
silent heartbeat periods.  While suspect, classification runs each
tick — a correlated wave of suspicions within one window reads as a
master-side or network blip (transient); past the adaptive timeout, an
agent whose recovery history says it usually comes back stays
transient, otherwise it is declared permanently gone.  Only at that
declaration do its tasks become Lost; transient losses carry a grace
period so the scheduler can delay requeueing while the original
execution resurfaces.
"""

from __future__ import annotations

import logging
import math
import statistics
from dataclasses import dataclass, field, replace
from enum import Enum

from . import codec, messages
from .config import SystemConfig
from .domain import (
    AGENT_ID_ATTR,
    AttributeSet,
    ResourceVector,
    TaskRecord,
    TaskState,
    transition,
)
from .messages import Outbox
from .persistence import KIND_AGENT, KIND_TASK, MemoryStore

log = logging.getLogger(__name__)


class DuplicateRegistration(Exception):
    pass


class UnknownAgent(Exception):
    pass


class UnknownTask(Exception):
    pass


class NotSuspect(Exception):
    pass


class AgentHeld(Exception):
    pass


class DisconnectClass(str, Enum):
    TRANSIENT = "transient"
    PERMANENT = "permanent"
    UNDETERMINED = "undetermined"


CONNECTED = "connected"
SUSPECT = "suspect"
DISCONNECTED = "disconnected"


@dataclass(frozen=True)
class Liveness:
    kind: str
    since: int

    def __post_init__(self):
        if self.kind not in (CONNECTED, SUSPECT, DISCONNECTED):
            raise ValueError(f"bad liveness kind {self.kind!r}")


@dataclass
class AgentRecord:
    """The master's view of one agent: capacity, context, and history."""

    agent_id: str
    gateway_id: str
    advertised: ResourceVector
    attributes: AttributeSet
    allocated: ResourceVector
    liveness: Liveness
    failure_history: tuple = ()  # (tick, event) pairs
    recovery_durations: tuple = ()  # tick spans of past recoveries
    address: str = ""
    last_heartbeat: int = 0
    last_failure_at: "int | None" = None

    def __post_init__(self):
        if not self.allocated.fits_in(self.advertised):
            raise ValueError("allocated must fit within advertised")

    def unallocated(self) -> ResourceVector:
        return self.advertised.subtract(self.allocated)


def _encode_agent_record(a: AgentRecord) -> dict:
    return {
        "agent_id": a.agent_id,
        "gateway_id": a.gateway_id,
        "advertised": codec.to_wire(a.advertised),
        "attributes": codec.to_wire(a.attributes),
        "allocated": codec.to_wire(a.allocated),
        "liveness": {"state": a.liveness.kind, "since": a.liveness.since},
        "failure_history": [[t, e] for t, e in a.failure_history],
        "recovery_durations": list(a.recovery_durations),
        "address": a.address,
        "last_heartbeat": a.last_heartbeat,
        "last_failure_at": a.last_failure_at,
    }


@codec._strict
def _decode_agent_record(f: codec._Fields) -> AgentRecord:
    liveness = f.take("liveness")
    return AgentRecord(
        agent_id=f.take("agent_id"),
        gateway_id=f.take("gateway_id"),
        advertised=codec.from_wire(f.take("advertised")),
        attributes=codec.from_wire(f.take("attributes")),
        allocated=codec.from_wire(f.take("allocated")),
        liveness=Liveness(kind=liveness["state"], since=liveness["since"]),
        failure_history=tuple((t, e) for t, e in f.take("failure_history")),
        recovery_durations=tuple(f.take("recovery_durations")),
        address=f.take("address"),
        last_heartbeat=f.take("last_heartbeat"),
        last_failure_at=f.take("last_failure_at"),
    )


codec.register(AgentRecord, "agent_record", _encode_agent_record, _decode_agent_record)


@dataclass(frozen=True)
class Offer:
    """A time-limited grant of an agent's unallocated resources."""

    offer_id: str
    agent_id: str
    granted: ResourceVector
    attributes: AttributeSet
    issued_at: int
    ttl: int

    def expired(self, now: int) -> bool:
        return now > self.issued_at + self.ttl


def _encode_offer(o: Offer) -> dict:
    return {
        "offer_id": o.offer_id,
        "agent_id": o.agent_id,
        "granted": codec.to_wire(o.granted),
        "attributes": codec.to_wire(o.attributes),
        "issued_at": o.issued_at,
        "ttl": o.ttl,
    }


@codec._strict
def _decode_offer(f: codec._Fields) -> Offer:
    return Offer(
        offer_id=f.take("offer_id"),
        agent_id=f.take("agent_id"),
        granted=codec.from_wire(f.take("granted")),
        attributes=codec.from_wire(f.take("attributes")),
        issued_at=f.take("issued_at"),
        ttl=f.take("ttl"),
    )


codec.register(Offer, "offer", _encode_offer, _decode_offer)


@dataclass(frozen=True)
class ProbeResult:
    agent_id: str
    metric: "float | None"
    responded: bool
    rtt: int

    def __post_init__(self):
        if self.responded != (self.metric is not None):
            raise ValueError("metric must be present iff the agent responded")


@dataclass
class _ProbeState:
    probe_id: str
    sketch: ResourceVector
    scheduler_id: "str | None"
    started_at: int
    expires: int
    pending: set = field(default_factory=set)
    results: dict = field(default_factory=dict)


def adaptive_timeout(history, base: int, k: int = 2) -> int:
    """Suspicion timeout: the base when there is no history, else at
    least k times the median observed recovery span."""
    if base <= 0:
        raise ValueError("base timeout must be positive")
    history = list(history)
    if not history:
        return base
    return max(base, math.ceil(k * statistics.median(history)))


class Master:
    def __init__(
        self,
        node_id: str = "master",
        config: SystemConfig = SystemConfig(),
        store=None,
        now: int = 0,
    ):
        self.node_id = node_id
        self.config = config
        self.store = store if store is not None else MemoryStore()
        self.agents: dict[str, AgentRecord] = {}
        self.tasks: dict[str, TaskRecord] = {}
        self.offers: dict[str, tuple[Offer, str]] = {}  # offer_id -> (offer, scheduler)
        self.schedulers: list[str] = []
        self.probes: dict[str, _ProbeState] = {}
        self.completed_probes: dict[str, list[ProbeResult]] = {}
        self.holds: dict[str, str] = {}  # agent_id -> probe_id
        self.probe_metrics: dict[str, float] = {}
        self.archives: dict[str, str] = {}  # task_id -> archive (base64), demo path
        self.outbox = Outbox(node_id)
        self._offer_seq = 0
        self._probe_seq = 0
        self._rr_index = 0
        self._last_classification: dict[str, DisconnectClass] = {}
        self._recover(now)

    # -- restart recovery ----------------------------------------------------

    def _recover(self, now: int):
        """Rebuild from the shared cloud store after a restart.

        Agent records are the master's own writes; task records are the
        framework's (the store is shared cloud state).  Allocations are
        recomputed from the task records rather than trusted, and every
        recovered connected agent is re-verified: suspect until its next
        heartbeat lands.
        """
        agents = self.store.scan(KIND_AGENT)
        tasks = self.store.scan(KIND_TASK)
        if not agents and not tasks:
            return
        for record in agents:
            if record.liveness.kind == CONNECTED:
                record = replace(
                    record,
                    liveness=Liveness(SUSPECT, now),
                    last_heartbeat=now,
                    last_failure_at=None,
                )
            record.allocated = ResourceVector.zero()
            self.agents[record.agent_id] = record
        for record in tasks:
            self.tasks[record.task_id] = record
            if record.state in (TaskState.STAGING, TaskState.RUNNING):
                agent = self.agents.get(record.assigned_agent)
                if agent is not None:
                    self._allocate(agent, record.spec.required)
        self.outbox.note("master_recovered", agents=len(agents), tasks=len(tasks))

    # -- registration --------------------------------------------------------

    def register_agent(
        self,
        agent_id: str,
        advertised: ResourceVector,
        attributes: AttributeSet,
        now: int,
        gateway_id: str = "",
        address: str = "",
        running=(),
        allow_refresh: bool = False,
    ) -> AgentRecord:
        existing = self.agents.get(agent_id)
        if existing is not None and existing.liveness.kind == CONNECTED:
            if not allow_refresh:
                raise DuplicateRegistration(f"agent {agent_id!r} is already connected")
            existing.advertised = advertised
            existing.attributes = attributes
            existing.address = address
            existing.last_heartbeat = now
            self._reconcile_running(existing, running, now)
            self._persist_agent(existing)
            self.outbox.note("agent_reregistered", agent_id=agent_id, refresh=True)
            return existing

        if existing is not None:
            # Recovery of a suspect/disconnected agent: history survives,
            # the recovery span feeds the adaptive timeout.
            if existing.last_failure_at is not None:
                span = now - existing.last_failure_at
                existing.recovery_durations = tuple(existing.recovery_durations) + (span,)
                existing.recovery_durations = existing.recovery_durations[-20:]
            existing.advertised = advertised
            existing.attributes = attributes
            existing.address = address
            existing.liveness = Liveness(CONNECTED, now)
            existing.last_heartbeat = now
            existing.last_failure_at = None
            existing.failure_history = tuple(existing.failure_history) + ((now, "reregistered"),)
            record = existing
            re_registration = True
        else:
            record = AgentRecord(
                agent_id=agent_id,
                gateway_id=gateway_id,
                advertised=advertised,
                attributes=attributes,
                allocated=ResourceVector.zero(),
                liveness=Liveness(CONNECTED, now),
                address=address,
                last_heartbeat=now,
            )
            self.agents[agent_id] = record
            re_registration = False
        self._last_classification.pop(agent_id, None)
        self._reconcile_running(record, running, now)
        self._persist_agent(record)
        self.outbox.note("agent_registered", agent_id=agent_id, re=re_registration)
        return record

    def _reconcile_running(self, agent: AgentRecord, running, now: int, grace: int = 3):
        """Square the agent's claimed running set with the master's view.

        Tasks the master thought active here but the agent no longer has
        are Lost; tasks the agent still runs but the master has given up
        on are either resurrected (loss not yet re-dispatched) or killed
        as stale copies.  Placements younger than `grace` ticks are left
        alone — the launch may still be in flight.
        """
        claimed = {task_id: state for task_id, state in running}
        for task_id in sorted(self.tasks):
            record = self.tasks[task_id]
            if record.assigned_agent == agent.agent_id and record.state in (
                TaskState.STAGING,
                TaskState.RUNNING,
            ):
                if task_id not in claimed and now - record.state_history[-1][1] > grace:
                    self._transition_task(
                        record, TaskState.LOST, now, classification="permanent", reason="executor-died"
                    )
                elif (
                    record.state is TaskState.STAGING
                    and claimed.get(task_id) == TaskState.RUNNING.value
                ):
                    # the running report went missing; the agent's claim
                    # carries the truth
                    self._transition_task(record, TaskState.RUNNING, now, agent=agent.agent_id)
        for task_id in sorted(claimed):
            record = self.tasks.get(task_id)
            if record is None:
                self.outbox.send(agent.agent_id, messages.KILL, now, task_id=task_id)
                self.outbox.note("stale_execution_killed", agent_id=agent.agent_id, task_id=task_id)
                continue
            if record.state in (TaskState.STAGING, TaskState.RUNNING):
                if record.assigned_agent == agent.agent_id:
                    continue  # adopted: still where we thought
                self.outbox.send(agent.agent_id, messages.KILL, now, task_id=task_id)
                self.outbox.note("stale_execution_killed", agent_id=agent.agent_id, task_id=task_id)
            elif record.state is TaskState.LOST:
                self._resurrect(record, agent, now)
            else:
                # Queued again (grace expired) or already terminal:
                # the surviving execution is stale.
                self.outbox.send(agent.agent_id, messages.KILL, now, task_id=task_id)
                self.outbox.note("stale_execution_killed", agent_id=agent.agent_id, task_id=task_id)

    def _resurrect(self, record: TaskRecord, agent: AgentRecord, now: int):
        """Re-adopt a lost task that surfaced alive with its agent: the
        requeue it would have gotten is satisfied on the spot."""
        record = transition(record, TaskState.QUEUED, now)
        record = transition(record, TaskState.STAGING, now, agent=agent.agent_id)
        record = transition(record, TaskState.RUNNING, now)
        self.tasks[record.task_id] = record
        self._allocate(agent, record.spec.required)
        self._persist_agent(agent)
        self.outbox.note("task_resurrected", task_id=record.task_id, agent_id=agent.agent_id)
        self._broadcast_status(record, now, reason="resurfaced")

    # -- offers ----------------------------------------------------------------

    def make_offers(self, now: int, policy=None) -> list[Offer]:
        """Offer each connected agent's free remainder to one scheduler.

        The default policy rotates schedulers round-robin per agent; at
        most one offer is outstanding per agent, and a probed (held)
        agent is offered only to the scheduler the probe was run for.
        """
        if not self.schedulers:
            return []
        offered_agents = {offer.agent_id for offer, _ in self.offers.values()}
        free_by_agent: dict[str, ResourceVector] = {}
        for agent_id in sorted(self.agents):
            agent = self.agents[agent_id]
            if agent.liveness.kind != CONNECTED or agent_id in offered_agents:
                continue
            free = agent.unallocated()
            if free.is_zero():
                continue
            free_by_agent[agent_id] = free

        if policy is not None:
            assignment = policy(dict(free_by_agent), tuple(self.schedulers))
        else:
            assignment = {}
            for agent_id in free_by_agent:
                hold = self.holds.get(agent_id)
                if hold is not None:
                    holder = self.probes[hold].scheduler_id
                    if holder is None:
                        continue  # held for an out-of-band probe: offer no one
                    assignment[agent_id] = holder
                else:
                    assignment[agent_id] = self.schedulers[self._rr_index % len(self.schedulers)]
                    self._rr_index += 1

        made = []
        for agent_id, scheduler_id in assignment.items():
            agent = self.agents[agent_id]
            self._offer_seq += 1
            offer = Offer(
                offer_id=f"o{self._offer_seq}",
                agent_id=agent_id,
                granted=free_by_agent[agent_id],
                attributes=agent.attributes.merged({AGENT_ID_ATTR: agent_id}),
                issued_at=now,
                ttl=self.config.offer_ttl,
            )
            self.offers[offer.offer_id] = (offer, scheduler_id)
            made.append(offer)
            self.outbox.send(
                scheduler_id,
                messages.OFFER,
                now,
                offer=codec.to_wire(offer),
                probe_metric=self.probe_metrics.get(agent_id),
            )
        return made

    def _expire_offers(self, now: int):
        for offer_id in sorted(self.offers):
            offer, _scheduler = self.offers[offer_id]
            if offer.expired(now):
                del self.offers[offer_id]
                self.outbox.note("offer_expired", offer_id=offer_id, agent_id=offer.agent_id)

    # -- task status -------------------------------------------------------------

    def record_status(
        self,
        agent_id: str,
        task_id: str,
        state: TaskState,
        now: int,
        exit_code=None,
        reason=None,
    ):
        if agent_id not in self.agents:
            raise UnknownAgent(agent_id)
        record = self.tasks.get(task_id)
        if record is None:
            raise UnknownTask(task_id)
        state = TaskState(state)
        if record.assigned_agent is not None and record.assigned_agent != agent_id:
            # A stale copy reporting from a past life; make sure it stops.
            self.outbox.send(agent_id, messages.KILL, now, task_id=task_id)
            self.outbox.note("stale_status_ignored", agent_id=agent_id, task_id=task_id)
            return
        if record.state is state:
            return
        if record.state is TaskState.STAGING and state in (TaskState.FINISHED, TaskState.FAILED):
            # The running report was lost on the wire; a terminal report
            # implies it happened.
            self._transition_task(record, TaskState.RUNNING, now, agent=agent_id)
            record = self.tasks[task_id]
        from .domain import LEGAL_TRANSITIONS

        if state not in LEGAL_TRANSITIONS[record.state]:
            self.outbox.note(
                "status_ignored",
                task_id=task_id,
                have=record.state.value,
                got=state.value,
            )
            return
        self._transition_task(record, state, now, agent=agent_id, exit_code=exit_code, reason=reason)

    def _transition_task(
        self,
        record: TaskRecord,
        state: TaskState,
        now: int,
        agent: "str | None" = None,
        exit_code=None,
        reason=None,
        classification=None,
    ):
        previous_agent = record.assigned_agent
        record = transition(record, state, now, agent=agent)
        self.tasks[record.task_id] = record
        if state is TaskState.LOST:
            self.outbox.note(
                "task_lost_sent",
                task_id=record.task_id,
                classification=classification or "permanent",
            )
        released = state in (TaskState.FINISHED, TaskState.FAILED, TaskState.LOST, TaskState.KILLED)
        if released and previous_agent is not None:
            holder = self.agents.get(previous_agent)
            if holder is not None:
                self._release(holder, record.spec.required)
                self._persist_agent(holder)
        grace = None
        if classification is not None and previous_agent is not None:
            grace = self.adaptive_timeout_for(previous_agent)
        self._broadcast_status(
            record,
            now,
            exit_code=exit_code,
            reason=reason,
            classification=classification,
            grace=grace,
            agent_id=previous_agent if record.assigned_agent is None else record.assigned_agent,
        )

    def _broadcast_status(
        self, record: TaskRecord, now: int, exit_code=None, reason=None, classification=None,
        grace=None, agent_id=None,
    ):
        for scheduler_id in self.schedulers:
            self.outbox.send(
                scheduler_id,
                messages.STATUS,
                now,
                task_id=record.task_id,
                agent_id=agent_id if agent_id is not None else record.assigned_agent,
                state=record.state.value,
                exit_code=exit_code,
                reason=reason,
                classification=classification,
                grace=grace,
            )

    def _allocate(self, agent: AgentRecord, amount: ResourceVector):
        allocated = agent.allocated + amount
        if not allocated.fits_in(agent.advertised):
            raise ValueError(f"allocation exceeds advertised capacity on {agent.agent_id}")
        agent.allocated = allocated

    def _release(self, agent: AgentRecord, amount: ResourceVector):
        if amount.fits_in(agent.allocated):
            agent.allocated = agent.allocated.subtract(amount)
        else:
            # Defensive: never release more than held.
            agent.allocated = ResourceVector.zero()
            log.warning("release underflow on %s", agent.agent_id)

    # -- failure detection -------------------------------------------------------

    def adaptive_timeout_for(self, agent_id: str) -> int:
        agent = self.agents[agent_id]
        return adaptive_timeout(
            agent.recovery_durations, self.config.base_timeout, self.config.timeout_multiplier
        )

    def classify_disconnect(
        self, agent_id: str, now: int, window: "int | None" = None, quorum: "float | None" = None
    ) -> DisconnectClass:
        """Decide what a silent agent's silence means.

        Correlated suspicion within one window reads as transient at any
        time; before the adaptive timeout there is otherwise no
        evidence (undetermined); past it, a history of quick recoveries
        keeps the agent transient, anything else is permanent.
        """
        agent = self.agents.get(agent_id)
        if agent is None:
            raise UnknownAgent(agent_id)
        if agent.liveness.kind == CONNECTED:
            raise NotSuspect(agent_id)
        window = window if window is not None else self.config.suspect_window
        quorum = quorum if quorum is not None else self.config.quorum_fraction

        pool = [a for a in self.agents.values() if a.liveness.kind in (CONNECTED, SUSPECT)]
        recent_suspects = [
            a
            for a in pool
            if a.liveness.kind == SUSPECT and now - a.liveness.since <= window
        ]
        if pool and len(recent_suspects) / len(pool) >= quorum:
            return DisconnectClass.TRANSIENT

        timeout = self.adaptive_timeout_for(agent_id)
        started = agent.last_failure_at if agent.last_failure_at is not None else agent.liveness.since
        if now - started <= timeout:
            return DisconnectClass.UNDETERMINED
        history = agent.recovery_durations
        if history and statistics.median(history) < timeout:
            return DisconnectClass.TRANSIENT
        return DisconnectClass.PERMANENT

    def _sweep_liveness(self, now: int):
        for agent_id in sorted(self.agents):
            agent = self.agents[agent_id]
            if agent.liveness.kind == CONNECTED:
                if now - agent.last_heartbeat > self.config.suspect_after:
                    agent.liveness = Liveness(SUSPECT, now)
                    agent.last_failure_at = now
                    agent.failure_history = tuple(agent.failure_history) + ((now, "suspect"),)
                    self._persist_agent(agent)
                    self.outbox.note("agent_suspect", agent_id=agent_id)
            if agent.liveness.kind != SUSPECT:
                continue
            classification = self.classify_disconnect(agent_id, now)
            if not self.config.transient_support and classification is DisconnectClass.TRANSIENT:
                classification = (
                    DisconnectClass.PERMANENT
                    if now - agent.liveness.since > self.adaptive_timeout_for(agent_id)
                    else DisconnectClass.UNDETERMINED
                )
            if self._last_classification.get(agent_id) != classification:
                self._last_classification[agent_id] = classification
                self.outbox.note(
                    "disconnect_classified", agent_id=agent_id, classification=classification.value
                )
            timeout = self.adaptive_timeout_for(agent_id)
            if now - agent.liveness.since > timeout and classification in (
                DisconnectClass.PERMANENT,
                DisconnectClass.TRANSIENT,
            ):
                self._declare_disconnected(agent, classification, now)

    def _declare_disconnected(self, agent: AgentRecord, classification: DisconnectClass, now: int):
        agent.liveness = Liveness(DISCONNECTED, now)
        agent.failure_history = tuple(agent.failure_history) + (
            (now, f"disconnected:{classification.value}"),
        )
        self._persist_agent(agent)
        self.outbox.note(
            "agent_disconnected", agent_id=agent.agent_id, classification=classification.value
        )
        for offer_id in sorted(self.offers):
            offer, _ = self.offers[offer_id]
            if offer.agent_id == agent.agent_id:
                del self.offers[offer_id]
        self._release_hold(agent.agent_id, now)
        for task_id in sorted(self.tasks):
            record = self.tasks[task_id]
            if record.assigned_agent == agent.agent_id and record.state in (
                TaskState.STAGING,
                TaskState.RUNNING,
            ):
                self._transition_task(
                    record,
                    TaskState.LOST,
                    now,
                    classification=classification.value,
                    reason="agent-disconnected",
                )

    # -- probing -------------------------------------------------------------------

    def scout_probe(
        self,
        agent_ids,
        sketch: ResourceVector,
        now: int,
        scheduler_id: "str | None" = None,
    ) -> str:
        """Probe agents with a resource sketch before launching the real
        task.  Probed agents' free resources are held — offered to no one
        but the probing scheduler — until every reply lands or the probe
        times out."""
        agent_ids = sorted(agent_ids)
        for agent_id in agent_ids:
            if agent_id not in self.agents:
                raise UnknownAgent(agent_id)
            if agent_id in self.holds:
                raise AgentHeld(agent_id)
        self._probe_seq += 1
        probe_id = f"p{self._probe_seq}"
        state = _ProbeState(
            probe_id=probe_id,
            sketch=sketch,
            scheduler_id=scheduler_id,
            started_at=now,
            expires=now + self.config.probe_ttl,
        )
        self.probes[probe_id] = state
        for agent_id in agent_ids:
            agent = self.agents[agent_id]
            if agent.liveness.kind == CONNECTED:
                state.pending.add(agent_id)
                self.holds[agent_id] = probe_id
                self.outbox.send(
                    agent_id,
                    messages.PROBE,
                    now,
                    probe_id=probe_id,
                    agent_id=agent_id,
                    sketch=codec.to_wire(sketch),
                )
            else:
                state.results[agent_id] = ProbeResult(
                    agent_id=agent_id, metric=None, responded=False, rtt=self.config.probe_ttl
                )
        self.outbox.note("probe_started", probe_id=probe_id, agents=",".join(agent_ids))
        self._maybe_finish_probe(probe_id, now)
        return probe_id

    def probe_results(self, probe_id: str) -> "list[ProbeResult] | None":
        return self.completed_probes.get(probe_id)

    def _handle_probe_reply(self, msg, now: int):
        probe_id = msg.fields["probe_id"]
        state = self.probes.get(probe_id)
        if state is None:
            return
        agent_id = msg.fields["agent_id"]
        if agent_id not in state.pending:
            return
        state.pending.discard(agent_id)
        value = msg.fields["value"]
        state.results[agent_id] = ProbeResult(
            agent_id=agent_id, metric=value, responded=True, rtt=now - state.started_at
        )
        self.probe_metrics[agent_id] = value
        if self.holds.get(agent_id) == probe_id:
            del self.holds[agent_id]
        self._maybe_finish_probe(probe_id, now)

    def _maybe_finish_probe(self, probe_id: str, now: int):
        state = self.probes.get(probe_id)
        if state is None or state.pending:
            return
        self._finish_probe(state, now)

    def _finish_probe(self, state: _ProbeState, now: int):
        for agent_id in sorted(state.pending):
            state.results[agent_id] = ProbeResult(
                agent_id=agent_id, metric=None, responded=False, rtt=self.config.probe_ttl
            )
            if self.holds.get(agent_id) == state.probe_id:
                del self.holds[agent_id]
        self.completed_probes[state.probe_id] = [
            state.results[a] for a in sorted(state.results)
        ]
        del self.probes[state.probe_id]
        self.outbox.note("probe_complete", probe_id=state.probe_id)
        if state.scheduler_id is not None:
            for result in self.completed_probes[state.probe_id]:
                if result.responded:
                    self.outbox.send(
                        state.scheduler_id,
                        messages.PROBE_REPLY,
                        now,
                        probe_id=state.probe_id,
                        agent_id=result.agent_id,
                        value=result.metric,
                        components={},
                    )

    def _release_hold(self, agent_id: str, now: int):
        probe_id = self.holds.pop(agent_id, None)
        if probe_id is None:
            return
        state = self.probes.get(probe_id)
        if state is not None and agent_id in state.pending:
            state.pending.discard(agent_id)
            state.results[agent_id] = ProbeResult(
                agent_id=agent_id, metric=None, responded=False, rtt=self.config.probe_ttl
            )
            self._maybe_finish_probe(probe_id, now)

    def _sweep_probes(self, now: int):
        for probe_id in sorted(self.probes):
            state = self.probes[probe_id]
            if now >= state.expires:
                self._finish_probe(state, now)

    # -- message loop -----------------------------------------------------------

    def on_start(self, now: int) -> list:
        return self.outbox.drain()

    def on_tick(self, now: int) -> list:
        self._sweep_liveness(now)
        self._expire_offers(now)
        self._sweep_probes(now)
        if now % self.config.offer_period == 0:
            self.make_offers(now)
        return self.outbox.drain()

    def handle(self, msg, now: int) -> list:
        kind = msg.kind
        if kind == messages.REGISTER:
            self._handle_register(msg, now)
        elif kind == messages.HEARTBEAT:
            self._handle_heartbeat(msg, now)
        elif kind == messages.ACCEPT:
            self._handle_accept(msg, now)
        elif kind == messages.DECLINE:
            offer = self.offers.pop(msg.fields["offer_id"], None)
            if offer is not None:
                self.outbox.note("offer_declined", offer_id=msg.fields["offer_id"])
        elif kind == messages.STATUS:
            try:
                self.record_status(
                    agent_id=msg.fields["agent_id"],
                    task_id=msg.fields["task_id"],
                    state=TaskState(msg.fields["state"]),
                    now=now,
                    exit_code=msg.fields.get("exit_code"),
                    reason=msg.fields.get("reason"),
                )
            except (UnknownAgent, UnknownTask) as exc:
                self.outbox.note("status_unknown", error=type(exc).__name__, detail=str(exc))
        elif kind == messages.PROBE_REPLY:
            self._handle_probe_reply(msg, now)
        elif kind == messages.KILL:
            self._handle_kill(msg, now)
        return self.outbox.drain()

    def _handle_register(self, msg, now: int):
        if msg.fields.get("role") == "framework":
            scheduler_id = msg.sender
            if scheduler_id not in self.schedulers:
                self.schedulers.append(scheduler_id)
                self.outbox.note("framework_registered", scheduler_id=scheduler_id)
            # anti-entropy: re-announce any task the framework still
            # believes live but the master has seen further along
            for task_id in msg.fields.get("active", []):
                record = self.tasks.get(task_id)
                if record is not None and record.state not in (
                    TaskState.STAGING,
                    TaskState.RUNNING,
                ):
                    self.outbox.send(
                        scheduler_id,
                        messages.STATUS,
                        now,
                        task_id=task_id,
                        agent_id=record.assigned_agent,
                        state=record.state.value,
                        exit_code=None,
                        reason="resync",
                        classification=None,
                        grace=None,
                    )
            return
        running = [(t, s) for t, s in msg.fields.get("running", [])]
        try:
            self.register_agent(
                agent_id=msg.fields["agent_id"],
                advertised=codec.from_wire(msg.fields["advertised"]),
                attributes=codec.from_wire(msg.fields["attributes"]),
                now=now,
                gateway_id=msg.fields.get("gateway_id", ""),
                address=msg.fields.get("address", ""),
                running=running,
                allow_refresh=True,
            )
        except DuplicateRegistration:
            self.outbox.note("duplicate_registration", agent_id=msg.fields["agent_id"])

    def _handle_heartbeat(self, msg, now: int):
        agent_id = msg.fields["agent_id"]
        agent = self.agents.get(agent_id)
        if agent is None or agent.liveness.kind == DISCONNECTED:
            # No echo: the sender must re-register before it counts.
            self.outbox.note("heartbeat_ignored", agent_id=agent_id)
            return
        agent.last_heartbeat = now
        running = msg.fields.get("running")
        if running is not None:
            self._reconcile_running(agent, [(t, s) for t, s in running], now)
        if agent.liveness.kind == SUSPECT:
            if agent.last_failure_at is not None:
                span = now - agent.last_failure_at
                agent.recovery_durations = (tuple(agent.recovery_durations) + (span,))[-20:]
            agent.liveness = Liveness(CONNECTED, now)
            agent.last_failure_at = None
            agent.failure_history = tuple(agent.failure_history) + ((now, "recovered"),)
            self._last_classification.pop(agent_id, None)
            self._persist_agent(agent)
            self.outbox.note("agent_recovered", agent_id=agent_id)
        self.outbox.send(msg.sender, messages.HEARTBEAT, now, agent_id=agent_id, echo=True)

    def _handle_accept(self, msg, now: int):
        offer_id = msg.fields["offer_id"]
        task_id = msg.fields["task_id"]
        entry = self.offers.get(offer_id)
        if entry is None:
            self.outbox.note("accept_rejected", offer_id=offer_id, reason="unknown-or-expired")
            return
        offer, _scheduler = entry
        if offer.expired(now):
            del self.offers[offer_id]
            self.outbox.note("accept_rejected", offer_id=offer_id, reason="expired")
            return
        spec = codec.from_wire(msg.fields["spec"])
        if not spec.required.fits_in(offer.granted):
            self.outbox.note("accept_rejected", offer_id=offer_id, reason="does-not-fit")
            return
        existing = self.tasks.get(task_id)
        if existing is not None and existing.state not in (
            TaskState.QUEUED,
            TaskState.LOST,
            TaskState.FAILED,
        ):
            self.outbox.note("accept_rejected", offer_id=offer_id, reason="task-active")
            return
        del self.offers[offer_id]
        agent = self.agents[offer.agent_id]
        replica_group = msg.fields.get("replica_group")
        if existing is None:
            record = TaskRecord.create(task_id, spec, now, replica_group=replica_group)
        else:
            record = existing
        if record.state in (TaskState.LOST, TaskState.FAILED):
            record = transition(record, TaskState.QUEUED, now)
        record = transition(record, TaskState.STAGING, now, agent=agent.agent_id)
        self.tasks[task_id] = record
        self._allocate(agent, spec.required)
        self._persist_agent(agent)
        archive = msg.fields.get("archive_b64")
        if archive is not None:
            self.archives[task_id] = archive
        self.outbox.note("task_launched", task_id=task_id, agent_id=agent.agent_id)
        launch_fields = {"task_id": task_id, "spec": codec.to_wire(spec)}
        if archive is not None:
            launch_fields["archive_b64"] = archive
        self.outbox.send(agent.agent_id, messages.LAUNCH, now, **launch_fields)
        self._broadcast_status(record, now)

    def _handle_kill(self, msg, now: int):
        task_id = msg.fields["task_id"]
        record = self.tasks.get(task_id)
        if record is None or record.assigned_agent is None:
            self.outbox.note("kill_noop", task_id=task_id)
            return
        self.outbox.send(record.assigned_agent, messages.KILL, now, task_id=task_id)

    # -- persistence ----------------------------------------------------------------

    def _persist_agent(self, agent: AgentRecord):
        # Task records in the shared store are the framework's writes;
        # the master persists only its agent view and rebuilds its task
        # table (and allocations) from the store on restart.
        self.store.put(KIND_AGENT, agent.agent_id, agent)

    # -- invariants (checked by the simulator every tick) ----------------------------

    def conservation_violations(self) -> list[str]:
        problems = []
        for agent_id in sorted(self.agents):
            agent = self.agents[agent_id]
            try:
                free = agent.advertised.subtract(agent.allocated)
            except Exception as exc:
                problems.append(f"{agent_id}: allocated exceeds advertised ({exc})")
                continue
            if free + agent.allocated != agent.advertised:
                problems.append(f"{agent_id}: allocated + unallocated != advertised")
            granted = ResourceVector.zero()
            for offer, _ in self.offers.values():
                if offer.agent_id == agent_id:
                    granted = granted + offer.granted
            if not granted.fits_in(free):
                problems.append(f"{agent_id}: outstanding offers exceed unallocated capacity")
        return problems
