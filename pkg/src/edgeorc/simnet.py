"""Deterministic simulated network and clock.

Runs every tier in one process under virtual time: messages are
delivered with a configurable delay (and optional seeded loss), link
partitions drop anything crossing the cut, node crashes erase volatile
state while per-host disks survive, address changes and timer fires
poke the affected nodes.  The whole run is a pure function of
(seed, scenario): identical inputs produce byte-identical traces.

Per tick, in order: scheduled events fire in (tick, insertion) order —
deliveries invoke `handle`, faults mutate the world — then every live
node's `on_tick` runs in sorted node-id order, then the built-in
invariant sweeps record conservation and duplicate-executor findings.
Node handlers return effects (messages to send, trace notes, spawn and
restart requests); the simulator is the only thing that touches the
network or the process table.

Hosts group nodes into failure domains: a gateway and its proxy agents
share a host (and its disk), so crashing the host takes all of them
down while the device — its own host — keeps executing.  Events that
name a host expand to its members at fire time.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field, replace

from . import codec, messages
from .config import SystemConfig
from .domain import AttributeSet, ResourceVector, RuntimeKind, TaskSpec
from .executor import DeviceRuntime
from .gateway import ExposurePolicy, Gateway
from .master import Master
from .messages import Message, Note, RestartNode, Send, SpawnNode
from .persistence import MemoryStore
from .scheduler import CollectingNotifier, Scheduler


class PastTick(Exception):
    pass


class MalformedScenario(Exception):
    pass


DELIVER = "deliver"
PARTITION_START = "partition-start"
PARTITION_END = "partition-end"
CRASH = "crash"
RESTART = "restart"
ADDRESS_CHANGE = "address-change"
TIMER_FIRE = "timer-fire"

_EVENT_KINDS = frozenset(
    {DELIVER, PARTITION_START, PARTITION_END, CRASH, RESTART, ADDRESS_CHANGE, TIMER_FIRE}
)


@dataclass(frozen=True)
class SimEvent:
    at: int
    kind: str
    node: "str | None" = None
    nodes: tuple = ()
    message: "Message | None" = None

    def __post_init__(self):
        if self.kind not in _EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        object.__setattr__(self, "nodes", tuple(self.nodes))


def _encode_sim_event(e: SimEvent) -> dict:
    return {
        "at": e.at,
        "event": e.kind,
        "node": e.node,
        "nodes": list(e.nodes),
        "message": codec.to_wire(e.message) if e.message else None,
    }


@codec._strict
def _decode_sim_event(f: codec._Fields) -> SimEvent:
    message = f.take("message")
    return SimEvent(
        at=f.take("at"),
        kind=f.take("event"),
        node=f.take("node"),
        nodes=tuple(f.take("nodes")),
        message=codec.from_wire(message) if message else None,
    )


codec.register(SimEvent, "sim_event", _encode_sim_event, _decode_sim_event)


@dataclass(frozen=True)
class NodeDecl:
    """One declared node: kind in {master, scheduler, gateway, device}."""

    kind: str
    node_id: str
    gateway_id: "str | None" = None  # devices
    resources: "ResourceVector | None" = None
    attributes: "AttributeSet | None" = None
    runtimes: tuple = ("sim-task",)
    direct: bool = False
    peers: tuple = ()
    exposure_fraction: "float | None" = None

    def __post_init__(self):
        if self.kind not in ("master", "scheduler", "gateway", "device"):
            raise ValueError(f"unknown node kind {self.kind!r}")


def _encode_node_decl(n: NodeDecl) -> dict:
    return {
        "node_kind": n.kind,
        "node_id": n.node_id,
        "gateway_id": n.gateway_id,
        "resources": codec.to_wire(n.resources) if n.resources else None,
        "attributes": codec.to_wire(n.attributes) if n.attributes else None,
        "runtimes": list(n.runtimes),
        "direct": n.direct,
        "peers": list(n.peers),
        "exposure_fraction": n.exposure_fraction,
    }


@codec._strict
def _decode_node_decl(f: codec._Fields) -> NodeDecl:
    resources = f.take("resources")
    attributes = f.take("attributes")
    return NodeDecl(
        kind=f.take("node_kind"),
        node_id=f.take("node_id"),
        gateway_id=f.take("gateway_id"),
        resources=codec.from_wire(resources) if resources else None,
        attributes=codec.from_wire(attributes) if attributes else None,
        runtimes=tuple(f.take("runtimes")),
        direct=f.take("direct"),
        peers=tuple(f.take("peers")),
        exposure_fraction=f.take("exposure_fraction"),
    )


codec.register(NodeDecl, "node_decl", _encode_node_decl, _decode_node_decl)


@dataclass(frozen=True)
class WorkItem:
    at: int
    scheduler_id: str
    spec: TaskSpec


def _encode_work_item(w: WorkItem) -> dict:
    return {"at": w.at, "scheduler_id": w.scheduler_id, "spec": codec.to_wire(w.spec)}


@codec._strict
def _decode_work_item(f: codec._Fields) -> WorkItem:
    return WorkItem(
        at=f.take("at"), scheduler_id=f.take("scheduler_id"), spec=codec.from_wire(f.take("spec"))
    )


codec.register(WorkItem, "work_item", _encode_work_item, _decode_work_item)


@dataclass(frozen=True)
class Scenario:
    seed: int
    topology: tuple = ()  # NodeDecl
    faults: tuple = ()  # SimEvent
    workload: tuple = ()  # WorkItem
    assertions: tuple = ()  # names in ASSERTIONS
    max_ticks: int = 100
    delay: int = 1
    loss: float = 0.0
    config: SystemConfig = field(default_factory=SystemConfig)


def _encode_scenario(s: Scenario) -> dict:
    from dataclasses import asdict

    return {
        "seed": s.seed,
        "topology": [codec.to_wire(n) for n in s.topology],
        "faults": [codec.to_wire(e) for e in s.faults],
        "workload": [codec.to_wire(w) for w in s.workload],
        "assertions": list(s.assertions),
        "max_ticks": s.max_ticks,
        "delay": s.delay,
        "loss": s.loss,
        "config": asdict(s.config),
    }


@codec._strict
def _decode_scenario(f: codec._Fields) -> Scenario:
    try:
        config = SystemConfig(**f.take("config"))
    except TypeError as exc:
        raise codec.CodecError(f"scenario: bad config: {exc}") from exc
    return Scenario(
        seed=f.take("seed"),
        topology=tuple(codec.from_wire(n) for n in f.take("topology")),
        faults=tuple(codec.from_wire(e) for e in f.take("faults")),
        workload=tuple(codec.from_wire(w) for w in f.take("workload")),
        assertions=tuple(f.take("assertions")),
        max_ticks=f.take("max_ticks"),
        delay=f.take("delay"),
        loss=f.take("loss"),
        config=config,
    )


codec.register(Scenario, "scenario", _encode_scenario, _decode_scenario)


@dataclass(frozen=True)
class TraceEntry:
    at: int
    seq: int
    event: str
    node: str
    detail: tuple  # sorted (key, value) pairs

    def as_dict(self) -> dict:
        return dict(self.detail)


def _encode_trace_entry(t: TraceEntry) -> dict:
    return {"at": t.at, "seq": t.seq, "event": t.event, "node": t.node, "detail": dict(t.detail)}


@codec._strict
def _decode_trace_entry(f: codec._Fields) -> TraceEntry:
    return TraceEntry(
        at=f.take("at"),
        seq=f.take("seq"),
        event=f.take("event"),
        node=f.take("node"),
        detail=tuple(sorted(f.take("detail").items())),
    )


codec.register(TraceEntry, "trace", _encode_trace_entry, _decode_trace_entry)


class NodeContext:
    """What a node factory gets from its host: the shared disk and the
    current host address."""

    def __init__(self, sim: "Simulation", node_id: str, host: str):
        self.sim = sim
        self.node_id = node_id
        self.host = host

    @property
    def disk(self) -> dict:
        return self.sim.disks[self.host]

    def address(self) -> str:
        return self.sim.addresses[self.host]


@dataclass
class _Slot:
    node_id: str
    host: str
    factory: "object"
    node: "object | None" = None  # None while the process is down


class Simulation:
    def __init__(self, scenario: Scenario, hooks=None):
        self.scenario = scenario
        self.config = scenario.config
        self.rng = random.Random(scenario.seed)
        self.now = 0
        self.slots: dict[str, _Slot] = {}
        self.hosts: dict[str, list[str]] = {}
        self.disks: dict[str, dict] = {}
        self.addresses: dict[str, str] = {}
        # Active cuts keyed by their declared name sets; membership is
        # expanded at delivery time so late-spawned co-located nodes
        # (proxy agents) fall on the right side of the cut.
        self.partitions: dict[tuple, tuple] = {}
        self.trace: list[TraceEntry] = []
        self.conservation_violations: list[str] = []
        self.executor_overlaps: list[str] = []
        self.hooks = dict(hooks or {})  # tick -> [callable(sim)]
        self._started = False
        self._queue: list[tuple[int, int, SimEvent]] = []
        self._insert_seq = 0
        self._trace_seq = 0
        self._addr_seq = 0
        self.notifiers: dict[str, CollectingNotifier] = {}
        self._build(scenario)

    # -- construction -------------------------------------------------------------

    def _build(self, scenario: Scenario):
        declared = {decl.node_id for decl in scenario.topology}
        for decl in scenario.topology:
            if decl.kind == "device" and not decl.direct and decl.gateway_id not in declared:
                raise MalformedScenario(f"device {decl.node_id} references unknown gateway")
        masters = [d.node_id for d in scenario.topology if d.kind == "master"]
        master_id = masters[0] if masters else "master"
        for decl in scenario.topology:
            self._declare(decl, master_id)
        for item in scenario.workload:
            if item.scheduler_id not in declared:
                raise MalformedScenario(f"workload targets unknown scheduler {item.scheduler_id}")
            self._insert_seq += 1
            msg = Message(
                kind=messages.SUBMIT,
                sender="operator",
                to=item.scheduler_id,
                seq=self._insert_seq,
                sent_at=item.at,
                fields={"spec": codec.to_wire(item.spec)},
            )
            self._schedule(SimEvent(at=item.at, kind=DELIVER, message=msg))
        # Proxies come into being at runtime under a fixed naming scheme,
        # so fault schedules may legitimately reference them up front.
        known = set(declared) | {"cloud", "operator"}
        known |= {
            f"{d.node_id}.agent" for d in scenario.topology if d.kind == "device"
        }
        for event in scenario.faults:
            for named in (event.node, *event.nodes):
                if named is not None and named not in known:
                    raise MalformedScenario(f"fault references unknown node {named}")
            self._schedule(event)

    def _declare(self, decl: NodeDecl, master_id: str):
        config = self.config
        if decl.kind == "master":
            host = "cloud"

            def factory(ctx, node_id=decl.node_id):
                store = ctx.disk.setdefault("store", MemoryStore())
                return Master(node_id=node_id, config=config, store=store, now=self.now)

        elif decl.kind == "scheduler":
            host = "cloud"
            notifier = CollectingNotifier()
            self.notifiers[decl.node_id] = notifier

            def factory(ctx, node_id=decl.node_id):
                store = ctx.disk.setdefault("store", MemoryStore())
                return Scheduler(
                    node_id=node_id,
                    master_id=master_id,
                    config=config,
                    store=store,
                    notifier=notifier,
                    now=self.now,
                )

        elif decl.kind == "gateway":
            host = decl.node_id
            exposure = ExposurePolicy(
                decl.exposure_fraction
                if decl.exposure_fraction is not None
                else config.exposure_fraction
            )
            peers = decl.peers

            def factory(ctx, node_id=decl.node_id):
                return Gateway(
                    node_id=node_id,
                    master_id=master_id,
                    config=config,
                    disk=ctx.disk,
                    peers=peers,
                    exposure=exposure,
                    address=ctx.address(),
                    host_probe=self.is_up,
                )

        else:  # device
            host = decl.node_id
            resources = decl.resources if decl.resources is not None else ResourceVector(
                cpus=2.0, mem_mb=1024, disk_mb=1024
            )
            attributes = decl.attributes if decl.attributes is not None else AttributeSet.of({})
            runtimes = frozenset(RuntimeKind(r) for r in decl.runtimes)
            gateway_id = decl.gateway_id
            direct = decl.direct

            def factory(ctx, node_id=decl.node_id):
                return DeviceRuntime(
                    node_id=node_id,
                    resources=resources,
                    attributes=attributes,
                    config=config,
                    gateway_id=gateway_id,
                    master_id=master_id,
                    direct=direct,
                    runtimes=runtimes,
                )

        self._add_slot(decl.node_id, host, factory)

    def _add_slot(self, node_id: str, host: str, factory):
        self.hosts.setdefault(host, [])
        if node_id not in self.hosts[host]:
            self.hosts[host].append(node_id)
        self.disks.setdefault(host, {})
        self.addresses.setdefault(host, f"addr:{host}")
        self.slots[node_id] = _Slot(node_id=node_id, host=host, factory=factory)

    # -- world introspection ----------------------------------------------------------

    def is_up(self, node_id: str) -> bool:
        slot = self.slots.get(node_id)
        return slot is not None and slot.node is not None

    def node(self, node_id: str):
        slot = self.slots.get(node_id)
        return slot.node if slot else None

    def nodes_of_type(self, cls) -> list:
        return [
            slot.node
            for _, slot in sorted(self.slots.items())
            if slot.node is not None and isinstance(slot.node, cls)
        ]

    def _members(self, name: str) -> list[str]:
        """A host name expands to its member nodes; a node name is itself."""
        if name in self.hosts:
            return list(self.hosts[name])
        return [name]

    def reachable(self, a: str, b: str) -> bool:
        for names in self.partitions.values():
            members = set()
            for name in names:
                members.update(self._members(name))
            if (a in members) != (b in members):
                return False
        return True

    # -- event machinery ------------------------------------------------------------------

    def _schedule(self, event: SimEvent):
        self._insert_seq += 1
        heapq.heappush(self._queue, (event.at, self._insert_seq, event))

    def inject(self, event: SimEvent):
        """Merge an event into the running schedule; the past is closed."""
        if event.at < self.now:
            raise PastTick(f"cannot inject at {event.at}, now is {self.now}")
        self._schedule(event)

    def _record(self, at: int, event: str, node: str, detail: "dict | None" = None):
        self._trace_seq += 1
        self.trace.append(
            TraceEntry(
                at=at,
                seq=self._trace_seq,
                event=event,
                node=node,
                detail=tuple(sorted((detail or {}).items())),
            )
        )

    def _apply_effects(self, effects, origin: str):
        for effect in effects:
            if isinstance(effect, Send):
                self._send(effect.message)
            elif isinstance(effect, Note):
                self._record(self.now, effect.kind, effect.node, effect.as_dict())
            elif isinstance(effect, SpawnNode):
                self._spawn(effect)
            elif isinstance(effect, RestartNode):
                self._restart_process(effect.node_id)
            else:
                raise TypeError(f"unknown effect from {origin}: {effect!r}")

    def _send(self, msg: Message):
        if self.scenario.loss > 0 and self.rng.random() < self.scenario.loss:
            self._record(self.now, "message_lost", msg.sender, {"kind": msg.kind, "to": msg.to})
            return
        self._schedule(SimEvent(at=self.now + self.scenario.delay, kind=DELIVER, message=msg))

    def _spawn(self, effect: SpawnNode):
        existing = self.slots.get(effect.node_id)
        if existing is not None:
            existing.factory = effect.factory
            if existing.node is not None:
                self._record(self.now, "spawn_ignored", effect.node_id, {"reason": "already-up"})
                return
            self._restart_process(effect.node_id)
            return
        self._add_slot(effect.node_id, effect.host, effect.factory)
        self._start_process(self.slots[effect.node_id])

    def _start_process(self, slot: _Slot):
        ctx = NodeContext(self, slot.node_id, slot.host)
        slot.node = slot.factory(ctx)
        self._record(self.now, "process_started", slot.node_id)
        self._apply_effects(slot.node.on_start(self.now), slot.node_id)

    def _restart_process(self, node_id: str):
        slot = self.slots.get(node_id)
        if slot is None:
            self._record(self.now, "restart_ignored", node_id, {"reason": "unknown"})
            return
        if slot.node is not None:
            self._record(self.now, "restart_ignored", node_id, {"reason": "already-up"})
            return
        self._start_process(slot)

    # -- fault application ---------------------------------------------------------------------

    def _apply_event(self, event: SimEvent):
        if event.kind == DELIVER:
            self._deliver(event.message)
        elif event.kind == PARTITION_START:
            key = tuple(sorted(event.nodes))
            self.partitions[key] = key
            members = set()
            for name in key:
                members.update(self._members(name))
            self._record(self.now, "partition_start", "sim", {"nodes": ",".join(sorted(members))})
        elif event.kind == PARTITION_END:
            key = tuple(sorted(event.nodes))
            self.partitions.pop(key, None)
            members = set()
            for name in key:
                members.update(self._members(name))
            self._record(self.now, "partition_end", "sim", {"nodes": ",".join(sorted(members))})
        elif event.kind == CRASH:
            for node_id in self._members(event.node):
                slot = self.slots.get(node_id)
                if slot is not None and slot.node is not None:
                    slot.node = None
                    self._record(self.now, "process_crashed", node_id)
        elif event.kind == RESTART:
            for node_id in self._members(event.node):
                self._restart_process(node_id)
        elif event.kind == ADDRESS_CHANGE:
            host = event.node if event.node in self.hosts else self.slots[event.node].host
            self._addr_seq += 1
            self.addresses[host] = f"addr:{host}:{self._addr_seq}"
            self._record(self.now, "address_changed", host, {"address": self.addresses[host]})
            for node_id in self.hosts[host]:
                slot = self.slots[node_id]
                if slot.node is not None and hasattr(slot.node, "on_address_change"):
                    self._apply_effects(
                        slot.node.on_address_change(self.addresses[host], self.now), node_id
                    )
        elif event.kind == TIMER_FIRE:
            slot = self.slots.get(event.node)
            if slot is not None and slot.node is not None:
                self._apply_effects(slot.node.on_tick(self.now), event.node)

    def _deliver(self, msg: Message):
        slot = self.slots.get(msg.to)
        if slot is None or slot.node is None:
            self._record(
                self.now, "message_dropped", msg.to,
                {"kind": msg.kind, "reason": "down", "sender": msg.sender},
            )
            return
        if not self.reachable(msg.sender, msg.to):
            self._record(
                self.now, "message_dropped", msg.to,
                {"kind": msg.kind, "reason": "partition", "sender": msg.sender},
            )
            return
        # Round-trip through the canonical encoding: what a node handles
        # is exactly what the wire would carry.
        wire = codec.encode_line(msg)
        delivered = codec.decode_line(wire)
        self._record(
            self.now, "delivered", msg.to,
            {"kind": msg.kind, "sender": msg.sender, "seq": msg.seq},
        )
        self._apply_effects(slot.node.handle(delivered, self.now), msg.to)

    # -- invariants ------------------------------------------------------------------------------

    def _sweep_invariants(self):
        for master in self.nodes_of_type(Master):
            for violation in master.conservation_violations():
                self.conservation_violations.append(f"tick {self.now}: {violation}")
        counts: dict[str, int] = {}
        for device in self.nodes_of_type(DeviceRuntime):
            for task_id in device.live_tasks():
                counts[task_id] = counts.get(task_id, 0) + 1
        for task_id in sorted(counts):
            if counts[task_id] > 1:
                self.executor_overlaps.append(f"tick {self.now}: {task_id} x{counts[task_id]}")

    # -- main loop ---------------------------------------------------------------------------------

    def start(self) -> "Simulation":
        if not self._started:
            self._started = True
            for slot_id in sorted(self.slots):
                self._start_process(self.slots[slot_id])
        return self

    def step(self, ticks: int = 1) -> "Simulation":
        """Advance virtual time by `ticks`, processing due events, every
        live node's on_tick, and the invariant sweeps."""
        self.start()
        target = self.now + ticks
        while self.now < target:
            for hook in self.hooks.get(self.now, []):
                hook(self)
            while self._queue and self._queue[0][0] <= self.now:
                _, _, event = heapq.heappop(self._queue)
                self._apply_event(event)
            for node_id in sorted(self.slots):
                slot = self.slots[node_id]
                if slot.node is not None:
                    self._apply_effects(slot.node.on_tick(self.now), node_id)
            self._sweep_invariants()
            self.now += 1
        return self

    def run(self) -> "Simulation":
        return self.step(self.scenario.max_ticks + 1 - self.now)

    # -- results -------------------------------------------------------------------------------------

    def trace_text(self) -> str:
        return "\n".join(codec.encode_line(entry) for entry in self.trace)

    def trace_events(self, event: str) -> list[TraceEntry]:
        return [t for t in self.trace if t.event == event]

    def first_event(self, event: str, **match) -> "TraceEntry | None":
        for entry in self.trace:
            if entry.event != event:
                continue
            detail = entry.as_dict()
            if all(detail.get(k) == v for k, v in match.items()):
                return entry
        return None

    def check_assertions(self) -> dict[str, list[str]]:
        failures = {}
        for name in self.scenario.assertions:
            checker = ASSERTIONS.get(name)
            if checker is None:
                failures[name] = [f"unknown assertion {name!r}"]
                continue
            problems = checker(self)
            if problems:
                failures[name] = problems
        return failures


def run_scenario(scenario: Scenario, hooks=None) -> Simulation:
    """Run a scenario to completion and return the simulation with its
    trace, final node states, and invariant findings."""
    return Simulation(scenario, hooks=hooks).run()


# -- named assertions (scenario files / CI runner) -------------------------------


def _assert_conservation(sim: Simulation) -> list[str]:
    return list(sim.conservation_violations)


def _assert_single_executor(sim: Simulation) -> list[str]:
    return list(sim.executor_overlaps)


def _assert_no_cross_partition(sim: Simulation) -> list[str]:
    """Independent re-check from the trace alone: replay partition
    start/end entries and verify no delivery ever crossed an active cut."""
    problems = []
    active: list[frozenset] = []
    for entry in sim.trace:
        detail = entry.as_dict()
        if entry.event == "partition_start":
            active.append(frozenset(detail["nodes"].split(",")))
        elif entry.event == "partition_end":
            members = frozenset(detail["nodes"].split(","))
            if members in active:
                active.remove(members)
        elif entry.event == "delivered":
            sender, receiver = detail["sender"], entry.node
            for cut in active:
                if (sender in cut) != (receiver in cut):
                    problems.append(
                        f"tick {entry.at}: {detail['kind']} {sender}->{receiver} crossed a cut"
                    )
    return problems


def _assert_workload_terminal(sim: Simulation) -> list[str]:
    problems = []
    for scheduler in sim.nodes_of_type(Scheduler):
        for task_id, record in sorted(scheduler.tasks.items()):
            if record.state.value not in ("finished", "failed", "killed", "lost"):
                if record.state.value == "queued":
                    problems.append(f"{task_id} still queued")
                elif record.state.value in ("staging", "running"):
                    problems.append(f"{task_id} still {record.state.value}")
    return problems


ASSERTIONS = {
    "conservation": _assert_conservation,
    "single_live_executor": _assert_single_executor,
    "no_cross_partition_delivery": _assert_no_cross_partition,
    "workload_terminal": _assert_workload_terminal,
}
