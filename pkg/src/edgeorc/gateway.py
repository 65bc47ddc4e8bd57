"""Edge-gateway tier.

Discovers edge devices through peer opinion sharing, launches one proxy
agent per device, fractionally exposes aggregated device resources to
the master, checkpoints task metadata so restarted agents re-adopt
still-running executors, and runs the watchdog loop that restarts
stopped agents and re-registers them after address changes or
disconnections.

Discovery keeps one opinion per device in [0, 1], recomputed as the
plain mean of local observations, peer-shared observations, and the
previous opinion (counted as one observation when present); negatively
observed devices (opinion below the avoidance threshold) are excluded
from exposure.  Observation lists travel to peer gateways on a fixed
gossip period.

Proxy agents run on the gateway as supervised co-located processes, one
inbox each, so one device failure maps to one proxy failure.  Each
proxy advertises floor(fraction x device resources) and the device's
attributes verbatim, writes a checkpoint (canonical form, replace-on-
write) after every task state change plus every few ticks, and reports
its liveness into a status blackboard on the gateway's disk that the
watchdog reads — the same host, so plain local state, no network.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from . import codec, messages
from .config import SystemConfig
from .domain import AttributeSet, ResourceVector, TaskState
from .messages import Outbox

log = logging.getLogger(__name__)


class NoData(Exception):
    pass


class AlreadyLaunched(Exception):
    pass


class DeviceAvoided(Exception):
    pass


class CorruptCheckpoint(Exception):
    pass


@dataclass(frozen=True)
class Observation:
    observer_id: str
    subject_id: str
    score: float
    at: int

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("observation score must be in [0, 1]")


def _encode_observation(o: Observation) -> dict:
    return {"observer_id": o.observer_id, "subject_id": o.subject_id, "score": o.score, "at": o.at}


@codec._strict
def _decode_observation(f: codec._Fields) -> Observation:
    return Observation(
        observer_id=f.take("observer_id"),
        subject_id=f.take("subject_id"),
        score=f.take("score"),
        at=f.take("at"),
    )


codec.register(Observation, "observation", _encode_observation, _decode_observation)


@dataclass
class DeviceRecord:
    device_id: str
    resources: ResourceVector
    attributes: AttributeSet
    last_seen: int
    opinion: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.opinion <= 1.0:
            raise ValueError("opinion must be in [0, 1]")


def _encode_device_record(d: DeviceRecord) -> dict:
    return {
        "device_id": d.device_id,
        "resources": codec.to_wire(d.resources),
        "attributes": codec.to_wire(d.attributes),
        "last_seen": d.last_seen,
        "opinion": d.opinion,
    }


@codec._strict
def _decode_device_record(f: codec._Fields) -> DeviceRecord:
    return DeviceRecord(
        device_id=f.take("device_id"),
        resources=codec.from_wire(f.take("resources")),
        attributes=codec.from_wire(f.take("attributes")),
        last_seen=f.take("last_seen"),
        opinion=f.take("opinion"),
    )


codec.register(DeviceRecord, "device_record", _encode_device_record, _decode_device_record)


@dataclass(frozen=True)
class ExposurePolicy:
    """How much of the aggregated device capacity to advertise upward;
    the remainder stays in reserve for local failure handling."""

    fraction: float = 1.0
    reserve_note: str = "held back for local failure handling"

    def __post_init__(self):
        if not 0 < self.fraction <= 1:
            raise ValueError("exposure fraction must be in (0, 1]")


@dataclass(frozen=True)
class Checkpoint:
    """Task metadata an agent persists locally: exactly the tasks it
    believed running when the checkpoint was written."""

    agent_id: str
    running: tuple  # (task_id, spec_hash, executor_state_tag) triples
    written_at: int


def _encode_checkpoint(c: Checkpoint) -> dict:
    return {
        "agent_id": c.agent_id,
        "running": [[t, h, s] for t, h, s in c.running],
        "written_at": c.written_at,
    }


@codec._strict
def _decode_checkpoint(f: codec._Fields) -> Checkpoint:
    return Checkpoint(
        agent_id=f.take("agent_id"),
        running=tuple((t, h, s) for t, h, s in f.take("running")),
        written_at=f.take("written_at"),
    )


codec.register(Checkpoint, "checkpoint", _encode_checkpoint, _decode_checkpoint)


def merge_opinions(local, shared, previous: "float | None", subject: str) -> float:
    """New opinion for `subject`: the mean of every observation of it,
    with the previous opinion counted as one more observation."""
    scores = [o.score for o in local if o.subject_id == subject]
    scores += [o.score for o in shared if o.subject_id == subject]
    if previous is not None:
        scores.append(previous)
    if not scores:
        raise NoData(f"no observations or previous opinion for {subject!r}")
    return sum(scores) / len(scores)


def checkpoint_key(agent_id: str) -> str:
    return f"checkpoint/{agent_id}"


def write_checkpoint(disk: dict, cp: Checkpoint) -> None:
    # Dict assignment models write-temp-then-rename: readers see either
    # the old complete value or the new complete value.
    disk[checkpoint_key(cp.agent_id)] = codec.encode_line(cp)


def load_checkpoint(disk: dict, agent_id: str) -> "Checkpoint | None":
    raw = disk.get(checkpoint_key(agent_id))
    if raw is None:
        return None
    try:
        cp = codec.decode_line(raw)
    except codec.CodecError as exc:
        raise CorruptCheckpoint(str(exc)) from exc
    if not isinstance(cp, Checkpoint):
        raise CorruptCheckpoint(f"expected a checkpoint, got {type(cp).__name__}")
    return cp


@dataclass(frozen=True)
class WatchdogAction:
    kind: str  # "restart" | "reregister" | "reconnect"
    target: str


def _status_key(agent_id: str) -> str:
    return f"agent_status/{agent_id}"


class ProxyAgent:
    """An agent on the gateway representing one edge device.

    Registers with the master advertising the device's scaled resources
    and attributes, forwards launches/kills/probes down to the device,
    forwards status up, checkpoints its running set, and publishes its
    health to the host blackboard for the watchdog.
    """

    def __init__(
        self,
        node_id: str,
        device_id: str,
        gateway_id: str,
        master_id: str,
        advertised: ResourceVector,
        attributes: AttributeSet,
        config: SystemConfig,
        disk: dict,
        address: str = "",
    ):
        self.node_id = node_id
        self.device_id = device_id
        self.gateway_id = gateway_id
        self.master_id = master_id
        self.advertised = advertised
        self.attributes = attributes
        self.config = config
        self.disk = disk
        self.address = address
        self.outbox = Outbox(node_id)
        self.running: dict[str, str] = {}  # task_id -> state tag
        self.spec_hashes: dict[str, str] = {}
        self.registered = False
        self.last_master_echo = 0
        self._reconcile_deadline: "int | None" = None
        self._last_checkpoint = 0

    # -- lifecycle ----------------------------------------------------------

    def on_start(self, now: int) -> list:
        """Recover from the local checkpoint before registering: tasks
        still executing on the device are re-adopted, the rest will be
        reported lost through reconciliation."""
        self.last_master_echo = now
        try:
            cp = load_checkpoint(self.disk, self.node_id)
        except CorruptCheckpoint as exc:
            self.outbox.note("checkpoint_corrupt", error=str(exc))
            self._register(now)
            return self.outbox.drain()
        if cp is None or not cp.running:
            self._register(now)
            return self.outbox.drain()
        self.outbox.note("checkpoint_loaded", tasks=len(cp.running))
        self.running = {task_id: state for task_id, _hash, state in cp.running}
        self.spec_hashes = {task_id: spec_hash for task_id, spec_hash, _state in cp.running}
        self.outbox.send(self.device_id, messages.RECONCILE, now)
        self._reconcile_deadline = now + 2 * self.config.heartbeat_period + 2
        return self.outbox.drain()

    def on_tick(self, now: int) -> list:
        if self._reconcile_deadline is not None and now >= self._reconcile_deadline:
            # Device never answered: nothing survived down there.
            self.outbox.note("reconcile_timeout", dropped=len(self.running))
            self.running = {}
            self._reconcile_deadline = None
            self._register(now)
        if self.registered and now % self.config.heartbeat_period == 0:
            self.outbox.send(
                self.master_id,
                messages.HEARTBEAT,
                now,
                agent_id=self.node_id,
                running=[[t, s] for t, s in sorted(self.running.items())],
            )
        # anti-entropy against lost status reports: periodically re-ask
        # the device what is actually running
        if (
            self.registered
            and self.running
            and self._reconcile_deadline is None
            and now % (4 * self.config.heartbeat_period) == 0
        ):
            self.outbox.send(self.device_id, messages.RECONCILE, now)
        if now - self._last_checkpoint >= self.config.checkpoint_every:
            self._checkpoint(now)
        self._publish_status(now)
        return self.outbox.drain()

    def handle(self, msg, now: int) -> list:
        if msg.kind == messages.LAUNCH:
            task_id = msg.fields["task_id"]
            self.running[task_id] = TaskState.STAGING.value
            self.spec_hashes[task_id] = msg.fields["spec"]["artifact"]["sha256"]
            self._checkpoint(now)
            self.outbox.send(self.device_id, messages.LAUNCH, now, **msg.fields)
        elif msg.kind == messages.KILL:
            self.outbox.send(self.device_id, messages.KILL, now, **msg.fields)
        elif msg.kind == messages.PROBE:
            self.last_master_echo = now
            self.outbox.send(self.device_id, messages.PROBE, now, **msg.fields)
        elif msg.kind == messages.PROBE_REPLY:
            self.outbox.send(self.master_id, messages.PROBE_REPLY, now, **msg.fields)
        elif msg.kind == messages.STATUS:
            self._handle_status(msg, now)
        elif msg.kind == messages.HEARTBEAT and msg.fields.get("echo"):
            self.last_master_echo = now
        elif msg.kind == messages.RECONCILE_REPLY:
            self._handle_reconcile_reply(msg, now)
        elif msg.kind == messages.AGENT_CTL:
            self._handle_ctl(msg, now)
        self._publish_status(now)
        return self.outbox.drain()

    # -- internals -----------------------------------------------------------

    def _register(self, now: int):
        self.outbox.send(
            self.master_id,
            messages.REGISTER,
            now,
            role="agent",
            agent_id=self.node_id,
            gateway_id=self.gateway_id,
            advertised=codec.to_wire(self.advertised),
            attributes=codec.to_wire(self.attributes),
            address=self.address,
            running=[[t, s] for t, s in sorted(self.running.items())],
        )
        # last_master_echo deliberately not touched: only traffic FROM
        # the master proves the link is back.
        self.registered = True
        self.outbox.note("agent_register_sent", agent_id=self.node_id)

    def _handle_status(self, msg, now: int):
        task_id = msg.fields["task_id"]
        state = TaskState(msg.fields["state"])
        if state in (TaskState.STAGING, TaskState.RUNNING):
            self.running[task_id] = state.value
        else:
            self.running.pop(task_id, None)
        self._checkpoint(now)
        fields = dict(msg.fields)
        fields["agent_id"] = self.node_id  # the master knows us, not the device
        self.outbox.send(self.master_id, messages.STATUS, now, **fields)

    def _handle_reconcile_reply(self, msg, now: int):
        alive = {task_id: state for task_id, state in msg.fields["running"]}
        if self._reconcile_deadline is None:
            # steady-state sync: prune tasks the device no longer has
            # (their terminal report was lost); the master's heartbeat
            # reconciliation takes it from here
            stale = sorted(set(self.running) - set(alive))
            recent = {
                t for t in self.running
                if self.running[t] == TaskState.STAGING.value
            }
            for task_id in stale:
                if task_id in recent:
                    continue  # launch may still be in flight
                del self.running[task_id]
                self.outbox.note("running_claim_pruned", task_id=task_id)
            if stale:
                self._checkpoint(now)
            return
        adopted = sorted(set(self.running) & set(alive))
        lost = sorted(set(self.running) - set(alive))
        self.running = {t: alive[t] for t in adopted}
        self._reconcile_deadline = None
        self._checkpoint(now)
        self.outbox.note(
            "checkpoint_recovery", adopted=",".join(adopted), lost=",".join(lost)
        )
        # Registration carries the adopted set; the master reconciles the
        # rest to Lost.
        self._register(now)

    def _handle_ctl(self, msg, now: int):
        action = msg.fields["action"]
        if action == "reregister":
            self.address = msg.fields.get("address", self.address)
            self._register(now)
        elif action == "reconnect":
            gap = now - self.last_master_echo
            if not self.config.transient_support and gap > self.config.base_timeout:
                # The master does not wait for transient disconnections:
                # after this long it has declared us dead, so our copies
                # must not outlive its bookkeeping.
                for task_id in sorted(self.running):
                    self.outbox.send(self.device_id, messages.KILL, now, task_id=task_id)
                    self.outbox.note("self_kill", task_id=task_id)
                self.running = {}
                self._checkpoint(now)
            self._register(now)
        elif action == "update":
            self.advertised = codec.from_wire(msg.fields["advertised"])
            self.attributes = codec.from_wire(msg.fields["attributes"])
            self._register(now)

    def _checkpoint(self, now: int):
        running = tuple(
            (task_id, self.spec_hashes.get(task_id, ""), state)
            for task_id, state in sorted(self.running.items())
        )
        write_checkpoint(self.disk, Checkpoint(agent_id=self.node_id, running=running, written_at=now))
        self._last_checkpoint = now

    def _publish_status(self, now: int):
        self.disk[_status_key(self.node_id)] = {
            "last_echo": self.last_master_echo,
            "registered_address": self.address,
            "registered": self.registered,
        }


class Gateway:
    """The gateway node: discovery, exposure, and the watchdog loop."""

    def __init__(
        self,
        node_id: str,
        master_id: str,
        config: SystemConfig,
        disk: dict,
        peers=(),
        exposure: "ExposurePolicy | None" = None,
        address: str = "",
        host_probe=None,
    ):
        self.node_id = node_id
        self.master_id = master_id
        self.config = config
        self.disk = disk
        self.peers = tuple(peers)
        self.exposure = exposure if exposure is not None else ExposurePolicy(config.exposure_fraction)
        self.address = address
        # host_probe(node_id) -> bool: process-table introspection for
        # co-located agents; supplied by the hosting environment.
        self.host_probe = host_probe
        self.outbox = Outbox(node_id)
        self.devices: dict[str, DeviceRecord] = {}
        self.proxies: dict[str, str] = {}  # device_id -> proxy node id
        self.local_observations: list[Observation] = []
        self.shared_observations: list[Observation] = []
        self.opinions: dict[str, float] = {}
        self.direct_mode = False

    # -- discovery ------------------------------------------------------------

    def register_device(
        self, device_id: str, resources: ResourceVector, attributes: AttributeSet, now: int
    ) -> DeviceRecord:
        """Idempotent upsert.  Avoided devices are recorded but excluded
        from exposure; everyone else gets a proxy via the agent
        launcher (unless discovery is disabled)."""
        opinion = self.opinions.get(device_id, self.config.default_opinion)
        record = DeviceRecord(
            device_id=device_id,
            resources=resources,
            attributes=attributes,
            last_seen=now,
            opinion=opinion,
        )
        known = device_id in self.devices
        changed = known and (
            self.devices[device_id].attributes != attributes
            or self.devices[device_id].resources != resources
        )
        self.devices[device_id] = record
        if self.avoided(device_id):
            self.outbox.note("device_avoided", device_id=device_id, opinion=opinion)
            return record
        if self.direct_mode:
            return record
        if device_id not in self.proxies:
            self.launch_proxy_agent(record, self.exposure, now)
        elif changed:
            proxy_id = self.proxies[device_id]
            self.outbox.send(
                proxy_id,
                messages.AGENT_CTL,
                now,
                action="update",
                advertised=codec.to_wire(resources.scale_floor(self.exposure.fraction)),
                attributes=codec.to_wire(attributes),
            )
            self.outbox.note("device_updated", device_id=device_id)
        return record

    def avoided(self, device_id: str) -> bool:
        opinion = self.opinions.get(device_id, self.config.default_opinion)
        return opinion < self.config.avoidance_threshold

    def ingest_observation(self, obs: Observation, now: int, shared: bool = False):
        (self.shared_observations if shared else self.local_observations).append(obs)
        previous = self.opinions.get(obs.subject_id)
        opinion = merge_opinions(
            self.local_observations, self.shared_observations, previous, obs.subject_id
        )
        self.opinions[obs.subject_id] = opinion
        if obs.subject_id in self.devices:
            self.devices[obs.subject_id].opinion = opinion
        self.outbox.note("opinion_updated", subject=obs.subject_id, opinion=round(opinion, 9))

    def discovery_query(self, constraints) -> tuple[str, ...]:
        """Devices that collectively provide a constraint set: each
        returned device satisfies at least one constraint and every
        constraint has at least one provider (else nothing qualifies).
        Lets the scheduler place coordinated tasks when, say, the camera
        and the microphone live on different devices."""
        providers: set[str] = set()
        for constraint in constraints:
            satisfying = {
                d.device_id
                for d in self.devices.values()
                if not self.avoided(d.device_id) and constraint.satisfied_by(d.attributes)
            }
            if not satisfying:
                return ()
            providers |= satisfying
        return tuple(sorted(providers))

    # -- exposure ------------------------------------------------------------------

    def launch_proxy_agent(self, device: DeviceRecord, policy: ExposurePolicy, now: int) -> str:
        """Agent launcher: start the proxy advertising floor-scaled
        resources and the device's attributes verbatim."""
        if device.device_id in self.proxies:
            raise AlreadyLaunched(device.device_id)
        if self.avoided(device.device_id):
            raise DeviceAvoided(device.device_id)
        proxy_id = f"{device.device_id}.agent"
        scaled = device.resources.scale_floor(policy.fraction)
        device_id = device.device_id
        gateway_id = self.node_id
        master_id = self.master_id
        attributes = device.attributes
        config = self.config

        def factory(ctx):
            return ProxyAgent(
                node_id=proxy_id,
                device_id=device_id,
                gateway_id=gateway_id,
                master_id=master_id,
                advertised=scaled,
                attributes=attributes,
                config=config,
                disk=ctx.disk,
                address=ctx.address(),
            )

        self.proxies[device.device_id] = proxy_id
        self.outbox.spawn(proxy_id, factory, host=self.node_id)
        self.outbox.note("proxy_launched", device_id=device.device_id, proxy_id=proxy_id)
        return proxy_id

    def exposed_total(self) -> ResourceVector:
        total = ResourceVector.zero()
        for device_id in sorted(self.proxies):
            device = self.devices[device_id]
            total = total + device.resources.scale_floor(self.exposure.fraction)
        return total

    def direct_mode_toggle(self, enabled: bool) -> None:
        """When discovery is disabled, devices register with the master
        themselves and no proxies are created for them."""
        self.direct_mode = enabled

    # -- watchdog --------------------------------------------------------------------

    def watchdog_tick(self, now: int) -> list[WatchdogAction]:
        """Periodic health pass over this gateway's agents: restart
        stopped processes, re-register after an address change, try to
        reconnect after prolonged master silence.  Healthy agents
        produce no actions."""
        actions = []
        reconnect_after = self.config.suspect_after + self.config.heartbeat_period
        for device_id in sorted(self.proxies):
            proxy_id = self.proxies[device_id]
            if self.host_probe is not None and not self.host_probe(proxy_id):
                actions.append(WatchdogAction(kind="restart", target=proxy_id))
                continue
            status = self.disk.get(_status_key(proxy_id))
            if status is None or not status.get("registered"):
                continue
            if status["registered_address"] != self.address:
                actions.append(WatchdogAction(kind="reregister", target=proxy_id))
            elif now - status["last_echo"] > reconnect_after:
                actions.append(WatchdogAction(kind="reconnect", target=proxy_id))
        return actions

    # -- event loop ---------------------------------------------------------------------

    def on_start(self, now: int) -> list:
        return self.outbox.drain()

    def on_address_change(self, address: str, now: int) -> list:
        # The watchdog notices the mismatch against each agent's
        # registered address on its next pass.
        self.address = address
        self.outbox.note("gateway_address_changed", address=address)
        return self.outbox.drain()

    def on_tick(self, now: int) -> list:
        if self.peers and now % self.config.gossip_period == 0 and self.local_observations:
            payload = [codec.to_wire(o) for o in self.local_observations]
            for peer in self.peers:
                self.outbox.send(peer, messages.OBSERVATIONS, now, observations=payload)
        if now % self.config.watchdog_period == 0:
            for action in self.watchdog_tick(now):
                self.outbox.note("watchdog_action", action=action.kind, target=action.target)
                if action.kind == "restart":
                    self.outbox.restart(action.target)
                else:
                    self.outbox.send(
                        action.target,
                        messages.AGENT_CTL,
                        now,
                        action=action.kind,
                        address=self.address,
                    )
        return self.outbox.drain()

    def handle(self, msg, now: int) -> list:
        if msg.kind == messages.DEV_REGISTER:
            resources = codec.from_wire(msg.fields["resources"])
            attributes = codec.from_wire(msg.fields["attributes"])
            if self.direct_mode:
                self.outbox.send(msg.sender, messages.AGENT_CTL, now, action="go-direct")
            self.register_device(msg.fields["device_id"], resources, attributes, now)
        elif msg.kind == messages.OBSERVATIONS:
            for obs_wire in msg.fields["observations"]:
                self.ingest_observation(codec.from_wire(obs_wire), now, shared=True)
        elif msg.kind == messages.STATUS:
            # A device reporting through a dead proxy; drop it, the
            # checkpoint recovery will sort the task out.
            self.outbox.note("status_without_proxy", task_id=msg.fields.get("task_id"))
        return self.outbox.drain()
