"""Master behaviors driven directly (no simulator): registration,
offer accounting and round-robin fairness, status bookkeeping,
disconnect classification, adaptive timeouts, and scout probes."""

import pytest

from edgeorc import codec, messages
from edgeorc.config import SystemConfig
from edgeorc.domain import AttributeSet, ResourceVector, TaskState
from edgeorc.master import (
    AgentHeld,
    DisconnectClass,
    DuplicateRegistration,
    Liveness,
    Master,
    NotSuspect,
    UnknownAgent,
    UnknownTask,
    adaptive_timeout,
)
from edgeorc.executor import sufferance
from edgeorc.messages import Message, Send


RES = ResourceVector(cpus=4.0, mem_mb=2048)
ATTRS = AttributeSet.of({"os": "linux-arm", "runtimes": {"sim-task"}})


def new_master(**overrides) -> Master:
    return Master(config=SystemConfig(**overrides))


def sends(effects, kind=None):
    out = [e.message for e in effects if isinstance(e, Send)]
    if kind:
        out = [m for m in out if m.kind == kind]
    return out


def register_framework(master, scheduler_id="fw1", now=0):
    msg = Message(
        kind=messages.REGISTER, sender=scheduler_id, to=master.node_id, seq=1, sent_at=now,
        fields={"role": "framework"},
    )
    master.handle(msg, now)


def accept(master, offer, task_id, spec, now, scheduler_id="fw1"):
    msg = Message(
        kind=messages.ACCEPT,
        sender=scheduler_id,
        to=master.node_id,
        seq=9,
        sent_at=now,
        fields={
            "offer_id": offer.offer_id,
            "task_id": task_id,
            "spec": codec.to_wire(spec),
            "replica_group": None,
        },
    )
    return master.handle(msg, now)


class TestRegistration:
    def test_fresh_registration(self):
        master = new_master()
        record = master.register_agent("a1", RES, ATTRS, now=0)
        assert record.liveness.kind == "connected"
        assert record.allocated.is_zero()

    def test_duplicate_while_connected(self):
        master = new_master()
        master.register_agent("a1", RES, ATTRS, now=0)
        with pytest.raises(DuplicateRegistration):
            master.register_agent("a1", RES, ATTRS, now=1)

    def test_reregistration_preserves_history(self):
        master = new_master()
        agent = master.register_agent("a1", RES, ATTRS, now=0)
        agent.liveness = Liveness("disconnected", 5)
        agent.last_failure_at = 5
        agent.failure_history = ((5, "suspect"),)
        record = master.register_agent("a1", RES, ATTRS, now=9)
        assert record.liveness.kind == "connected"
        assert (5, "suspect") in record.failure_history
        assert record.recovery_durations == (4,)


class TestOffers:
    def test_single_agent_full_offer(self):
        master = new_master()
        register_framework(master)
        master.register_agent("a1", RES, ATTRS, now=0)
        offers = master.make_offers(now=1)
        assert len(offers) == 1
        assert offers[0].granted == RES
        assert offers[0].attributes.get("agent_id") == "a1"

    def test_fully_allocated_agent_not_offered(self):
        master = new_master()
        register_framework(master)
        agent = master.register_agent("a1", RES, ATTRS, now=0)
        agent.allocated = RES
        assert master.make_offers(now=1) == []

    def test_round_robin_two_schedulers_four_agents(self):
        master = new_master()
        register_framework(master, "fw1")
        register_framework(master, "fw2")
        for i in range(4):
            master.register_agent(f"a{i}", RES, ATTRS, now=0)
        master.make_offers(now=1)
        counts = {"fw1": 0, "fw2": 0}
        for _offer, scheduler in master.offers.values():
            counts[scheduler] += 1
        assert counts == {"fw1": 2, "fw2": 2}

    def test_one_outstanding_offer_per_agent(self):
        master = new_master()
        register_framework(master)
        master.register_agent("a1", RES, ATTRS, now=0)
        first = master.make_offers(now=1)
        again = master.make_offers(now=2)
        assert len(first) == 1 and again == []

    def test_expired_accept_rejected_and_resources_return(self, sim_spec):
        master = new_master(offer_ttl=5)
        register_framework(master)
        master.register_agent("a1", RES, ATTRS, now=0)
        offer = master.make_offers(now=1)[0]
        master._expire_offers(now=7)  # offer lapsed at tick 6
        effects = accept(master, offer, "t-1", sim_spec(), now=7)
        assert sends(effects, messages.LAUNCH) == []
        assert master.agents["a1"].allocated.is_zero()
        # the remainder is offerable again
        assert len(master.make_offers(now=8)) == 1

    def test_accept_allocates_and_launches(self, sim_spec):
        master = new_master()
        register_framework(master)
        master.register_agent("a1", RES, ATTRS, now=0)
        offer = master.make_offers(now=1)[0]
        spec = sim_spec()
        effects = accept(master, offer, "t-1", spec, now=2)
        launches = sends(effects, messages.LAUNCH)
        assert len(launches) == 1 and launches[0].to == "a1"
        assert master.agents["a1"].allocated == spec.required
        assert master.tasks["t-1"].state is TaskState.STAGING
        assert master.conservation_violations() == []


class TestStatus:
    def _launched(self, sim_spec):
        master = new_master()
        register_framework(master)
        master.register_agent("a1", RES, ATTRS, now=0)
        offer = master.make_offers(now=1)[0]
        spec = sim_spec()
        accept(master, offer, "t-1", spec, now=2)
        return master, spec

    def test_finished_releases_allocation(self, sim_spec):
        master, _ = self._launched(sim_spec)
        master.record_status("a1", "t-1", TaskState.RUNNING, now=3)
        master.record_status("a1", "t-1", TaskState.FINISHED, now=8)
        assert master.agents["a1"].allocated.is_zero()
        assert master.tasks["t-1"].state is TaskState.FINISHED

    def test_status_forwarded_to_schedulers(self, sim_spec):
        master, _ = self._launched(sim_spec)
        effects = master.outbox.drain()  # clear accept-time traffic
        master.record_status("a1", "t-1", TaskState.RUNNING, now=3)
        forwarded = sends(master.outbox.drain(), messages.STATUS)
        assert [m.to for m in forwarded] == ["fw1"]
        assert forwarded[0].fields["state"] == "running"

    def test_unknown_ids(self, sim_spec):
        master, _ = self._launched(sim_spec)
        with pytest.raises(UnknownTask):
            master.record_status("a1", "ghost", TaskState.RUNNING, now=3)
        with pytest.raises(UnknownAgent):
            master.record_status("ghost", "t-1", TaskState.RUNNING, now=3)


class TestAdaptiveTimeout:
    def test_empty_history_uses_base(self):
        assert adaptive_timeout([], base=10) == 10

    def test_median_times_k(self):
        assert adaptive_timeout([4, 6, 8], base=5, k=2) == 12

    def test_base_clamps_small_history(self):
        assert adaptive_timeout([1], base=10, k=2) == 10

    def test_even_history_median(self):
        # median of {2, 4, 6, 8} is 5 -> k * 5 = 10
        assert adaptive_timeout([2, 4, 6, 8], base=3, k=2) == 10


class TestClassification:
    def _suspect(self, master, agent_id, since):
        agent = master.agents[agent_id]
        agent.liveness = Liveness("suspect", since)
        agent.last_failure_at = since

    def test_not_suspect_error(self):
        master = new_master()
        master.register_agent("a1", RES, ATTRS, now=0)
        with pytest.raises(NotSuspect):
            master.classify_disconnect("a1", now=5)

    def test_correlated_wave_is_transient(self):
        master = new_master()
        for i in range(10):
            master.register_agent(f"a{i}", RES, ATTRS, now=0)
        for i in range(8):
            self._suspect(master, f"a{i}", since=50)
        for i in range(8):
            assert master.classify_disconnect(f"a{i}", now=52) is DisconnectClass.TRANSIENT

    def test_lone_suspect_past_timeout_is_permanent(self):
        master = new_master(base_timeout=10)
        for i in range(1, 6):
            master.register_agent(f"a{i}", RES, ATTRS, now=0)
        self._suspect(master, "a1", since=20)
        assert master.classify_disconnect("a1", now=31) is DisconnectClass.PERMANENT

    def test_short_suspicion_with_history_is_undetermined(self):
        # history {3,4,5}, suspect for 2 ticks, timeout 10 -> no verdict yet
        master = new_master(base_timeout=10)
        for i in range(1, 6):
            master.register_agent(f"a{i}", RES, ATTRS, now=0)
        master.agents["a1"].recovery_durations = (3, 4, 5)
        self._suspect(master, "a1", since=20)
        assert master.classify_disconnect("a1", now=22) is DisconnectClass.UNDETERMINED

    def test_quick_recovery_history_keeps_transient_past_timeout(self):
        master = new_master(base_timeout=10)
        for i in range(1, 6):
            master.register_agent(f"a{i}", RES, ATTRS, now=0)
        master.agents["a1"].recovery_durations = (3, 4, 5)
        self._suspect(master, "a1", since=20)
        assert master.classify_disconnect("a1", now=31) is DisconnectClass.TRANSIENT


class TestScoutProbe:
    def _cluster(self):
        master = new_master()
        register_framework(master)
        for agent_id in ("a1", "a2", "a3"):
            master.register_agent(agent_id, RES, ATTRS, now=0)
        return master

    def _reply(self, master, probe_msg, inventories, now):
        """Device-side answer computed from a task inventory."""
        sketch = codec.from_wire(probe_msg.fields["sketch"])
        agent_id = probe_msg.fields["agent_id"]
        metric = sufferance(inventories[agent_id], RES, sketch)
        reply = Message(
            kind=messages.PROBE_REPLY, sender=agent_id, to=master.node_id, seq=1, sent_at=now,
            fields={"probe_id": probe_msg.fields["probe_id"], "agent_id": agent_id,
                    "value": metric.value, "components": dict(metric.components)},
        )
        master.handle(reply, now)

    def test_idle_agent_accepts_small_sketch(self):
        master = self._cluster()
        probe_id = master.scout_probe(["a1"], ResourceVector(cpus=0.5), now=1)
        probes = sends(master.outbox.drain(), messages.PROBE)
        self._reply(master, probes[0], {"a1": []}, now=2)
        results = master.probe_results(probe_id)
        assert results[0].responded and results[0].metric <= 1.0

    def test_disconnected_agent_marked_nonresponder(self):
        master = self._cluster()
        master.agents["a2"].liveness = Liveness("disconnected", 0)
        probe_id = master.scout_probe(["a2"], ResourceVector(cpus=0.5), now=1)
        results = master.probe_results(probe_id)
        assert results == [
            r for r in results if not r.responded and r.metric is None
        ]

    def test_saturated_agent_has_greatest_metric(self):
        master = self._cluster()
        inventories = {
            "a1": [],
            "a2": [ResourceVector(cpus=1.0)],
            "a3": [ResourceVector(cpus=3.5), ResourceVector(mem_mb=1500)],
        }
        probe_id = master.scout_probe(
            ["a1", "a2", "a3"], ResourceVector(cpus=1.0, mem_mb=256), now=1
        )
        for probe_msg in sends(master.outbox.drain(), messages.PROBE):
            self._reply(master, probe_msg, inventories, now=2)
        results = {r.agent_id: r.metric for r in master.probe_results(probe_id)}
        assert results["a3"] > results["a1"] and results["a3"] > results["a2"]

    def test_hold_blocks_offers_to_others(self):
        master = self._cluster()
        register_framework(master, "fw2")
        master.scout_probe(["a1"], ResourceVector(cpus=0.5), now=1, scheduler_id="fw2")
        master.make_offers(now=2)
        holders = {
            scheduler for offer, scheduler in master.offers.values() if offer.agent_id == "a1"
        }
        assert holders == {"fw2"}

    def test_one_hold_per_agent(self):
        master = self._cluster()
        master.scout_probe(["a1"], ResourceVector(cpus=0.5), now=1)
        with pytest.raises(AgentHeld):
            master.scout_probe(["a1"], ResourceVector(cpus=0.5), now=2)

    def test_probe_timeout_releases_hold(self):
        master = self._cluster()
        probe_id = master.scout_probe(["a1"], ResourceVector(cpus=0.5), now=1)
        master.on_tick(now=1 + master.config.probe_ttl)
        assert master.probe_results(probe_id) is not None
        assert "a1" not in master.holds
