"""Simulator semantics and the fault scenarios: determinism, partition
blocking, soft-state execution, recovery orderings, and the simulator's
own plumbing (injection, malformed scenarios, host expansion)."""

import hashlib

import pytest

from edgeorc import codec, scenarios
from edgeorc.domain import TaskState
from edgeorc.executor import DeviceRuntime
from edgeorc.gateway import Checkpoint, checkpoint_key, write_checkpoint
from edgeorc.master import Master
from edgeorc.scheduler import Scheduler
from edgeorc.simnet import (
    CRASH,
    DELIVER,
    MalformedScenario,
    PastTick,
    Scenario,
    SimEvent,
    Simulation,
    run_scenario,
)


def scheduler_of(sim) -> Scheduler:
    return sim.nodes_of_type(Scheduler)[0]


def task_states(sim) -> dict:
    return {t: r.state.value for t, r in sorted(scheduler_of(sim).tasks.items())}


class TestHappyPath:
    def test_baseline_tasks_finish(self):
        sim = run_scenario(scenarios.baseline(seed=1))
        assert set(task_states(sim).values()) == {"finished"}
        assert sim.check_assertions() == {}

    def test_empty_fault_schedule_single_task(self):
        sim = run_scenario(scenarios.baseline(seed=0, tasks=1))
        states = task_states(sim)
        assert list(states.values()) == ["finished"]
        # the record walked the full lifecycle
        record = scheduler_of(sim).tasks[list(states)[0]]
        walked = [s.value for s, _ in record.state_history]
        assert walked == ["queued", "staging", "running", "finished"]


class TestDeterminism:
    @pytest.mark.parametrize("name", sorted(scenarios.NAMED))
    def test_same_seed_same_trace(self, name):
        first = run_scenario(scenarios.NAMED[name](7)).trace_text()
        second = run_scenario(scenarios.NAMED[name](7)).trace_text()
        assert hashlib.sha256(first.encode()).hexdigest() == hashlib.sha256(
            second.encode()
        ).hexdigest()

    def test_different_seed_may_differ_with_loss(self):
        base = scenarios.baseline(seed=1)
        lossy = Scenario(**{**base.__dict__, "loss": 0.2, "max_ticks": 40})
        a = run_scenario(lossy).trace_text()
        b = run_scenario(Scenario(**{**lossy.__dict__, "seed": 2})).trace_text()
        assert a != b


class TestPartitions:
    def test_no_message_crosses_the_cut(self):
        sim = run_scenario(scenarios.correlated_partition(seed=3))
        assert sim.check_assertions() == {}
        drops = [
            e
            for e in sim.trace_events("message_dropped")
            if e.as_dict()["reason"] == "partition"
        ]
        assert drops, "the cut never blocked anything"

    def test_partitioned_agent_keeps_executing(self):
        sim = run_scenario(scenarios.lone_partition(seed=0, start=20, length=30))
        during = [
            e
            for e in sim.trace_events("executor_tick")
            if e.node == "dev1" and 21 <= e.at <= 49
        ]
        assert len(during) >= 25  # soft state: execution continued in the data plane

    def test_late_spawned_proxy_is_inside_its_host_cut(self):
        sim = run_scenario(scenarios.lone_partition(seed=0, start=20, length=30))
        crossings = [
            e
            for e in sim.trace_events("delivered")
            if 20 < e.at < 50  # the cut heals at 50; earlier sends land then
            and e.as_dict()["sender"] == "dev1.agent"
            and e.node == "master"
        ]
        assert crossings == []


class TestSelfKillInference:
    def test_without_transient_support_agent_kills_own_task(self):
        sim = run_scenario(scenarios.lone_partition(seed=0, transient_support=False))
        assert [e.node for e in sim.trace_events("self_kill")] == ["dev1.agent"]
        assert sim.executor_overlaps == []
        live = _live_counts(sim)
        assert live == {"pinned-001": 1}

    def test_with_transient_support_master_kills_stale_copy(self):
        sim = run_scenario(scenarios.lone_partition(seed=0, transient_support=True))
        assert sim.trace_events("self_kill") == []
        assert sim.trace_events("stale_execution_killed")
        assert _live_counts(sim) == {"pinned-001": 1}


def _live_counts(sim) -> dict:
    live = {}
    for device in sim.nodes_of_type(DeviceRuntime):
        for task_id in device.live_tasks():
            live[task_id] = live.get(task_id, 0) + 1
    return live


class TestRecoveryScenarios:
    def test_agent_crash_recovery_order(self):
        sim = run_scenario(scenarios.agent_crash_recovery(seed=0, crash_at=22))
        lost = sim.first_event("task_lost_sent")
        requeue = sim.first_event("task_requeued")
        restart = sim.first_event("watchdog_action", action="restart")
        rereg = [e for e in sim.trace_events("agent_register_sent") if e.at > 22]
        relaunch = [e for e in sim.trace_events("task_launched") if e.at > 22]
        assert lost.at <= requeue.at <= restart.at <= rereg[0].at <= relaunch[0].at
        config = sim.scenario.config
        assert relaunch[0].at - 22 <= config.watchdog_period + config.base_timeout + 5

    def test_proxy_restart_readopts_without_lost(self):
        sim = run_scenario(scenarios.proxy_restart_adoption(seed=0, crash_at=20))
        record = scheduler_of(sim).tasks["steady-001"]
        assert record.state is TaskState.RUNNING
        assert all(s is not TaskState.LOST for s, _ in record.state_history)
        recovery = sim.first_event("checkpoint_recovery")
        assert recovery.as_dict() == {"adopted": "steady-001", "lost": ""}

    def test_corrupt_checkpoint_loses_tasks(self):
        def corrupt(sim):
            disk = sim.disks["gw1"]
            key = checkpoint_key("dev1.agent")
            disk[key] = disk[key][: len(disk[key]) // 2]

        scenario = scenarios.proxy_restart_adoption(seed=0, crash_at=20)
        sim = run_scenario(scenario, hooks={20: [corrupt]})
        assert sim.first_event("checkpoint_corrupt") is not None
        record = scheduler_of(sim).tasks["steady-001"]
        assert any(s is TaskState.LOST for s, _ in record.state_history)

    def test_address_change_single_reregistration(self):
        sim = run_scenario(scenarios.address_change(seed=0, change_at=25))
        actions = [e for e in sim.trace_events("watchdog_action") if e.as_dict()["action"] == "reregister"]
        assert len(actions) == 1
        registrations = [e for e in sim.trace_events("agent_register_sent") if e.at > 25]
        assert len(registrations) == 1
        assert scheduler_of(sim).tasks["steady-001"].state is TaskState.RUNNING

    def test_cloud_restart_recovers_nonterminal_tasks(self):
        sim = run_scenario(scenarios.cloud_restart(seed=0))
        assert sim.first_event("framework_recovered") is not None
        assert sim.first_event("master_recovered") is not None
        assert set(task_states(sim).values()) == {"finished"}
        # the agents re-confirmed their executions: nothing was requeued
        assert sim.trace_events("task_requeued") == []
        assert sim.check_assertions() == {}

    def test_cloud_restart_terminal_multiset_matches_no_restart_run(self):
        scenario = scenarios.cloud_restart(seed=0)
        with_restart = run_scenario(scenario)
        without = run_scenario(Scenario(**{**scenario.__dict__, "faults": ()}))
        assert sorted(task_states(with_restart).values()) == sorted(
            task_states(without).values()
        )


class TestTransientClassification:
    def test_correlated_partition_all_transient_no_duplicates(self):
        sim = run_scenario(scenarios.correlated_partition(seed=0, sites=10, cut=8))
        classifications = {
            e.as_dict()["agent_id"]: e.as_dict()["classification"]
            for e in sim.trace_events("disconnect_classified")
        }
        assert len(classifications) == 8
        assert set(classifications.values()) == {"transient"}
        assert sim.executor_overlaps == []
        assert sim.trace_events("task_lost_sent") == []

    def test_lone_partition_permanent_single_requeue(self):
        sim = run_scenario(scenarios.lone_partition(seed=0))
        verdicts = [e.as_dict()["classification"] for e in sim.trace_events("disconnect_classified")]
        assert verdicts[-1] == "permanent"
        requeues = [
            e for e in sim.trace_events("task_requeued") if e.as_dict()["task_id"] == "pinned-001"
        ]
        assert len(requeues) == 1
        assert _live_counts(sim) == {"pinned-001": 1}

    def test_transient_history_defers_requeue_and_readopts(self):
        sim = run_scenario(scenarios.transient_history_heal(seed=0))
        assert sim.first_event("requeue_deferred") is not None
        assert sim.trace_events("task_requeued") == []
        assert sim.first_event("task_resurrected") is not None
        assert sim.executor_overlaps == []
        assert scheduler_of(sim).tasks["sticky-001"].state is TaskState.RUNNING


class TestFailureProcedureScenarios:
    def test_auto_restart_requeues_after_each_failure(self):
        sim = run_scenario(scenarios.failing_task(seed=0, restart_policy="auto"))
        notifier = sim.notifiers["fw1"]
        failures = [e for e in notifier.events if e["event"] == "task-failed"]
        requeues = sim.trace_events("task_requeued")
        assert failures and len(requeues) == len(failures)

    def test_manual_policy_parks_task(self):
        sim = run_scenario(scenarios.failing_task(seed=0, restart_policy="manual"))
        notifier = sim.notifiers["fw1"]
        assert len(notifier.events) == 1
        assert task_states(sim) == {"flaky-001": "failed"}
        assert sim.trace_events("task_requeued") == []


class TestAvoidance:
    def test_avoided_device_never_in_offers(self):
        sim = run_scenario(scenarios.avoided_device(seed=0))
        assert sim.first_event("device_avoided") is not None
        registered = {e.as_dict()["agent_id"] for e in sim.trace_events("agent_registered")}
        assert registered == {"good.agent"}
        master = sim.nodes_of_type(Master)[0]
        assert "shady.agent" not in master.agents
        assert task_states(sim) == {"job-001": "finished"}


class TestScoutProbeEndToEnd:
    def test_probe_flows_through_proxy_to_device_and_back(self):
        from edgeorc.simnet import WorkItem

        base = scenarios.baseline(seed=0, tasks=0, max_ticks=200)
        scenario = Scenario(
            **{
                **base.__dict__,
                "workload": (
                    WorkItem(at=4, scheduler_id="fw1", spec=scenarios.sim_task("hog", "forever")),
                ),
            }
        )
        sim = Simulation(scenario)
        sim.step(12)  # agents registered, the hog running on one site
        master = sim.nodes_of_type(Master)[0]
        scheduler = sim.nodes_of_type(Scheduler)[0]
        agents = sorted(master.agents)
        assert agents == ["dev1.agent", "dev2.agent"]
        busy_agent = scheduler.tasks["hog-001"].assigned_agent
        assert busy_agent is not None
        sketch = scenarios.sim_task("probe", "sleep:1,exit:0").required
        probe_id = master.scout_probe(agents, sketch, now=sim.now, scheduler_id="fw1")
        sim.step(6)
        results = master.probe_results(probe_id)
        assert results is not None and len(results) == 2
        assert all(r.responded and r.metric is not None for r in results)
        by_agent = {r.agent_id: r.metric for r in results}
        idle_agent = next(a for a in agents if a != busy_agent)
        assert by_agent[busy_agent] > by_agent[idle_agent]
        # the cached metrics ride subsequent offers for tie-breaking
        sim.step(4)
        assert set(scheduler.probe_metrics) == set(agents)


class TestTwoFrameworks:
    def test_each_scheduler_tracks_only_its_tasks(self):
        from edgeorc.simnet import NodeDecl, WorkItem

        base = scenarios.baseline(seed=0, tasks=0, max_ticks=70)
        topology = tuple(base.topology) + (NodeDecl(kind="scheduler", node_id="fw2"),)
        workload = (
            WorkItem(at=5, scheduler_id="fw1", spec=scenarios.sim_task("alpha", "sleep:3,exit:0")),
            WorkItem(at=5, scheduler_id="fw2", spec=scenarios.sim_task("beta", "sleep:3,exit:0")),
        )
        scenario = Scenario(**{**base.__dict__, "topology": topology, "workload": workload})
        sim = run_scenario(scenario)
        fw1 = sim.node("fw1")
        fw2 = sim.node("fw2")
        assert sorted(fw1.tasks) == ["alpha-001"]
        assert sorted(fw2.tasks) == ["beta-001"]
        assert fw1.tasks["alpha-001"].state is TaskState.FINISHED
        assert fw2.tasks["beta-001"].state is TaskState.FINISHED
        assert sim.conservation_violations == []


class TestDirectModeScenario:
    def test_toggled_gateway_sends_devices_straight_to_master(self):
        from edgeorc.gateway import Gateway

        def enable_direct(sim):
            for gateway in sim.nodes_of_type(Gateway):
                gateway.direct_mode_toggle(True)

        scenario = scenarios.baseline(seed=0, tasks=1, max_ticks=60)
        sim = run_scenario(scenario, hooks={0: [enable_direct]})
        master = sim.nodes_of_type(Master)[0]
        # devices themselves registered: no proxies exist
        assert sorted(master.agents) == ["dev1", "dev2"]
        assert all(not a.endswith(".agent") for a in master.agents)
        assert set(task_states(sim).values()) == {"finished"}


class TestLossyLinks:
    def test_workload_converges_under_message_loss(self):
        base = scenarios.baseline(seed=3, tasks=2, max_ticks=220)
        lossy = Scenario(**{**base.__dict__, "loss": 0.1})
        sim = run_scenario(lossy)
        states = set(task_states(sim).values())
        assert states == {"finished"}, task_states(sim)
        assert sim.conservation_violations == []
        dropped = sim.trace_events("message_lost")
        assert dropped, "the loss model never fired"


class TestSimulatorPlumbing:
    def test_inject_past_tick_rejected(self):
        sim = Simulation(scenarios.baseline(seed=0, max_ticks=5))
        sim.run()
        with pytest.raises(PastTick):
            sim.inject(SimEvent(at=2, kind=CRASH, node="dev1"))

    def test_malformed_scenario_unknown_node(self):
        base = scenarios.baseline(seed=0)
        bad = Scenario(
            **{**base.__dict__, "faults": (SimEvent(at=3, kind=CRASH, node="ghost"),)}
        )
        with pytest.raises(MalformedScenario):
            Simulation(bad)

    def test_malformed_workload_target(self):
        base = scenarios.baseline(seed=0)
        from edgeorc.simnet import WorkItem

        bad = Scenario(
            **{
                **base.__dict__,
                "workload": (WorkItem(at=1, scheduler_id="nobody", spec=scenarios.sim_task("x", "sleep:1,exit:0")),),
            }
        )
        with pytest.raises(MalformedScenario):
            Simulation(bad)

    def test_scenario_round_trips_canonically(self):
        scenario = scenarios.correlated_partition(seed=5)
        line = codec.encode_line(scenario)
        assert codec.decode_line(line) == scenario

    def test_conservation_holds_across_seeds(self):
        for seed in range(10):
            sim = run_scenario(scenarios.churn(seed))
            assert sim.conservation_violations == []
