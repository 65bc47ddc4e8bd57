"""Reusable simulation scenarios.

Each builder returns a Scenario that the tests, the acceptance suite,
and the CLI runner script can all execute.  Builders take a seed so
determinism checks can rerun the exact same world.

Timing conventions used here: heartbeats every tick, suspicion after
three silent ticks, base timeout 8 ticks — small numbers keep runs
short while leaving room for the orderings the recovery procedures
require (e.g. the master must declare a loss before the watchdog
restarts the agent in the crash-recovery scenario).
"""

from __future__ import annotations

import hashlib
from dataclasses import replace

from . import codec, messages
from .config import SystemConfig
from .domain import (
    ArtifactRef,
    AttributeSet,
    DataLocality,
    ResourceVector,
    RuntimeKind,
    TaskSpec,
)
from .messages import Message
from .simnet import (
    ADDRESS_CHANGE,
    CRASH,
    DELIVER,
    PARTITION_END,
    PARTITION_START,
    RESTART,
    NodeDecl,
    Scenario,
    SimEvent,
    WorkItem,
)

FAST = SystemConfig(
    heartbeat_period=1,
    suspect_after_misses=3,
    base_timeout=8,
    offer_ttl=10,
    watchdog_period=6,
    announce_period=4,
    gossip_period=4,
    checkpoint_every=5,
)

DEVICE_RES = ResourceVector(cpus=4.0, mem_mb=4096, disk_mb=8192)


def sim_task(name: str, entry: str, instances: int = 1, required=None, constraints=(),
             locality=None, restart_policy="auto") -> TaskSpec:
    digest = hashlib.sha256(entry.encode()).hexdigest()
    return TaskSpec(
        task_name=name,
        runtime=RuntimeKind.SIM_TASK,
        artifact=ArtifactRef(sha256=digest, size_bytes=len(entry)),
        entry=entry,
        instances=instances,
        required=required or ResourceVector(cpus=1.0, mem_mb=512),
        constraints=tuple(constraints),
        locality=locality,
        restart_policy=restart_policy,
    )


def site(index: int, attrs=None, resources=None) -> list[NodeDecl]:
    """One edge site: a gateway plus one device behind it."""
    gateway = f"gw{index}"
    device = f"dev{index}"
    return [
        NodeDecl(kind="gateway", node_id=gateway),
        NodeDecl(
            kind="device",
            node_id=device,
            gateway_id=gateway,
            resources=resources or DEVICE_RES,
            attributes=AttributeSet.of(attrs or {"os": "linux-arm"}),
        ),
    ]


def cloud() -> list[NodeDecl]:
    return [NodeDecl(kind="master", node_id="master"), NodeDecl(kind="scheduler", node_id="fw1")]


def baseline(seed: int = 0, sites: int = 2, tasks: int = 2, max_ticks: int = 60) -> Scenario:
    """Happy path: tasks run to completion, nothing fails."""
    topology = cloud()
    for i in range(1, sites + 1):
        topology += site(i)
    workload = tuple(
        WorkItem(at=5 + i, scheduler_id="fw1", spec=sim_task(f"job{i}", "sleep:3,exit:0"))
        for i in range(tasks)
    )
    return Scenario(
        seed=seed,
        topology=tuple(topology),
        workload=workload,
        assertions=("conservation", "single_live_executor", "no_cross_partition_delivery",
                    "workload_terminal"),
        max_ticks=max_ticks,
        config=FAST,
    )


def churn(seed: int, sites: int = 3, tasks: int = 4, max_ticks: int = 90) -> Scenario:
    """Seeded mixed workload used for the many-seed conservation sweep:
    short and long tasks plus one failing task."""
    topology = cloud()
    for i in range(1, sites + 1):
        topology += site(i)
    entries = ["sleep:2,exit:0", "sleep:6,exit:0", "sleep:3,exit:1", "sleep:10,exit:0"]
    workload = tuple(
        WorkItem(
            at=4 + 2 * i,
            scheduler_id="fw1",
            spec=sim_task(f"mix{i}", entries[i % len(entries)],
                          restart_policy="manual" if i % 3 == 2 else "auto"),
        )
        for i in range(tasks)
    )
    return Scenario(
        seed=seed,
        topology=tuple(topology),
        workload=workload,
        assertions=("conservation", "no_cross_partition_delivery"),
        max_ticks=max_ticks,
        config=FAST,
    )


def correlated_partition(seed: int = 0, sites: int = 10, cut: int = 8, start: int = 20,
                         length: int = 5, max_ticks: int = 70) -> Scenario:
    """A quorum of sites loses the cloud for a few ticks: the master
    must read the wave as transient and nobody's task may be duplicated."""
    topology = cloud()
    for i in range(1, sites + 1):
        topology += site(i)
    workload = tuple(
        WorkItem(at=4, scheduler_id="fw1", spec=sim_task(f"steady{i}", "forever"))
        for i in range(1, cut + 1)
    )
    cut_nodes = tuple(n for i in range(1, cut + 1) for n in (f"gw{i}", f"dev{i}"))
    faults = (
        SimEvent(at=start, kind=PARTITION_START, nodes=cut_nodes),
        SimEvent(at=start + length, kind=PARTITION_END, nodes=cut_nodes),
    )
    return Scenario(
        seed=seed,
        topology=tuple(topology),
        workload=workload,
        faults=faults,
        assertions=("conservation", "single_live_executor", "no_cross_partition_delivery"),
        max_ticks=max_ticks,
        config=FAST,
    )


def lone_partition(seed: int = 0, start: int = 20, length: int = 30,
                   max_ticks: int = 90, transient_support: bool = True) -> Scenario:
    """One site dark past the adaptive timeout: permanent loss, one
    requeue onto the surviving site, one survivor after healing."""
    topology = cloud() + site(1) + site(2)
    workload = (
        WorkItem(
            at=4,
            scheduler_id="fw1",
            spec=sim_task(
                "pinned",
                "forever",
                # keep it on site 1 first via locality (short budget)
                locality=DataLocality(attr="agent_id", value="dev1.agent", wait_ticks=4),
            ),
        ),
    )
    cut_nodes = ("gw1", "dev1")
    faults = (
        SimEvent(at=start, kind=PARTITION_START, nodes=cut_nodes),
        SimEvent(at=start + length, kind=PARTITION_END, nodes=cut_nodes),
    )
    config = replace(FAST, transient_support=transient_support)
    return Scenario(
        seed=seed,
        topology=tuple(topology),
        workload=workload,
        faults=faults,
        assertions=("conservation", "no_cross_partition_delivery"),
        max_ticks=max_ticks,
        config=config,
    )


def agent_crash_recovery(seed: int = 0, crash_at: int = 22, max_ticks: int = 80) -> Scenario:
    """The recovery procedure end to end: kill a gateway agent (and its
    device, so the execution really dies), watch Task Lost -> requeue ->
    watchdog restart -> re-registration -> redeploy.

    The watchdog period is deliberately longer than suspicion + adaptive
    timeout so the loss declaration precedes the restart, which is the
    order the procedure prescribes."""
    topology = cloud() + site(1)
    workload = (WorkItem(at=4, scheduler_id="fw1", spec=sim_task("steady", "forever")),)
    faults = (
        SimEvent(at=crash_at, kind=CRASH, node="dev1.agent"),
        SimEvent(at=crash_at, kind=CRASH, node="dev1"),
        SimEvent(at=crash_at + 1, kind=RESTART, node="dev1"),
    )
    return Scenario(
        seed=seed,
        topology=tuple(topology),
        workload=workload,
        faults=faults,
        assertions=("conservation", "single_live_executor", "no_cross_partition_delivery"),
        max_ticks=max_ticks,
        config=replace(FAST, watchdog_period=20),
    )


def proxy_restart_adoption(seed: int = 0, crash_at: int = 20, max_ticks: int = 60) -> Scenario:
    """Agent process dies, executor keeps running on the device: the
    watchdog restarts the proxy, which re-adopts the task from its
    checkpoint with zero lost transitions."""
    topology = cloud() + site(1)
    workload = (WorkItem(at=4, scheduler_id="fw1", spec=sim_task("steady", "forever")),)
    faults = (SimEvent(at=crash_at, kind=CRASH, node="dev1.agent"),)
    return Scenario(
        seed=seed,
        topology=tuple(topology),
        workload=workload,
        faults=faults,
        assertions=("conservation", "single_live_executor", "no_cross_partition_delivery"),
        max_ticks=max_ticks,
        config=FAST,
    )


def transient_history_heal(seed: int = 0, max_ticks: int = 140) -> Scenario:
    """Build a quick-recovery history with two short partitions, then a
    long one: past the timeout the loss is classified transient, the
    requeue is deferred, and the healed agent's execution is re-adopted
    instead of duplicated."""
    topology = cloud() + site(1) + site(2) + site(3)
    workload = (
        WorkItem(
            at=4,
            scheduler_id="fw1",
            spec=sim_task(
                "sticky",
                "forever",
                locality=DataLocality(attr="agent_id", value="dev1.agent", wait_ticks=4),
            ),
        ),
    )
    cut_nodes = ("gw1", "dev1")
    faults = []
    for start in (20, 35):  # short blips: suspicion, then quick recovery
        faults.append(SimEvent(at=start, kind=PARTITION_START, nodes=cut_nodes))
        faults.append(SimEvent(at=start + 6, kind=PARTITION_END, nodes=cut_nodes))
    faults.append(SimEvent(at=60, kind=PARTITION_START, nodes=cut_nodes))
    faults.append(SimEvent(at=75, kind=PARTITION_END, nodes=cut_nodes))
    return Scenario(
        seed=seed,
        topology=tuple(topology),
        workload=workload,
        faults=tuple(faults),
        assertions=("conservation", "single_live_executor", "no_cross_partition_delivery"),
        max_ticks=max_ticks,
        config=FAST,
    )


def address_change(seed: int = 0, change_at: int = 25, max_ticks: int = 60) -> Scenario:
    """The gateway's IP changes; the watchdog notices and the agent
    re-registers exactly once."""
    topology = cloud() + site(1)
    workload = (WorkItem(at=4, scheduler_id="fw1", spec=sim_task("steady", "forever")),)
    faults = (SimEvent(at=change_at, kind=ADDRESS_CHANGE, node="gw1"),)
    return Scenario(
        seed=seed,
        topology=tuple(topology),
        workload=workload,
        faults=faults,
        assertions=("conservation", "single_live_executor", "no_cross_partition_delivery"),
        max_ticks=max_ticks,
        config=FAST,
    )


def delayed_scheduling(seed: int = 0, wait: int = 10, local_appears_at: "int | None" = 7,
                       submit_at: int = 3, max_ticks: int = 60) -> Scenario:
    """One non-local site from the start; the data-holding site appears
    later (or never).  Drives the wait-then-settle policy."""
    topology = cloud() + site(1)
    faults = []
    if local_appears_at is not None:
        # the data-holding site is down from the start and boots later
        topology += site(2, attrs={"os": "linux-arm", "data": "corpus-7"})
        faults.append(SimEvent(at=0, kind=CRASH, node="gw2"))
        faults.append(SimEvent(at=0, kind=CRASH, node="dev2"))
        faults.append(SimEvent(at=local_appears_at, kind=RESTART, node="gw2"))
        faults.append(SimEvent(at=local_appears_at, kind=RESTART, node="dev2"))
    workload = (
        WorkItem(
            at=submit_at,
            scheduler_id="fw1",
            spec=sim_task(
                "near-data",
                "sleep:3,exit:0",
                locality=DataLocality(attr="data", value="corpus-7", wait_ticks=wait),
            ),
        ),
    )
    return Scenario(
        seed=seed,
        topology=tuple(topology),
        workload=tuple(workload),
        faults=tuple(faults),
        assertions=("conservation", "single_live_executor", "no_cross_partition_delivery",
                    "workload_terminal"),
        max_ticks=max_ticks,
        config=FAST,
    )


def cloud_restart(seed: int = 0, crash_at: int = 12, max_ticks: int = 90,
                  tasks: int = 3) -> Scenario:
    """Master and framework crash mid-run and recover from the shared
    store; every non-terminal task must survive the restart."""
    topology = cloud()
    for i in range(1, 4):
        topology += site(i)
    workload = tuple(
        WorkItem(at=4 + i, scheduler_id="fw1", spec=sim_task(f"job{i}", "sleep:25,exit:0"))
        for i in range(tasks)
    )
    faults = (
        SimEvent(at=crash_at, kind=CRASH, node="cloud"),
        SimEvent(at=crash_at + 2, kind=RESTART, node="cloud"),
    )
    return Scenario(
        seed=seed,
        topology=tuple(topology),
        workload=workload,
        faults=faults,
        assertions=("conservation", "no_cross_partition_delivery", "workload_terminal"),
        max_ticks=max_ticks,
        config=FAST,
    )


def failing_task(seed: int = 0, restart_policy: str = "auto", max_ticks: int = 60) -> Scenario:
    """A task that exits nonzero, under either restart policy."""
    topology = cloud() + site(1)
    workload = (
        WorkItem(
            at=4,
            scheduler_id="fw1",
            spec=sim_task("flaky", "sleep:3,exit:2", restart_policy=restart_policy),
        ),
    )
    return Scenario(
        seed=seed,
        topology=tuple(topology),
        workload=workload,
        assertions=("conservation", "no_cross_partition_delivery"),
        max_ticks=max_ticks,
        config=FAST,
    )


def avoided_device(seed: int = 0, max_ticks: int = 50) -> Scenario:
    """Two devices behind one gateway, one with a bad reputation: the
    avoided device must never surface in any offer."""
    topology = cloud()
    topology.append(NodeDecl(kind="gateway", node_id="gw1"))
    for name in ("good", "shady"):
        topology.append(
            NodeDecl(
                kind="device",
                node_id=name,
                gateway_id="gw1",
                resources=DEVICE_RES,
                attributes=AttributeSet.of({"os": "linux-arm", "label": name}),
            )
        )
    workload = (WorkItem(at=8, scheduler_id="fw1", spec=sim_task("job", "sleep:3,exit:0")),)
    # A peer gateway's bad report lands before the device's first
    # announcement is processed, so "shady" is avoided from the start.
    from .gateway import Observation

    bad_report = Message(
        kind=messages.OBSERVATIONS,
        sender="gw-peer",
        to="gw1",
        seq=1,
        sent_at=0,
        fields={
            "observations": [
                codec.to_wire(Observation(observer_id="gw-peer", subject_id="shady", score=0.0, at=0))
            ]
        },
    )
    faults = (SimEvent(at=1, kind=DELIVER, message=bad_report),)
    return Scenario(
        seed=seed,
        topology=tuple(topology),
        workload=workload,
        faults=faults,
        assertions=("conservation", "no_cross_partition_delivery"),
        max_ticks=max_ticks,
        config=FAST,
    )


# Registry for the CLI runner and the determinism sweep.
NAMED = {
    "baseline": lambda seed=0: baseline(seed),
    "churn": lambda seed=0: churn(seed),
    "correlated-partition": lambda seed=0: correlated_partition(seed),
    "lone-partition": lambda seed=0: lone_partition(seed),
    "lone-partition-no-transient": lambda seed=0: lone_partition(seed, transient_support=False),
    "agent-crash-recovery": lambda seed=0: agent_crash_recovery(seed),
    "proxy-restart-adoption": lambda seed=0: proxy_restart_adoption(seed),
    "transient-history-heal": lambda seed=0: transient_history_heal(seed),
    "address-change": lambda seed=0: address_change(seed),
    "delayed-scheduling": lambda seed=0: delayed_scheduling(seed),
    "cloud-restart": lambda seed=0: cloud_restart(seed),
    "failing-task-auto": lambda seed=0: failing_task(seed, "auto"),
    "failing-task-manual": lambda seed=0: failing_task(seed, "manual"),
    "avoided-device": lambda seed=0: avoided_device(seed),
}
