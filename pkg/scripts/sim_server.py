#!/usr/bin/env python3
"""Control plane over a simulated cluster, with virtual time driven by
a wall-clock ticker — the backend the dashboard's end-to-end tests (and
manual dashboard hacking) run against.

The default world has two edge sites and, with --lost-demo, a scripted
outage: a task pinned to site 1 builds a quick-recovery history, then a
lasting partition gets it classified a transient loss, so its row sits
in `lost` (requeue deferred) long enough to click restart.

Prints "LISTENING <port>" once the HTTP endpoint is up.
"""

import argparse
import sys
import threading
import time
from dataclasses import replace

from edgeorc import scenarios
from edgeorc.config import SystemConfig
from edgeorc.control_plane import ControlPlaneService, SimHandle, serve
from edgeorc.domain import DataLocality
from edgeorc.simnet import PARTITION_END, PARTITION_START, Scenario, SimEvent, Simulation, WorkItem


def lost_demo_scenario() -> Scenario:
    config = SystemConfig(
        heartbeat_period=1,
        suspect_after_misses=3,
        base_timeout=8,
        timeout_multiplier=20,  # quick-recovery history stretches the grace window
        offer_ttl=10,
        watchdog_period=6,
        announce_period=4,
        gossip_period=4,
        checkpoint_every=5,
    )
    topology = scenarios.cloud() + scenarios.site(1) + scenarios.site(2)
    workload = (
        WorkItem(
            at=4,
            scheduler_id="fw1",
            spec=scenarios.sim_task(
                "edge-probe",
                "forever",
                locality=DataLocality(attr="agent_id", value="dev1.agent", wait_ticks=4),
            ),
        ),
    )
    cut = ("gw1", "dev1")
    faults = [
        SimEvent(at=20, kind=PARTITION_START, nodes=cut),
        SimEvent(at=25, kind=PARTITION_END, nodes=cut),
        SimEvent(at=32, kind=PARTITION_START, nodes=cut),
        SimEvent(at=37, kind=PARTITION_END, nodes=cut),
        SimEvent(at=60, kind=PARTITION_START, nodes=cut),  # never heals
    ]
    return Scenario(
        seed=0,
        topology=tuple(topology),
        workload=workload,
        faults=tuple(faults),
        max_ticks=1_000_000,
        config=config,
    )


def plain_scenario() -> Scenario:
    base = scenarios.baseline(seed=0, tasks=0)
    return replace(base, max_ticks=1_000_000)


class TickingHandle(SimHandle):
    """SimHandle whose virtual clock also advances on wall time."""

    def __init__(self, sim, lock: threading.Lock, **kwargs):
        super().__init__(sim, **kwargs)
        self._lock = lock

    def _locked(self, fn):
        with self._lock:
            return fn()

    def submit(self, spec, archive_b64, request_id):
        return self._locked(lambda: super(TickingHandle, self).submit(spec, archive_b64, request_id))

    def action(self, task_id, action):
        return self._locked(lambda: super(TickingHandle, self).action(task_id, action))

    def tasks(self):
        return self._locked(lambda: super(TickingHandle, self).tasks())

    def agents(self):
        return self._locked(lambda: super(TickingHandle, self).agents())

    def logs(self, task_id):
        return self._locked(lambda: super(TickingHandle, self).logs(task_id))


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--port", type=int, default=0)
    parser.add_argument("--tick-ms", type=int, default=60)
    parser.add_argument("--token", default=None)
    parser.add_argument("--lost-demo", action="store_true")
    args = parser.parse_args()

    scenario = lost_demo_scenario() if args.lost_demo else plain_scenario()
    sim = Simulation(scenario).start()
    lock = threading.Lock()
    handle = TickingHandle(sim, lock)
    service = ControlPlaneService(handle, token=args.token)
    server = serve(service, port=args.port)
    print(f"LISTENING {server.server_address[1]}", flush=True)

    try:
        while True:
            time.sleep(args.tick_ms / 1000)
            with lock:
                sim.step(1)
    except KeyboardInterrupt:
        server.shutdown()
    return 0


if __name__ == "__main__":
    sys.exit(main())
