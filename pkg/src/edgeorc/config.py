"""Tunable periods and thresholds, all in abstract ticks.

A tick is whatever the environment makes it: the simulator's virtual
step or the demo ticker's wall-clock slice.  Logic never reads a clock;
it only compares ticks handed to it.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class SystemConfig:
    # Liveness: agents heartbeat every heartbeat_period; the master marks
    # an agent Suspect after suspect_after_misses consecutive silent
    # periods.
    heartbeat_period: int = 2
    suspect_after_misses: int = 3

    # Disconnect classification: the floor timeout, the multiplier k in
    # max(base, ceil(k * median(recovery history))), the window for the
    # correlated-failure rule, and the quorum fraction that triggers it.
    base_timeout: int = 10
    timeout_multiplier: int = 2
    suspect_window: int = 5
    quorum_fraction: float = 0.5

    # When False the master never classifies a loss as transient and a
    # reconnecting agent infers it was declared dead (and kills its own
    # tasks) after being silent past the timeout.
    transient_support: bool = True

    # Offers and probes.
    offer_ttl: int = 30
    offer_period: int = 1
    probe_ttl: int = 5

    # Scheduler: an in-flight accept unlocks after accept_timeout; after
    # replication_threshold losses a task is requeued as replica_count
    # replicas.
    accept_timeout: int = 30
    replication_threshold: int = 2
    replica_count: int = 2

    # Gateway loops.
    watchdog_period: int = 4
    checkpoint_every: int = 10
    gossip_period: int = 5
    announce_period: int = 5
    avoidance_threshold: float = 0.2
    default_opinion: float = 0.5
    exposure_fraction: float = 1.0

    # Accepting sim-task workloads requires simulation mode.
    sim_mode: bool = True

    @property
    def suspect_after(self) -> int:
        return self.suspect_after_misses * self.heartbeat_period
