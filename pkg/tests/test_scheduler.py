"""Scheduler behavior: offer matching against the brute-force oracle,
delayed scheduling (wait/accept traces), the matcher hook, and the two
recovery procedures driven with hand-made master messages."""

import pytest
from hypothesis import given, settings

from edgeorc import codec, messages
from edgeorc.config import SystemConfig
from edgeorc.domain import (
    AttributeConstraint,
    AttributeSet,
    DataLocality,
    ResourceVector,
    RuntimeKind,
    TaskRecord,
    TaskSpec,
    TaskState,
)
from edgeorc.master import Offer
from edgeorc.messages import Message, Note, Send
from edgeorc.persistence import KIND_TASK, MemoryStore
from edgeorc.scheduler import (
    CollectingNotifier,
    Decision,
    HookAlreadyInstalled,
    IllegalAction,
    MatchReport,
    QueueEntry,
    Scheduler,
    UnknownTask,
    built_in_match,
    decide,
)
from matcher_oracle import brute_force_matched
from strategies import attribute_sets, resource_vectors, task_specs
from conftest import artifact_for


def make_offer(agent_id="a1", granted=None, attrs=None, issued_at=0, ttl=30, offer_id=None):
    # mirror the master: offers always carry the agent id as an attribute
    entries = dict(attrs) if attrs else {"runtimes": {"sim-task", "shell-script"}}
    entries.setdefault("agent_id", agent_id)
    attributes = AttributeSet.of(entries)
    return Offer(
        offer_id=offer_id or f"o-{agent_id}-{issued_at}",
        agent_id=agent_id,
        granted=granted or ResourceVector(cpus=4.0, mem_mb=4096),
        attributes=attributes,
        issued_at=issued_at,
        ttl=ttl,
    )


def make_spec(name="job", constraints=(), locality=None, required=None, runtime=RuntimeKind.SIM_TASK):
    return TaskSpec(
        task_name=name,
        runtime=runtime,
        artifact=artifact_for(b"x"),
        entry="sleep:1,exit:0",
        required=required or ResourceVector(cpus=0.5, mem_mb=64),
        constraints=tuple(constraints),
        locality=locality,
    )


def sends(effects, kind=None):
    out = [e.message for e in effects if isinstance(e, Send)]
    return [m for m in out if kind is None or m.kind == kind]


def notes(effects, kind=None):
    out = [e for e in effects if isinstance(e, Note)]
    return [n for n in out if kind is None or n.kind == kind]


class TestMatchOffer:
    def test_sensor_exists_constraint(self):
        spec = make_spec(constraints=[AttributeConstraint.exists("accelerometer")])
        offer = make_offer(attrs={"accelerometer": "3-axis", "runtimes": {"sim-task"}})
        assert built_in_match(spec, offer).matched

    def test_vacuous_spec_matches_live_offer(self):
        spec = make_spec(required=ResourceVector.zero())
        offer = make_offer()
        report = built_in_match(spec, offer)
        assert report.matched and report.failed_constraint is None

    def test_resource_misfit_names_component(self):
        spec = make_spec(required=ResourceVector(cpus=8.0))
        report = built_in_match(spec, make_offer())
        assert not report.matched
        assert report.failed_constraint == "resource:cpus"

    def test_runtime_must_be_advertised(self):
        spec = make_spec(runtime=RuntimeKind.PYTHON_APP)
        report = built_in_match(spec, make_offer(attrs={"runtimes": {"sim-task"}}))
        assert not report.matched
        assert report.failed_constraint == "runtime:python-app"

    def test_failing_constraint_reported_first(self):
        c1 = AttributeConstraint.equals("os", "android")
        c2 = AttributeConstraint.exists("camera")
        spec = make_spec(constraints=[c1, c2])
        report = built_in_match(spec, make_offer(attrs={"os": "linux", "runtimes": {"sim-task"}}))
        assert report.failed_constraint == c1

    def test_locality_reported_but_not_required(self):
        spec = make_spec(locality=DataLocality(attr="agent_id", value="a9", wait_ticks=5))
        report = built_in_match(spec, make_offer(attrs={"agent_id": "a1", "runtimes": {"sim-task"}}))
        assert report.matched and report.locality_satisfied is False

    @given(task_specs(), resource_vectors(), attribute_sets())
    @settings(max_examples=300)
    def test_agrees_with_brute_force_oracle(self, spec, granted, attrs):
        offer = Offer(
            offer_id="o1", agent_id="a1", granted=granted, attributes=attrs, issued_at=0, ttl=30
        )
        assert built_in_match(spec, offer).matched == brute_force_matched(spec, offer)


def entry_for(spec, enqueued_at=0):
    record = TaskRecord.create("t-1", spec, tick=enqueued_at)
    deadline = None
    if spec.locality is not None:
        deadline = enqueued_at + spec.locality.wait_ticks
    return QueueEntry(task=record, enqueued_at=enqueued_at, locality_deadline=deadline)


class TestDecide:
    def test_local_offer_beats_larger_nonlocal(self):
        spec = make_spec(locality=DataLocality(attr="agent_id", value="a2", wait_ticks=10))
        small_local = make_offer("a2", granted=ResourceVector(cpus=1.0, mem_mb=256))
        big_remote = make_offer("a1", granted=ResourceVector(cpus=8.0, mem_mb=8192))
        decision = decide(entry_for(spec), [big_remote, small_local], now=1)
        assert decision.kind == "accept" and decision.offer.agent_id == "a2"

    def test_no_locality_accepts_immediately(self):
        decision = decide(entry_for(make_spec()), [make_offer("a1")], now=0)
        assert decision.kind == "accept"

    def test_wait_then_accept_after_deadline(self):
        spec = make_spec(locality=DataLocality(attr="agent_id", value="a9", wait_ticks=10))
        entry = entry_for(spec, enqueued_at=0)
        offer = make_offer("a1", issued_at=5)
        assert decide(entry, [offer], now=5).kind == "wait"
        late = make_offer("a1", issued_at=11)
        decision = decide(entry, [late], now=11)
        assert decision.kind == "accept" and decision.offer.agent_id == "a1"

    def test_nothing_matching_declines(self):
        spec = make_spec(required=ResourceVector(cpus=64.0))
        assert decide(entry_for(spec), [make_offer()], now=0).kind == "decline"

    def test_tie_break_probe_metric_then_agent_id(self):
        spec = make_spec()
        offers = [make_offer("a2"), make_offer("a1"), make_offer("a3")]
        no_metrics = decide(entry_for(spec), offers, now=0)
        assert no_metrics.offer.agent_id == "a1"
        with_metrics = decide(
            entry_for(spec), offers, now=0, probe_metrics={"a1": 0.9, "a3": 0.2}
        )
        assert with_metrics.offer.agent_id == "a3"


class TestMatcherHook:
    def test_always_false_matcher_blocks_dispatch(self):
        scheduler = Scheduler()
        scheduler.install_matcher(
            lambda spec, offer: MatchReport(matched=False, failed_constraint="nope")
        )
        scheduler.submit(make_spec(), now=0)
        scheduler.handle(offer_msg(make_offer()), now=1)
        effects = scheduler.on_tick(now=1)
        assert sends(effects, messages.ACCEPT) == []
        assert len(scheduler.queue) == 1

    def test_double_install_rejected(self):
        scheduler = Scheduler()
        scheduler.install_matcher(built_in_match)
        with pytest.raises(HookAlreadyInstalled):
            scheduler.install_matcher(built_in_match)

    def test_builtin_installed_explicitly_is_identity(self):
        scheduler = Scheduler()
        scheduler.install_matcher(built_in_match)
        spec, offer = make_spec(), make_offer()
        assert scheduler.match_offer(spec, offer) == built_in_match(spec, offer)

    def test_geo_fence_matcher(self):
        def geo_fence(spec, offer):
            lat, lon = offer.attributes.get("lat"), offer.attributes.get("lon")
            inside = (
                isinstance(lat, (int, float))
                and isinstance(lon, (int, float))
                and 40 <= lat <= 41
                and -74 <= lon <= -73
            )
            if inside:
                return MatchReport(matched=True)
            return MatchReport(matched=False, failed_constraint="geo-fence")

        scheduler = Scheduler()
        scheduler.install_matcher(geo_fence)
        in_fence = make_offer("a1", attrs={"lat": 40.5, "lon": -73.5})
        out_fence = make_offer("a2", attrs={"lat": 50.0, "lon": -73.5})
        assert scheduler.match_offer(make_spec(), in_fence).matched
        assert not scheduler.match_offer(make_spec(), out_fence).matched
        scheduler.reset_matcher()
        assert not scheduler.match_offer(make_spec(), in_fence).matched  # built-in again


def offer_msg(offer, metric=None):
    return Message(
        kind=messages.OFFER, sender="master", to="framework", seq=1, sent_at=offer.issued_at,
        fields={"offer": codec.to_wire(offer), "probe_metric": metric},
    )


def status_msg(task_id, state, agent_id="a1", classification=None, grace=None, exit_code=None,
               reason=None):
    return Message(
        kind=messages.STATUS, sender="master", to="framework", seq=1, sent_at=0,
        fields={"task_id": task_id, "agent_id": agent_id, "state": state,
                "classification": classification, "grace": grace, "exit_code": exit_code,
                "reason": reason},
    )


def scheduler_with_running_task(notifier=None, policy=None, config=None):
    scheduler = Scheduler(config=config or SystemConfig(), notifier=notifier)
    spec = make_spec() if policy is None else make_spec().__class__(
        **{**make_spec().__dict__, "restart_policy": policy}
    )
    (task_id,) = scheduler.submit(spec, now=0)
    scheduler.handle(offer_msg(make_offer()), now=1)
    scheduler.on_tick(now=1)
    scheduler.handle(status_msg(task_id, "staging"), now=2)
    scheduler.handle(status_msg(task_id, "running"), now=3)
    assert scheduler.tasks[task_id].state is TaskState.RUNNING
    return scheduler, task_id


class TestLostProcedure:
    def test_permanent_loss_requeues_from_store(self):
        scheduler, task_id = scheduler_with_running_task()
        effects = scheduler.handle(
            status_msg(task_id, "lost", classification="permanent"), now=10
        )
        assert scheduler.tasks[task_id].state is TaskState.QUEUED
        assert [e.task_id for e in scheduler.queue] == [task_id]
        requeued = notes(effects, "task_requeued")
        assert requeued and requeued[0].as_dict()["from_store"] is True

    def test_transient_loss_defers_requeue(self):
        scheduler, task_id = scheduler_with_running_task()
        scheduler.handle(status_msg(task_id, "lost", classification="transient", grace=7), now=10)
        assert scheduler.tasks[task_id].state is TaskState.LOST
        assert scheduler.deferred_requeues == {task_id: 17}
        scheduler.on_tick(now=16)
        assert scheduler.queue == []
        scheduler.on_tick(now=17)
        assert [e.task_id for e in scheduler.queue] == [task_id]

    def test_resurfaced_task_cancels_deferred_requeue(self):
        scheduler, task_id = scheduler_with_running_task()
        scheduler.handle(status_msg(task_id, "lost", classification="transient", grace=7), now=10)
        effects = scheduler.handle(status_msg(task_id, "running", reason="resurfaced"), now=12)
        assert scheduler.tasks[task_id].state is TaskState.RUNNING
        assert scheduler.deferred_requeues == {}
        assert notes(effects, "task_readopted")
        scheduler.on_tick(now=30)
        assert scheduler.queue == []

    def test_third_loss_requeues_two_replicas(self):
        scheduler, task_id = scheduler_with_running_task()
        for loss in range(2):
            base = 10 + 10 * loss
            scheduler.handle(status_msg(task_id, "lost", classification="permanent"), now=base)
            # re-dispatch and run again
            scheduler.handle(offer_msg(make_offer(issued_at=base + 1)), now=base + 1)
            scheduler.on_tick(now=base + 1)
            scheduler.handle(status_msg(task_id, "staging"), now=base + 2)
            scheduler.handle(status_msg(task_id, "running"), now=base + 3)
        scheduler.handle(status_msg(task_id, "lost", classification="permanent"), now=40)
        queued = [e.task_id for e in scheduler.queue]
        assert len(queued) == 2 and task_id in queued
        sibling = next(t for t in queued if t != task_id)
        group = scheduler.tasks[task_id].replica_group
        assert group and scheduler.tasks[sibling].replica_group == group

    def test_first_running_replica_kills_sibling(self):
        scheduler, task_id = scheduler_with_running_task()
        scheduler.loss_counts[task_id] = 2  # next loss crosses the threshold
        scheduler.handle(status_msg(task_id, "lost", classification="permanent"), now=20)
        queued = [e.task_id for e in scheduler.queue]
        sibling = next(t for t in queued if t != task_id)
        scheduler.handle(status_msg(task_id, "staging", agent_id="a1"), now=21)
        effects = scheduler.handle(status_msg(task_id, "running", agent_id="a1"), now=22)
        assert scheduler.tasks[sibling].state is TaskState.KILLED
        assert notes(effects, "replica_killed")
        assert [e.task_id for e in scheduler.queue] == []

    def test_unknown_task(self):
        scheduler = Scheduler()
        with pytest.raises(UnknownTask):
            scheduler.on_task_lost("ghost", now=1)


class TestFailureProcedure:
    def test_auto_policy_requeues_once_and_notifies(self):
        notifier = CollectingNotifier()
        scheduler, task_id = scheduler_with_running_task(notifier=notifier)
        scheduler.handle(status_msg(task_id, "failed", exit_code=3), now=9)
        assert [e["event"] for e in notifier.events] == ["task-failed"]
        assert notifier.events[0]["exit_code"] == 3
        assert [e.task_id for e in scheduler.queue] == [task_id]
        assert scheduler.tasks[task_id].state is TaskState.QUEUED

    def test_manual_policy_parks_until_restart(self):
        notifier = CollectingNotifier()
        scheduler = Scheduler(notifier=notifier)
        spec = TaskSpec(
            task_name="manual-job",
            runtime=RuntimeKind.SIM_TASK,
            artifact=artifact_for(b"x"),
            entry="sleep:1,exit:1",
            required=ResourceVector(cpus=0.5),
            restart_policy="manual",
        )
        (task_id,) = scheduler.submit(spec, now=0)
        scheduler.handle(offer_msg(make_offer()), now=1)
        scheduler.on_tick(now=1)
        scheduler.handle(status_msg(task_id, "staging"), now=2)
        scheduler.handle(status_msg(task_id, "running"), now=3)
        scheduler.handle(status_msg(task_id, "failed", exit_code=1), now=5)
        assert scheduler.tasks[task_id].state is TaskState.FAILED
        assert scheduler.queue == []
        assert len(notifier.events) == 1
        scheduler.restart_task(task_id, now=9)
        assert scheduler.tasks[task_id].state is TaskState.QUEUED
        assert [e.task_id for e in scheduler.queue] == [task_id]

    def test_unknown_task(self):
        scheduler = Scheduler()
        with pytest.raises(UnknownTask):
            scheduler.on_task_failed("ghost", now=1)

    def test_webhook_notifier_posts_event(self):
        import json
        import threading
        from http.server import BaseHTTPRequestHandler, HTTPServer

        from edgeorc.scheduler import WebhookNotifier

        received = []
        done = threading.Event()

        class Hook(BaseHTTPRequestHandler):
            def do_POST(self):
                body = self.rfile.read(int(self.headers["Content-Length"]))
                received.append(json.loads(body))
                self.send_response(204)
                self.end_headers()
                done.set()

            def log_message(self, *args):
                pass

        server = HTTPServer(("127.0.0.1", 0), Hook)
        threading.Thread(target=server.serve_forever, daemon=True).start()
        try:
            notifier = WebhookNotifier(f"http://127.0.0.1:{server.server_address[1]}/hook")
            notifier({"event": "task-failed", "task_id": "t-1"})
            assert done.wait(timeout=10)
            assert received == [{"event": "task-failed", "task_id": "t-1"}]
        finally:
            server.shutdown()


class TestOperatorActions:
    def test_kill_queued_task(self):
        scheduler = Scheduler()
        (task_id,) = scheduler.submit(make_spec(), now=0)
        scheduler.kill_task(task_id, now=1)
        assert scheduler.tasks[task_id].state is TaskState.KILLED
        assert scheduler.queue == []

    def test_kill_running_goes_through_master(self):
        scheduler, task_id = scheduler_with_running_task()
        scheduler.kill_task(task_id, now=5)
        kills = sends(scheduler.outbox.drain(), messages.KILL)
        assert kills and kills[0].fields["task_id"] == task_id

    def test_restart_running_is_illegal(self):
        scheduler, task_id = scheduler_with_running_task()
        with pytest.raises(IllegalAction):
            scheduler.restart_task(task_id, now=5)

    def test_kill_finished_is_illegal(self):
        scheduler, task_id = scheduler_with_running_task()
        scheduler.handle(status_msg(task_id, "finished"), now=6)
        with pytest.raises(IllegalAction):
            scheduler.kill_task(task_id, now=7)

    def test_restart_killed_resubmits_fresh_record(self):
        scheduler = Scheduler()
        (task_id,) = scheduler.submit(make_spec(), now=0)
        scheduler.kill_task(task_id, now=1)
        new_id = scheduler.restart_task(task_id, now=2)
        assert new_id != task_id
        assert scheduler.tasks[task_id].state is TaskState.KILLED
        assert scheduler.tasks[new_id].state is TaskState.QUEUED


class TestQueueDiscipline:
    def test_fifo_without_locality(self):
        scheduler = Scheduler()
        ids = []
        for i in range(3):
            ids += scheduler.submit(make_spec(name=f"job{i}"), now=0)
        order = []
        for tick in range(1, 10):
            for i, agent in enumerate(("a1", "a2", "a3")):
                scheduler.handle(
                    offer_msg(make_offer(agent, issued_at=tick, offer_id=f"o{tick}-{i}")), now=tick
                )
            effects = scheduler.on_tick(now=tick)
            order += [m.fields["task_id"] for m in sends(effects, messages.ACCEPT)]
            for task_id in order:
                if scheduler.tasks[task_id].state is TaskState.QUEUED:
                    scheduler.handle(status_msg(task_id, "staging"), now=tick)
        assert order == ids

    def test_unused_offers_declined(self):
        scheduler = Scheduler()
        scheduler.handle(offer_msg(make_offer("a1")), now=1)
        scheduler.handle(offer_msg(make_offer("a2")), now=1)
        effects = scheduler.on_tick(now=1)
        assert len(sends(effects, messages.DECLINE)) == 2

    def test_write_ahead_persist_then_announce(self):
        store = MemoryStore()
        scheduler = Scheduler(store=store)
        (task_id,) = scheduler.submit(make_spec(), now=0)
        assert store.get(KIND_TASK, task_id).state is TaskState.QUEUED
        scheduler.handle(offer_msg(make_offer()), now=1)
        scheduler.on_tick(now=1)
        scheduler.handle(status_msg(task_id, "staging"), now=2)
        assert store.get(KIND_TASK, task_id).state is TaskState.STAGING
