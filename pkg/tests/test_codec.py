"""Canonical encoding: strict decode and exact round-trips over
generated values of every registered domain type."""

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgeorc import codec
from edgeorc.domain import AttributeSet, ResourceVector, TaskRecord, TaskState, transition
from edgeorc.gateway import Checkpoint, DeviceRecord, Observation
from edgeorc.master import AgentRecord, Liveness, Offer
from edgeorc.messages import Message
from edgeorc.persistence import StoreRecord
from strategies import attribute_sets, resource_vectors, task_specs


@st.composite
def task_records(draw):
    spec = draw(task_specs())
    record = TaskRecord.create("task-1", spec, tick=0)
    path = draw(
        st.sampled_from(
            [
                (),
                (TaskState.STAGING,),
                (TaskState.STAGING, TaskState.RUNNING),
                (TaskState.STAGING, TaskState.RUNNING, TaskState.FINISHED),
                (TaskState.STAGING, TaskState.RUNNING, TaskState.LOST, TaskState.QUEUED),
            ]
        )
    )
    for i, state in enumerate(path, start=1):
        record = transition(record, state, tick=i, agent="agent-1")
    return record


@st.composite
def agent_records(draw):
    events = draw(
        st.lists(
            st.tuples(st.integers(0, 99), st.sampled_from(["suspect", "recovered"])), max_size=3
        )
    )
    return AgentRecord(
        agent_id="agent-1",
        gateway_id="gw-1",
        advertised=draw(resource_vectors()),
        attributes=draw(attribute_sets()),
        allocated=ResourceVector.zero(),
        liveness=Liveness("connected", draw(st.integers(0, 100))),
        failure_history=tuple(events),
        recovery_durations=tuple(draw(st.lists(st.integers(1, 30), max_size=5))),
    )


@st.composite
def offers(draw):
    return Offer(
        offer_id="o1",
        agent_id="agent-1",
        granted=draw(resource_vectors()),
        attributes=draw(attribute_sets()),
        issued_at=draw(st.integers(0, 100)),
        ttl=30,
    )


class TestRoundTrips:
    @given(resource_vectors())
    def test_resource_vector(self, rv):
        assert codec.decode_line(codec.encode_line(rv)) == rv

    @given(attribute_sets())
    def test_attribute_set(self, attrs):
        assert codec.decode_line(codec.encode_line(attrs)) == attrs

    @given(task_specs())
    def test_task_spec(self, spec):
        assert codec.decode_line(codec.encode_line(spec)) == spec

    @given(task_records())
    @settings(max_examples=50)
    def test_task_record(self, record):
        assert codec.decode_line(codec.encode_line(record)) == record

    @given(agent_records())
    @settings(max_examples=50)
    def test_agent_record(self, record):
        clone = codec.decode_line(codec.encode_line(record))
        assert codec.encode_line(clone) == codec.encode_line(record)

    @given(offers())
    @settings(max_examples=50)
    def test_offer(self, offer):
        assert codec.decode_line(codec.encode_line(offer)) == offer

    def test_observation_device_checkpoint_message(self):
        device = DeviceRecord(
            device_id="d1",
            resources=ResourceVector(cpus=1.0),
            attributes=AttributeSet.of({"os": "linux-arm", "sensors": {"gps"}}),
            last_seen=4,
        )
        for value in (
            Observation(observer_id="gw-1", subject_id="d1", score=0.75, at=3),
            Checkpoint(agent_id="d1.agent", running=(("t-1", "ab" * 32, "running"),), written_at=9),
            Message(kind="STATUS", sender="d1", to="master", seq=4, sent_at=7, fields={"x": 1}),
            device,
        ):
            assert codec.decode_line(codec.encode_line(value)) == value

    @given(task_records())
    @settings(max_examples=25)
    def test_store_record(self, record):
        sr = StoreRecord(kind="task", ident=record.task_id, version=3, value=codec.to_wire(record))
        assert codec.decode_line(codec.encode_line(sr)) == sr


class TestStrictness:
    def test_unknown_fields_rejected(self):
        line = codec.encode_line(Observation(observer_id="a", subject_id="b", score=0.5, at=1))
        data = json.loads(line)
        data["extra"] = 1
        with pytest.raises(codec.CodecError, match="unknown fields"):
            codec.from_wire(data)

    def test_missing_fields_rejected(self):
        data = json.loads(
            codec.encode_line(Observation(observer_id="a", subject_id="b", score=0.5, at=1))
        )
        del data["score"]
        with pytest.raises(codec.CodecError, match="missing field"):
            codec.from_wire(data)

    def test_unknown_kind_rejected(self):
        with pytest.raises(codec.CodecError, match="unknown kind"):
            codec.from_wire({"kind": "martian"})

    def test_field_order_irrelevant(self):
        obs = Observation(observer_id="a", subject_id="b", score=0.5, at=1)
        data = json.loads(codec.encode_line(obs))
        shuffled = json.dumps(dict(reversed(list(data.items()))))
        assert codec.decode_line(shuffled) == obs

    def test_encoding_is_stable(self):
        obs = Observation(observer_id="a", subject_id="b", score=0.5, at=1)
        assert codec.encode_line(obs) == codec.encode_line(obs)
