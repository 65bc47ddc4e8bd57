"""Canonical serialized form: one value per line of JSON.

Every registered type encodes to an object whose "kind" field names the
type.  Field order never matters (encoding sorts keys), unknown fields
are rejected on decode, and encode/decode round-trips are exact — the
same form travels on the wire, in checkpoints, in the store log, and in
simulation traces, so byte-identical traces imply identical histories.

Modules register their own types at import time via `register`; the
package `__init__` imports everything so the registry is populated
before any decode.
"""

from __future__ import annotations

import json
from typing import Callable

from . import domain
from .domain import (
    AttributeConstraint,
    AttributeSet,
    ArtifactRef,
    ConstraintOp,
    DataLocality,
    ResourceVector,
    RestartPolicy,
    RuntimeKind,
    TaskRecord,
    TaskSpec,
    TaskState,
)


class CodecError(Exception):
    pass


_ENCODERS: dict[type, tuple[str, Callable]] = {}
_DECODERS: dict[str, Callable] = {}


def register(cls: type, kind: str, encode: Callable, decode: Callable) -> None:
    if kind in _DECODERS:
        raise ValueError(f"kind {kind!r} already registered")
    _ENCODERS[cls] = (kind, encode)
    _DECODERS[kind] = decode


def to_wire(obj) -> dict:
    try:
        kind, encode = _ENCODERS[type(obj)]
    except KeyError:
        raise CodecError(f"no codec registered for {type(obj).__name__}") from None
    body = encode(obj)
    body["kind"] = kind
    return body


def from_wire(data: dict):
    if not isinstance(data, dict):
        raise CodecError(f"expected object, got {type(data).__name__}")
    payload = dict(data)
    kind = payload.pop("kind", None)
    if kind is None:
        raise CodecError("missing kind field")
    decode = _DECODERS.get(kind)
    if decode is None:
        raise CodecError(f"unknown kind {kind!r}")
    return decode(_Fields(kind, payload))


def encode_line(obj) -> str:
    return json.dumps(to_wire(obj), sort_keys=True, separators=(",", ":"))


def decode_line(line: str):
    try:
        data = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CodecError(f"bad encoding: {exc}") from exc
    return from_wire(data)


class _Fields:
    """Strict field reader: every field must be consumed, extras rejected."""

    _MISSING = object()

    def __init__(self, kind: str, payload: dict):
        self.kind = kind
        self._payload = payload

    def take(self, name: str, default=_MISSING):
        if name in self._payload:
            return self._payload.pop(name)
        if default is _Fields._MISSING:
            raise CodecError(f"{self.kind}: missing field {name!r}")
        return default

    def done(self):
        if self._payload:
            extra = ", ".join(sorted(self._payload))
            raise CodecError(f"{self.kind}: unknown fields: {extra}")


def _strict(decode):
    def wrapper(fields: _Fields):
        value = decode(fields)
        fields.done()
        return value

    return wrapper


def _attr_value_to_wire(value):
    if isinstance(value, frozenset):
        return {"set": sorted(value)}
    return value


def _attr_value_from_wire(value):
    if isinstance(value, dict):
        if set(value) != {"set"}:
            raise CodecError(f"bad attribute value object: {value}")
        return frozenset(value["set"])
    if isinstance(value, bool) or not isinstance(value, (str, int, float)):
        raise CodecError(f"bad attribute value: {value!r}")
    return value


def _encode_resource_vector(rv: ResourceVector) -> dict:
    return {
        "cpus": rv.cpus,
        "mem_mb": rv.mem_mb,
        "disk_mb": rv.disk_mb,
        "ports": [[lo, hi] for lo, hi in rv.ports],
        "gpus": rv.gpus,
    }


@_strict
def _decode_resource_vector(f: _Fields) -> ResourceVector:
    return ResourceVector(
        cpus=f.take("cpus"),
        mem_mb=f.take("mem_mb"),
        disk_mb=f.take("disk_mb"),
        ports=tuple((lo, hi) for lo, hi in f.take("ports")),
        gpus=f.take("gpus"),
    )


def _encode_attribute_set(a: AttributeSet) -> dict:
    return {"entries": {name: _attr_value_to_wire(value) for name, value in a.pairs}}


@_strict
def _decode_attribute_set(f: _Fields) -> AttributeSet:
    entries = f.take("entries")
    return AttributeSet.of({name: _attr_value_from_wire(v) for name, v in entries.items()})


def _encode_constraint(c: AttributeConstraint) -> dict:
    body: dict = {"name": c.name, "op": c.op.value}
    if c.op is ConstraintOp.EQUALS:
        body["value"] = c.value
    elif c.op is ConstraintOp.ONE_OF:
        body["choices"] = sorted(c.choices, key=lambda v: (str(type(v)), str(v)))
    elif c.op is ConstraintOp.NUMERIC_RANGE:
        body["lo"] = c.lo
        body["hi"] = c.hi
    return body


@_strict
def _decode_constraint(f: _Fields) -> AttributeConstraint:
    op = ConstraintOp(f.take("op"))
    name = f.take("name")
    if op is ConstraintOp.EXISTS:
        return AttributeConstraint.exists(name)
    if op is ConstraintOp.EQUALS:
        return AttributeConstraint.equals(name, f.take("value"))
    if op is ConstraintOp.ONE_OF:
        return AttributeConstraint.one_of(name, *f.take("choices"))
    return AttributeConstraint.numeric_range(name, f.take("lo"), f.take("hi"))


def _encode_artifact(a: ArtifactRef) -> dict:
    return {"sha256": a.sha256, "size_bytes": a.size_bytes}


@_strict
def _decode_artifact(f: _Fields) -> ArtifactRef:
    return ArtifactRef(sha256=f.take("sha256"), size_bytes=f.take("size_bytes"))


def _encode_locality(l: DataLocality) -> dict:
    return {"attr": l.attr, "value": l.value, "wait_ticks": l.wait_ticks}


@_strict
def _decode_locality(f: _Fields) -> DataLocality:
    return DataLocality(attr=f.take("attr"), value=f.take("value"), wait_ticks=f.take("wait_ticks"))


def _encode_task_spec(s: TaskSpec) -> dict:
    return {
        "task_name": s.task_name,
        "runtime": s.runtime.value,
        "artifact": to_wire(s.artifact),
        "entry": s.entry,
        "args": list(s.args),
        "instances": s.instances,
        "required": to_wire(s.required),
        "constraints": [to_wire(c) for c in s.constraints],
        "locality": to_wire(s.locality) if s.locality else None,
        "restart_policy": s.restart_policy.value,
    }


@_strict
def _decode_task_spec(f: _Fields) -> TaskSpec:
    locality = f.take("locality")
    return TaskSpec(
        task_name=f.take("task_name"),
        runtime=RuntimeKind(f.take("runtime")),
        artifact=from_wire(f.take("artifact")),
        entry=f.take("entry"),
        args=tuple(f.take("args")),
        instances=f.take("instances"),
        required=from_wire(f.take("required")),
        constraints=tuple(from_wire(c) for c in f.take("constraints")),
        locality=from_wire(locality) if locality else None,
        restart_policy=RestartPolicy(f.take("restart_policy")),
    )


def _encode_task_record(r: TaskRecord) -> dict:
    return {
        "task_id": r.task_id,
        "spec": to_wire(r.spec),
        "state": r.state.value,
        "assigned_agent": r.assigned_agent,
        "state_history": [[s.value, t] for s, t in r.state_history],
        "replica_group": r.replica_group,
    }


@_strict
def _decode_task_record(f: _Fields) -> TaskRecord:
    return TaskRecord(
        task_id=f.take("task_id"),
        spec=from_wire(f.take("spec")),
        state=TaskState(f.take("state")),
        assigned_agent=f.take("assigned_agent"),
        state_history=tuple((TaskState(s), t) for s, t in f.take("state_history")),
        replica_group=f.take("replica_group"),
    )


register(ResourceVector, "resources", _encode_resource_vector, _decode_resource_vector)
register(AttributeSet, "attributes", _encode_attribute_set, _decode_attribute_set)
register(AttributeConstraint, "constraint", _encode_constraint, _decode_constraint)
register(ArtifactRef, "artifact", _encode_artifact, _decode_artifact)
register(DataLocality, "locality", _encode_locality, _decode_locality)
register(TaskSpec, "task_spec", _encode_task_spec, _decode_task_spec)
register(TaskRecord, "task_record", _encode_task_record, _decode_task_record)
