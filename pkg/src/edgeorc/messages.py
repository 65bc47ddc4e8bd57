"""Message envelope and the effect vocabulary nodes emit.

Every message carries the sender id, a per-sender sequence number (per
process incarnation), and the tick it was sent at.  The master-facing
wire protocol is the ten kinds in MASTER_PROTOCOL_KINDS; the remaining
kinds cover the gateway/device interface and the control surface, which
use the same canonical encoding but are not part of the master protocol.

Node handlers never touch the network or the process table directly:
they return effects (Send / Note / SpawnNode / RestartNode) and the
hosting environment — the simulator or the socket transport — interprets
them.  That keeps every handler a deterministic function of
(state, message, tick).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from . import codec

# Master protocol message kinds (wire contract).
REGISTER = "REGISTER"
HEARTBEAT = "HEARTBEAT"
OFFER = "OFFER"
ACCEPT = "ACCEPT"
DECLINE = "DECLINE"
LAUNCH = "LAUNCH"
STATUS = "STATUS"
PROBE = "PROBE"
PROBE_REPLY = "PROBE_REPLY"
KILL = "KILL"

MASTER_PROTOCOL_KINDS = frozenset(
    {REGISTER, HEARTBEAT, OFFER, ACCEPT, DECLINE, LAUNCH, STATUS, PROBE, PROBE_REPLY, KILL}
)

# Gateway/device interface kinds.
DEV_REGISTER = "DEV_REGISTER"
OBSERVATIONS = "OBSERVATIONS"
RECONCILE = "RECONCILE"
RECONCILE_REPLY = "RECONCILE_REPLY"
AGENT_CTL = "AGENT_CTL"  # gateway -> co-located agent / device directives

# Control surface kinds (control plane -> scheduler).
SUBMIT = "SUBMIT"
TASK_ACTION = "TASK_ACTION"


@dataclass(frozen=True)
class Message:
    kind: str
    sender: str
    to: str
    seq: int
    sent_at: int
    fields: dict = field(default_factory=dict)


def _encode_message(m: Message) -> dict:
    return {
        "msg_kind": m.kind,
        "sender": m.sender,
        "to": m.to,
        "seq": m.seq,
        "sent_at": m.sent_at,
        "fields": m.fields,
    }


@codec._strict
def _decode_message(f: codec._Fields) -> Message:
    return Message(
        kind=f.take("msg_kind"),
        sender=f.take("sender"),
        to=f.take("to"),
        seq=f.take("seq"),
        sent_at=f.take("sent_at"),
        fields=f.take("fields"),
    )


codec.register(Message, "message", _encode_message, _decode_message)


@dataclass(frozen=True)
class Send:
    message: Message


@dataclass(frozen=True)
class Note:
    """A trace row: structured evidence of something a node did."""

    kind: str
    node: str
    detail: tuple

    @classmethod
    def of(cls, kind: str, node: str, **detail) -> "Note":
        return cls(kind=kind, node=node, detail=tuple(sorted(detail.items())))

    def as_dict(self) -> dict:
        return dict(self.detail)


@dataclass(frozen=True)
class SpawnNode:
    """Start a co-located node (e.g. a proxy agent on its gateway host)."""

    node_id: str
    factory: Callable
    host: str


@dataclass(frozen=True)
class RestartNode:
    """Restart a stopped co-located process (watchdog action)."""

    node_id: str


Effect = "Send | Note | SpawnNode | RestartNode"


class Outbox:
    """Collects effects during one handler invocation and stamps
    sequence numbers on outgoing messages."""

    def __init__(self, node_id: str):
        self.node_id = node_id
        self._seq = 0
        self.effects: list = []

    def send(self, to: str, kind: str, now: int, **fields) -> Message:
        self._seq += 1
        msg = Message(
            kind=kind, sender=self.node_id, to=to, seq=self._seq, sent_at=now, fields=fields
        )
        self.effects.append(Send(msg))
        return msg

    def note(self, kind: str, **detail) -> None:
        self.effects.append(Note.of(kind, self.node_id, **detail))

    def spawn(self, node_id: str, factory: Callable, host: str) -> None:
        self.effects.append(SpawnNode(node_id=node_id, factory=factory, host=host))

    def restart(self, node_id: str) -> None:
        self.effects.append(RestartNode(node_id=node_id))

    def drain(self) -> list:
        effects, self.effects = self.effects, []
        return effects
