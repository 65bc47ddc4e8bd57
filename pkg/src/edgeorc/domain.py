"""Shared vocabulary for the orchestrator.

Resource vectors, node attributes, constraint predicates, task
specifications and the task lifecycle state machine.  Everything here is
an immutable value type: safe to copy, send between event loops, put on
the wire, or replay from a store.

Two representation choices matter for correctness elsewhere:

* CPU quantities carry millicore precision.  Arithmetic and comparisons
  run on integer thousandths, so subtract-then-add round-trips are exact
  and the master's conservation checks never see float drift.
* Ports are modeled as explicit ranges, not counts, so an offer can
  grant specific ports and accounting can hand exactly those back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

MILLI = 1000
PORT_MIN = 1
PORT_MAX = 65535

# Component names in canonical order; errors report the first violation.
RESOURCE_COMPONENTS = ("cpus", "mem_mb", "disk_mb", "ports", "gpus")


class InsufficientResources(Exception):
    """A subtraction or fit check failed; names the first bad component."""

    def __init__(self, component: str, detail: str = ""):
        self.component = component
        msg = f"insufficient {component}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class IllegalTransition(Exception):
    """A task state change outside the legal transition relation."""

    def __init__(self, from_state: "TaskState", to_state: "TaskState"):
        self.from_state = from_state
        self.to_state = to_state
        super().__init__(f"illegal transition {from_state.value} -> {to_state.value}")


def _to_milli(cpus: float) -> int:
    if isinstance(cpus, bool) or not isinstance(cpus, (int, float)):
        raise ValueError(f"cpus must be numeric, got {type(cpus).__name__}")
    if not math.isfinite(cpus):
        raise ValueError("cpus must be finite")
    milli = round(cpus * MILLI)
    if milli < 0:
        raise ValueError("cpus must be non-negative")
    return milli


def _floor_with_guard(value: float) -> int:
    # Guards against binary-float artifacts like 0.29 * 100 -> 28.999...996;
    # the epsilon is far below the millicore/mebibyte grid.
    return int(math.floor(value + 1e-9))


def normalize_ports(ranges) -> tuple[tuple[int, int], ...]:
    """Sort and coalesce port ranges; adjacent and overlapping ranges merge.

    Idempotent: normalizing an already normalized tuple returns an equal
    tuple.
    """
    items: list[tuple[int, int]] = []
    for r in ranges:
        lo, hi = int(r[0]), int(r[1])
        if lo > hi:
            raise ValueError(f"port range lo > hi: ({lo}, {hi})")
        if lo < PORT_MIN or hi > PORT_MAX:
            raise ValueError(f"port range out of [{PORT_MIN}, {PORT_MAX}]: ({lo}, {hi})")
        items.append((lo, hi))
    items.sort()
    merged: list[list[int]] = []
    for lo, hi in items:
        if merged and lo <= merged[-1][1] + 1:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return tuple((lo, hi) for lo, hi in merged)


def ports_contain(outer: tuple[tuple[int, int], ...], inner: tuple[tuple[int, int], ...]) -> bool:
    """True when every port of `inner` lies inside some range of `outer`."""
    for lo, hi in inner:
        if not any(olo <= lo and hi <= ohi for olo, ohi in outer):
            return False
    return True


def ports_subtract(
    outer: tuple[tuple[int, int], ...], inner: tuple[tuple[int, int], ...]
) -> tuple[tuple[int, int], ...]:
    """Remove `inner` (must be contained) from `outer`, keeping ranges normalized."""
    result: list[tuple[int, int]] = []
    for lo, hi in outer:
        pieces = [(lo, hi)]
        for ilo, ihi in inner:
            next_pieces = []
            for plo, phi in pieces:
                if ihi < plo or ilo > phi:
                    next_pieces.append((plo, phi))
                    continue
                if plo < ilo:
                    next_pieces.append((plo, ilo - 1))
                if ihi < phi:
                    next_pieces.append((ihi + 1, phi))
            pieces = next_pieces
        result.extend(pieces)
    return normalize_ports(result)


def port_count(ports: tuple[tuple[int, int], ...]) -> int:
    return sum(hi - lo + 1 for lo, hi in ports)


@dataclass(frozen=True)
class ResourceVector:
    """Quantitative capacity: fractional cpus, mebibytes, port ranges, gpus.

    All quantities are non-negative; port ranges are disjoint and
    normalized on construction.  Addition is componentwise (ports union);
    subtraction is defined only when the result stays non-negative and
    the subtrahend's ports are contained in the minuend's.
    """

    cpus: float = 0.0
    mem_mb: int = 0
    disk_mb: int = 0
    ports: tuple[tuple[int, int], ...] = ()
    gpus: int = 0

    def __post_init__(self):
        milli = _to_milli(self.cpus)
        object.__setattr__(self, "cpus", milli / MILLI)
        for name in ("mem_mb", "disk_mb", "gpus"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")
        object.__setattr__(self, "ports", normalize_ports(self.ports))

    @property
    def cpu_millis(self) -> int:
        return round(self.cpus * MILLI)

    def __add__(self, other: "ResourceVector") -> "ResourceVector":
        return ResourceVector(
            cpus=(self.cpu_millis + other.cpu_millis) / MILLI,
            mem_mb=self.mem_mb + other.mem_mb,
            disk_mb=self.disk_mb + other.disk_mb,
            ports=normalize_ports(self.ports + other.ports),
            gpus=self.gpus + other.gpus,
        )

    def subtract(self, other: "ResourceVector") -> "ResourceVector":
        """Componentwise difference; raises InsufficientResources on the
        first component (in canonical order) that would go negative."""
        if other.cpu_millis > self.cpu_millis:
            raise InsufficientResources("cpus", f"{other.cpus} > {self.cpus}")
        if other.mem_mb > self.mem_mb:
            raise InsufficientResources("mem_mb", f"{other.mem_mb} > {self.mem_mb}")
        if other.disk_mb > self.disk_mb:
            raise InsufficientResources("disk_mb", f"{other.disk_mb} > {self.disk_mb}")
        if not ports_contain(self.ports, other.ports):
            raise InsufficientResources("ports", f"{other.ports} not within {self.ports}")
        if other.gpus > self.gpus:
            raise InsufficientResources("gpus", f"{other.gpus} > {self.gpus}")
        return ResourceVector(
            cpus=(self.cpu_millis - other.cpu_millis) / MILLI,
            mem_mb=self.mem_mb - other.mem_mb,
            disk_mb=self.disk_mb - other.disk_mb,
            ports=ports_subtract(self.ports, other.ports),
            gpus=self.gpus - other.gpus,
        )

    def fits_in(self, outer: "ResourceVector") -> bool:
        return (
            self.cpu_millis <= outer.cpu_millis
            and self.mem_mb <= outer.mem_mb
            and self.disk_mb <= outer.disk_mb
            and ports_contain(outer.ports, self.ports)
            and self.gpus <= outer.gpus
        )

    def is_zero(self) -> bool:
        return (
            self.cpu_millis == 0
            and self.mem_mb == 0
            and self.disk_mb == 0
            and not self.ports
            and self.gpus == 0
        )

    def scale_floor(self, fraction: float) -> "ResourceVector":
        """Scale down by `fraction`, rounding integer quantities (and
        millicores) down; ports pass through unchanged."""
        if not 0 < fraction <= 1:
            raise ValueError(f"fraction must be in (0, 1], got {fraction}")
        return ResourceVector(
            cpus=_floor_with_guard(self.cpu_millis * fraction) / MILLI,
            mem_mb=_floor_with_guard(self.mem_mb * fraction),
            disk_mb=_floor_with_guard(self.disk_mb * fraction),
            ports=self.ports,
            gpus=_floor_with_guard(self.gpus * fraction),
        )

    @classmethod
    def zero(cls) -> "ResourceVector":
        return cls()


AttributeValue = "str | int | float | frozenset[str]"


def _check_attribute_value(name: str, value):
    if isinstance(value, bool):
        raise ValueError(f"attribute {name!r}: booleans are not attribute values")
    if isinstance(value, str):
        return value
    if isinstance(value, (int, float)):
        if not math.isfinite(value):
            raise ValueError(f"attribute {name!r}: numeric value must be finite")
        return value
    if isinstance(value, (set, frozenset, tuple, list)):
        members = frozenset(value)
        if not members:
            raise ValueError(f"attribute {name!r}: text-set must be non-empty")
        if not all(isinstance(m, str) for m in members):
            raise ValueError(f"attribute {name!r}: text-set members must be text")
        return members
    raise ValueError(f"attribute {name!r}: unsupported value type {type(value).__name__}")


@dataclass(frozen=True)
class AttributeSet:
    """Key-value descriptors of a node: text, numbers, or text-sets.

    Stored as a sorted tuple of pairs so equality and serialization are
    canonical.  Use `attrs(...)` or `AttributeSet.of(mapping)` to build.
    """

    pairs: tuple = ()

    def __post_init__(self):
        seen = {}
        for name, value in self.pairs:
            if not isinstance(name, str) or not name:
                raise ValueError(f"attribute name must be a non-empty string, got {name!r}")
            if name in seen:
                raise ValueError(f"duplicate attribute name {name!r}")
            seen[name] = _check_attribute_value(name, value)
        object.__setattr__(self, "pairs", tuple(sorted(seen.items())))

    @classmethod
    def of(cls, mapping=None, **kwargs) -> "AttributeSet":
        entries = dict(mapping or {})
        entries.update(kwargs)
        return cls(tuple(entries.items()))

    def get(self, name: str):
        for key, value in self.pairs:
            if key == name:
                return value
        return None

    def has(self, name: str) -> bool:
        return any(key == name for key, _ in self.pairs)

    def names(self) -> tuple[str, ...]:
        return tuple(key for key, _ in self.pairs)

    def as_dict(self) -> dict:
        return dict(self.pairs)

    def merged(self, other: "AttributeSet | dict") -> "AttributeSet":
        entries = self.as_dict()
        entries.update(other.as_dict() if isinstance(other, AttributeSet) else other)
        return AttributeSet.of(entries)

    def __len__(self) -> int:
        return len(self.pairs)


def attrs(mapping=None, **kwargs) -> AttributeSet:
    return AttributeSet.of(mapping, **kwargs)


class ConstraintOp(str, Enum):
    EXISTS = "exists"
    EQUALS = "equals"
    ONE_OF = "one-of"
    NUMERIC_RANGE = "numeric-range"


@dataclass(frozen=True)
class AttributeConstraint:
    """A single placement predicate over a node's attribute set.

    Against a text-set attribute, EQUALS means membership and ONE_OF
    means non-empty intersection, so a constraint like
    equals("sensors", "accelerometer") matches a device whose sensor
    list contains it.  NUMERIC_RANGE is inclusive and matches only
    numeric attribute values.
    """

    name: str
    op: ConstraintOp
    value: "str | int | float | None" = None
    choices: "frozenset | None" = None
    lo: "float | None" = None
    hi: "float | None" = None

    def __post_init__(self):
        if not self.name:
            raise ValueError("constraint needs an attribute name")
        op = ConstraintOp(self.op)
        object.__setattr__(self, "op", op)
        if op is ConstraintOp.EQUALS and self.value is None:
            raise ValueError("equals constraint needs a value")
        if op is ConstraintOp.ONE_OF:
            if not self.choices:
                raise ValueError("one-of constraint needs a non-empty choice set")
            object.__setattr__(self, "choices", frozenset(self.choices))
        if op is ConstraintOp.NUMERIC_RANGE:
            if self.lo is None or self.hi is None or self.lo > self.hi:
                raise ValueError("numeric-range constraint needs lo <= hi")

    @classmethod
    def exists(cls, name: str) -> "AttributeConstraint":
        return cls(name=name, op=ConstraintOp.EXISTS)

    @classmethod
    def equals(cls, name: str, value) -> "AttributeConstraint":
        return cls(name=name, op=ConstraintOp.EQUALS, value=value)

    @classmethod
    def one_of(cls, name: str, *values) -> "AttributeConstraint":
        return cls(name=name, op=ConstraintOp.ONE_OF, choices=frozenset(values))

    @classmethod
    def numeric_range(cls, name: str, lo: float, hi: float) -> "AttributeConstraint":
        return cls(name=name, op=ConstraintOp.NUMERIC_RANGE, lo=lo, hi=hi)

    def satisfied_by(self, attributes: AttributeSet) -> bool:
        value = attributes.get(self.name)
        if self.op is ConstraintOp.EXISTS:
            return value is not None
        if value is None:
            return False
        if self.op is ConstraintOp.EQUALS:
            if isinstance(value, frozenset):
                return self.value in value
            return value == self.value
        if self.op is ConstraintOp.ONE_OF:
            if isinstance(value, frozenset):
                return bool(value & self.choices)
            return value in self.choices
        # NUMERIC_RANGE
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return False
        return self.lo <= value <= self.hi


class RuntimeKind(str, Enum):
    JVM_APP = "jvm-app"
    PYTHON_APP = "python-app"
    NODEJS_APP = "nodejs-app"
    BROWSER_SCRIPT = "browser-script"
    SHELL_SCRIPT = "shell-script"
    GROOVY_APP = "groovy-app"
    # Scripted stand-in executed under virtual time; only legal when the
    # system runs in simulation mode.
    SIM_TASK = "sim-task"


class RestartPolicy(str, Enum):
    AUTO = "auto"
    MANUAL = "manual"


# Attribute under which an agent advertises the runtimes it can execute.
RUNTIMES_ATTR = "runtimes"
# Attribute injected by the master into offers so constraints and
# locality rules can pin a task to a specific agent.
AGENT_ID_ATTR = "agent_id"


@dataclass(frozen=True)
class ArtifactRef:
    """Content-addressed reference to a code archive."""

    sha256: str
    size_bytes: int

    def __post_init__(self):
        if len(self.sha256) != 64 or any(c not in "0123456789abcdef" for c in self.sha256):
            raise ValueError("sha256 must be 64 lowercase hex chars")
        if self.size_bytes < 0:
            raise ValueError("size_bytes must be non-negative")


@dataclass(frozen=True)
class DataLocality:
    """Prefer the node whose `attr` equals `value`; wait up to
    `wait_ticks` before settling for a non-local placement."""

    attr: str
    value: "str | int | float"
    wait_ticks: int

    def __post_init__(self):
        if not self.attr:
            raise ValueError("locality needs an attribute name")
        if self.wait_ticks < 0:
            raise ValueError("locality wait budget must be >= 0")


@dataclass(frozen=True)
class TaskSpec:
    """What to run: runtime, archive, entry point, and placement needs."""

    task_name: str
    runtime: RuntimeKind
    artifact: ArtifactRef
    entry: str
    args: tuple[str, ...] = ()
    instances: int = 1
    required: ResourceVector = field(default_factory=ResourceVector)
    constraints: tuple[AttributeConstraint, ...] = ()
    locality: "DataLocality | None" = None
    restart_policy: RestartPolicy = RestartPolicy.AUTO

    def __post_init__(self):
        if not self.task_name:
            raise ValueError("task_name must be non-empty")
        object.__setattr__(self, "runtime", RuntimeKind(self.runtime))
        object.__setattr__(self, "restart_policy", RestartPolicy(self.restart_policy))
        object.__setattr__(self, "args", tuple(self.args))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if self.instances < 1:
            raise ValueError("instances must be >= 1")


class TaskState(str, Enum):
    QUEUED = "queued"
    STAGING = "staging"
    RUNNING = "running"
    FINISHED = "finished"
    FAILED = "failed"
    LOST = "lost"
    KILLED = "killed"


# Queued and Staging extend the externally visible running/lost/killed
# vocabulary so the recovery procedures are expressible: a record exists
# before launch (Queued) and between launch and the first executor
# report (Staging).  Killed is reachable from Queued and Staging as well
# as Running so an operator kill always terminates the record; Finished
# and Killed have no exits — an operator restart of a killed task
# resubmits a fresh record instead of reviving the old one.
LEGAL_TRANSITIONS: dict[TaskState, frozenset] = {
    TaskState.QUEUED: frozenset({TaskState.STAGING, TaskState.KILLED}),
    TaskState.STAGING: frozenset(
        {TaskState.RUNNING, TaskState.FAILED, TaskState.LOST, TaskState.KILLED}
    ),
    TaskState.RUNNING: frozenset(
        {TaskState.FINISHED, TaskState.FAILED, TaskState.LOST, TaskState.KILLED}
    ),
    TaskState.LOST: frozenset({TaskState.QUEUED}),
    TaskState.FAILED: frozenset({TaskState.QUEUED}),
    TaskState.FINISHED: frozenset(),
    TaskState.KILLED: frozenset(),
}

TERMINAL_STATES = frozenset({TaskState.FINISHED, TaskState.KILLED})


def is_terminal(state: TaskState) -> bool:
    return state in TERMINAL_STATES


@dataclass(frozen=True)
class TaskRecord:
    """A task's lifecycle: spec, current state, and full state history."""

    task_id: str
    spec: TaskSpec
    state: TaskState
    assigned_agent: "str | None"
    state_history: tuple = ()
    replica_group: "str | None" = None

    def __post_init__(self):
        if not self.state_history:
            raise ValueError("state_history must not be empty")
        history = tuple((TaskState(s), int(t)) for s, t in self.state_history)
        object.__setattr__(self, "state_history", history)
        object.__setattr__(self, "state", TaskState(self.state))
        if history[-1][0] is not self.state:
            raise ValueError("state must equal the last history entry")
        ticks = [t for _, t in history]
        if any(b < a for a, b in zip(ticks, ticks[1:])):
            raise ValueError("state_history ticks must be non-decreasing")
        needs_agent = self.state in (TaskState.STAGING, TaskState.RUNNING)
        if needs_agent and self.assigned_agent is None:
            raise ValueError(f"{self.state.value} record needs an assigned agent")
        if not needs_agent and self.assigned_agent is not None:
            raise ValueError(f"{self.state.value} record must not carry an agent")

    @classmethod
    def create(
        cls,
        task_id: str,
        spec: TaskSpec,
        tick: int,
        state: TaskState = TaskState.QUEUED,
        agent: "str | None" = None,
        replica_group: "str | None" = None,
    ) -> "TaskRecord":
        return cls(
            task_id=task_id,
            spec=spec,
            state=state,
            assigned_agent=agent,
            state_history=((state, tick),),
            replica_group=replica_group,
        )

    def tick_of(self, state: TaskState) -> "int | None":
        """Tick of the first history entry in `state`, if any."""
        for s, t in self.state_history:
            if s is state:
                return t
        return None


def transition(
    record: TaskRecord, to: TaskState, tick: int, agent: "str | None" = None
) -> TaskRecord:
    """Move a record to a new state, appending to its history.

    Raises IllegalTransition (leaving `record` untouched — records are
    immutable) when the move is outside the legal relation.  `agent` is
    required when entering Staging, carried through into Running, and
    cleared on every other state.
    """
    to = TaskState(to)
    if to not in LEGAL_TRANSITIONS[record.state]:
        raise IllegalTransition(record.state, to)
    if to is TaskState.STAGING:
        if agent is None:
            raise ValueError("transition to staging requires an agent id")
        next_agent = agent
    elif to is TaskState.RUNNING:
        next_agent = agent if agent is not None else record.assigned_agent
    else:
        next_agent = None
    last_tick = record.state_history[-1][1]
    if tick < last_tick:
        raise ValueError(f"transition tick {tick} precedes history tick {last_tick}")
    return replace(
        record,
        state=to,
        assigned_agent=next_agent,
        state_history=record.state_history + ((to, tick),),
    )
