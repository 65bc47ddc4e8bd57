"""Operator surface: deployment and inspection over HTTP plus the
machinery the CLI and the dashboard consume.

The service never mutates scheduler or master state directly: every
mutation becomes a message into the framework's event loop, exactly as
if another scheduler peer had sent it; reads are snapshots.  Mutating
endpoints are idempotent under retry when the client supplies a request
id (duplicates return the original response; without an id, dedup is
off).  A static bearer token guards mutations when configured.

Endpoints:
    POST /tasks                multipart: manifest + archive (+placement)
    GET  /tasks                ?agent= &state= &name=
    POST /tasks/{id}/actions   {"action": "kill" | "restart"}
    GET  /tasks/{id}/logs
    GET  /agents
    GET  /attributes           ?<attr>=<value> device filters
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from . import codec, messages
from .domain import (
    AGENT_ID_ATTR,
    ArtifactRef,
    AttributeConstraint,
    ResourceVector,
    RuntimeKind,
    TaskSpec,
    TaskState,
)

from .master import Master
from .messages import Message
from .scheduler import Scheduler

log = logging.getLogger(__name__)


class InvalidManifest(Exception):
    pass


class UnknownAgent(Exception):
    pass


class UnknownTask(Exception):
    pass


class IllegalAction(Exception):
    pass


class Unauthorized(Exception):
    pass


def parse_manifest(raw: bytes) -> dict:
    """Validate a submission manifest document and fill defaults.

    Required: name, runtime, entry.  Optional: args, instances,
    required resources, constraints, locality, restart_policy, and an
    informational dependency list.
    """
    try:
        doc = json.loads(raw.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InvalidManifest(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise InvalidManifest("manifest must be an object")
    for field in ("name", "runtime", "entry"):
        if field not in doc:
            raise InvalidManifest(f"manifest missing field {field!r}")
    try:
        RuntimeKind(doc["runtime"])
    except ValueError as exc:
        raise InvalidManifest(str(exc)) from exc
    return doc


def spec_from_manifest(doc: dict, artifact: ArtifactRef) -> TaskSpec:
    required = ResourceVector()
    if "required" in doc:
        body = dict(doc["required"])
        body["kind"] = "resources"
        body.setdefault("cpus", 0.0)
        body.setdefault("mem_mb", 0)
        body.setdefault("disk_mb", 0)
        body.setdefault("ports", [])
        body.setdefault("gpus", 0)
        required = codec.from_wire(body)
    constraints = []
    for c in doc.get("constraints", []):
        body = dict(c)
        body["kind"] = "constraint"
        constraints.append(codec.from_wire(body))
    locality = None
    if doc.get("locality"):
        body = dict(doc["locality"])
        body["kind"] = "locality"
        locality = codec.from_wire(body)
    try:
        return TaskSpec(
            task_name=doc["name"],
            runtime=RuntimeKind(doc["runtime"]),
            artifact=artifact,
            entry=doc["entry"],
            args=tuple(doc.get("args", [])),
            instances=int(doc.get("instances", 1)),
            required=required,
            constraints=tuple(constraints),
            locality=locality,
            restart_policy=doc.get("restart_policy", "auto"),
        )
    except (ValueError, codec.CodecError) as exc:
        raise InvalidManifest(str(exc)) from exc


class SimHandle:
    """Bridge to a simulated system: mutations become messages into the
    framework's loop, then virtual time advances a couple of ticks so
    the loop processes them; reads are snapshots of node state."""

    def __init__(self, sim, scheduler_id: str = "fw1", master_id: str = "master",
                 settle_ticks: int = 2):
        self.sim = sim.start()
        self.scheduler_id = scheduler_id
        self.master_id = master_id
        self.settle_ticks = settle_ticks
        self._seq = 0

    # -- loop access -------------------------------------------------------

    def _scheduler(self) -> Scheduler:
        node = self.sim.node(self.scheduler_id)
        if node is None:
            raise RuntimeError("framework is down")
        return node

    def _master(self) -> "Master | None":
        return self.sim.node(self.master_id)

    def _inject(self, kind: str, fields: dict):
        self._seq += 1
        msg = Message(
            kind=kind,
            sender="control-plane",
            to=self.scheduler_id,
            seq=self._seq,
            sent_at=self.sim.now,
            fields=fields,
        )
        from .simnet import DELIVER, SimEvent

        self.sim.inject(SimEvent(at=self.sim.now, kind=DELIVER, message=msg))
        self.sim.step(self.settle_ticks)

    @property
    def sim_mode(self) -> bool:
        return True

    def submit(self, spec: TaskSpec, archive_b64: "str | None", request_id: str) -> list[str]:
        before = set(self._scheduler().tasks)
        fields = {"spec": codec.to_wire(spec), "request_id": request_id}
        if archive_b64:
            fields["archive_b64"] = archive_b64
        self._inject(messages.SUBMIT, fields)
        after = self._scheduler().tasks
        return sorted(t for t in after if t not in before)

    def action(self, task_id: str, action: str) -> None:
        self._inject(messages.TASK_ACTION, {"task_id": task_id, "action": action})

    def tasks(self) -> dict:
        return dict(self._scheduler().tasks)

    def agents(self) -> dict:
        master = self._master()
        return dict(master.agents) if master is not None else {}

    def logs(self, task_id: str) -> str:
        # Simulated executors write no files; their observable log is the
        # state history.
        record = self._scheduler().tasks.get(task_id)
        if record is None:
            raise UnknownTask(task_id)
        lines = [f"tick {tick}: {state.value}" for state, tick in record.state_history]
        return "\n".join(lines) + "\n"


@dataclass
class TaskRow:
    name: str
    task_id: str
    runtime: str
    status: str
    started: "int | None"
    stopped: "int | None"
    agent: "str | None"
    restart_policy: str = "auto"

    def as_dict(self) -> dict:
        return self.__dict__.copy()


_TERMINAL_OR_LOST = (TaskState.FINISHED, TaskState.FAILED, TaskState.LOST, TaskState.KILLED)


class ControlPlaneService:
    def __init__(self, handle, token: "str | None" = None):
        self.handle = handle
        self.token = token
        self._dedup: dict[str, dict] = {}
        self._lock = threading.Lock()

    # -- operations -----------------------------------------------------------

    def submit(self, manifest_raw: bytes, archive: bytes, placement=None,
               request_id: "str | None" = None) -> dict:
        if request_id:
            with self._lock:
                if request_id in self._dedup:
                    return self._dedup[request_id]
        doc = parse_manifest(manifest_raw)
        if RuntimeKind(doc["runtime"]) is RuntimeKind.SIM_TASK and not self.handle.sim_mode:
            raise InvalidManifest("sim-task is only accepted in simulation mode")
        artifact = ArtifactRef(
            sha256=hashlib.sha256(archive).hexdigest(), size_bytes=len(archive)
        )
        spec = spec_from_manifest(doc, artifact)
        if placement:
            known = self.handle.agents()
            for agent_id in placement:
                if agent_id not in known:
                    raise UnknownAgent(agent_id)
            if len(placement) == 1:
                pin = AttributeConstraint.equals(AGENT_ID_ATTR, placement[0])
            else:
                pin = AttributeConstraint.one_of(AGENT_ID_ATTR, *placement)
            spec = TaskSpec(
                **{
                    **{f: getattr(spec, f) for f in spec.__dataclass_fields__},
                    "constraints": spec.constraints + (pin,),
                }
            )
        import base64

        archive_b64 = base64.b64encode(archive).decode() if archive else None
        ids = self.handle.submit(spec, archive_b64, request_id or "")
        response = {"task_ids": ids}
        if request_id:
            with self._lock:
                self._dedup[request_id] = response
        return response

    def list_tasks(self, agent=None, state=None, name=None) -> list[dict]:
        rows = []
        for record in self.handle.tasks().values():
            started = record.tick_of(TaskState.RUNNING)
            stopped = None
            for terminal in _TERMINAL_OR_LOST:
                tick = record.tick_of(terminal)
                if tick is not None:
                    stopped = tick if stopped is None else min(stopped, tick)
            row = TaskRow(
                name=record.spec.task_name,
                task_id=record.task_id,
                runtime=record.spec.runtime.value,
                status=record.state.value,
                started=started,
                stopped=stopped if record.state in _TERMINAL_OR_LOST else None,
                agent=record.assigned_agent,
                restart_policy=record.spec.restart_policy.value,
            )
            if agent is not None and row.agent != agent:
                continue
            if state is not None and row.status != state:
                continue
            if name is not None and row.name != name:
                continue
            created = record.state_history[0][1]
            rows.append((created, record.task_id, row))
        rows.sort(key=lambda item: (-item[0], item[1]))
        return [row.as_dict() for _, _, row in rows]

    def task_action(self, task_id: str, action: str, request_id: "str | None" = None) -> dict:
        if request_id:
            with self._lock:
                if request_id in self._dedup:
                    return self._dedup[request_id]
        record = self.handle.tasks().get(task_id)
        if record is None:
            raise UnknownTask(task_id)
        if action == "kill":
            legal = record.state in (TaskState.QUEUED, TaskState.STAGING, TaskState.RUNNING)
        elif action == "restart":
            legal = record.state in (TaskState.FAILED, TaskState.KILLED, TaskState.LOST)
        else:
            raise IllegalAction(f"unknown action {action!r}")
        if not legal:
            raise IllegalAction(f"cannot {action} a task in state {record.state.value}")
        self.handle.action(task_id, action)
        response = {"task_id": task_id, "action": action, "accepted": True}
        if request_id:
            with self._lock:
                self._dedup[request_id] = response
        return response

    def task_logs(self, task_id: str) -> str:
        if task_id not in self.handle.tasks():
            raise UnknownTask(task_id)
        return self.handle.logs(task_id)

    def list_agents(self) -> list[dict]:
        rows = []
        for agent_id, record in sorted(self.handle.agents().items()):
            rows.append(
                {
                    "agent_id": agent_id,
                    "gateway_id": record.gateway_id,
                    "liveness": record.liveness.kind,
                    "cpus": record.advertised.cpus,
                    "mem_mb": record.advertised.mem_mb,
                    "allocated_cpus": record.allocated.cpus,
                    "allocated_mem_mb": record.allocated.mem_mb,
                    "attributes": _attrs_jsonable(record.attributes),
                }
            )
        return rows

    def list_attributes(self, filters: "dict | None" = None) -> dict:
        """Union of attribute names/values over matching agents, ready
        to populate a constraint picker."""
        filters = filters or {}
        union: dict[str, set] = {}
        for agent_id, record in self.handle.agents().items():
            attrs = record.attributes.as_dict()
            # same view the matcher sees: offers carry the agent id too
            attrs.setdefault(AGENT_ID_ATTR, agent_id)
            if not all(_attr_matches(attrs.get(k), v) for k, v in filters.items()):
                continue
            for name, value in attrs.items():
                bucket = union.setdefault(name, set())
                if isinstance(value, frozenset):
                    bucket.update(value)
                else:
                    bucket.add(value)
        return {name: sorted(values, key=str) for name, values in sorted(union.items())}

    # -- auth ----------------------------------------------------------------

    def check_token(self, presented: "str | None"):
        if self.token is not None and presented != self.token:
            raise Unauthorized("missing or wrong bearer token")


def _attr_matches(value, wanted: str) -> bool:
    if value is None:
        return False
    if isinstance(value, frozenset):
        return wanted in value
    return str(value) == wanted


def _attrs_jsonable(attrs) -> dict:
    out = {}
    for name, value in attrs.pairs:
        out[name] = sorted(value) if isinstance(value, frozenset) else value
    return out


# --------------------------------------------------------------------------
# HTTP layer


def parse_multipart(content_type: str, body: bytes) -> dict[str, bytes]:
    """Minimal multipart/form-data parser: name -> raw bytes."""
    if "boundary=" not in content_type:
        raise ValueError("multipart body without boundary")
    boundary = content_type.split("boundary=", 1)[1].strip().strip('"')
    delimiter = b"--" + boundary.encode()
    parts: dict[str, bytes] = {}
    for chunk in body.split(delimiter):
        chunk = chunk.strip(b"\r\n")
        if not chunk or chunk == b"--":
            continue
        if b"\r\n\r\n" not in chunk:
            continue
        header_blob, payload = chunk.split(b"\r\n\r\n", 1)
        name = None
        for line in header_blob.split(b"\r\n"):
            lowered = line.lower()
            if lowered.startswith(b"content-disposition") and b"name=" in line:
                fragment = line.split(b"name=", 1)[1]
                name = fragment.split(b";")[0].strip().strip(b'"').decode()
                break
        if name:
            parts[name] = payload
    return parts


def encode_multipart(fields: dict[str, bytes]) -> tuple[str, bytes]:
    boundary = "edgeorc-boundary-7d1"
    lines = []
    for name, payload in fields.items():
        lines.append(f"--{boundary}".encode())
        lines.append(
            f'Content-Disposition: form-data; name="{name}"; filename="{name}"'.encode()
        )
        lines.append(b"")
        lines.append(payload)
    lines.append(f"--{boundary}--".encode())
    return f"multipart/form-data; boundary={boundary}", b"\r\n".join(lines)


class _Handler(BaseHTTPRequestHandler):
    service: ControlPlaneService = None
    server_lock: threading.Lock = None

    def log_message(self, fmt, *args):
        log.debug("http: " + fmt, *args)

    def _reply(self, status: int, payload, content_type="application/json"):
        body = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _error(self, status: int, exc: Exception):
        self._reply(status, {"error": type(exc).__name__, "detail": str(exc)})

    def _bearer(self) -> "str | None":
        header = self.headers.get("Authorization", "")
        if header.startswith("Bearer "):
            return header[len("Bearer "):]
        return None

    def do_OPTIONS(self):
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Authorization, Content-Type, X-Request-Id")
        self.end_headers()

    def do_GET(self):
        url = urlparse(self.path)
        query = {k: v[0] for k, v in parse_qs(url.query).items()}
        parts = [p for p in url.path.split("/") if p]
        try:
            with self.server_lock:
                if parts == ["tasks"]:
                    rows = self.service.list_tasks(
                        agent=query.get("agent"), state=query.get("state"), name=query.get("name")
                    )
                    self._reply(200, {"tasks": rows})
                elif len(parts) == 3 and parts[0] == "tasks" and parts[2] == "logs":
                    text = self.service.task_logs(parts[1])
                    self._reply(200, text.encode(), content_type="text/plain")
                elif parts == ["agents"]:
                    self._reply(200, {"agents": self.service.list_agents()})
                elif parts == ["attributes"]:
                    self._reply(200, {"attributes": self.service.list_attributes(query)})
                else:
                    self._reply(404, {"error": "NotFound", "detail": self.path})
        except UnknownTask as exc:
            self._error(404, exc)
        except Exception as exc:  # surface anything else as a 500 with detail
            log.exception("GET %s failed", self.path)
            self._error(500, exc)

    def do_POST(self):
        url = urlparse(self.path)
        parts = [p for p in url.path.split("/") if p]
        length = int(self.headers.get("Content-Length", "0"))
        body = self.rfile.read(length) if length else b""
        request_id = self.headers.get("X-Request-Id")
        try:
            self.service.check_token(self._bearer())
            with self.server_lock:
                if parts == ["tasks"]:
                    form = parse_multipart(self.headers.get("Content-Type", ""), body)
                    if "manifest" not in form:
                        raise InvalidManifest("multipart form needs a manifest part")
                    placement = None
                    if form.get("placement"):
                        placement = [
                            a for a in form["placement"].decode().split(",") if a
                        ]
                    response = self.service.submit(
                        form["manifest"],
                        form.get("archive", b""),
                        placement=placement,
                        request_id=request_id,
                    )
                    self._reply(201, response)
                elif len(parts) == 3 and parts[0] == "tasks" and parts[2] == "actions":
                    doc = json.loads(body.decode() or "{}")
                    response = self.service.task_action(
                        parts[1], doc.get("action", ""), request_id=request_id
                    )
                    self._reply(200, response)
                else:
                    self._reply(404, {"error": "NotFound", "detail": self.path})
        except Unauthorized as exc:
            self._error(401, exc)
        except (InvalidManifest, IllegalAction, ValueError) as exc:
            self._error(400, exc)
        except (UnknownTask, UnknownAgent) as exc:
            self._error(404, exc)
        except Exception as exc:
            log.exception("POST %s failed", self.path)
            self._error(500, exc)


def serve(service: ControlPlaneService, host: str = "127.0.0.1", port: int = 0):
    """Start the HTTP server on a background thread; returns the server
    (its .server_address carries the bound port)."""
    handler = type(
        "BoundHandler", (_Handler,), {"service": service, "server_lock": threading.Lock()}
    )
    server = ThreadingHTTPServer((host, port), handler)
    thread = threading.Thread(target=server.serve_forever, name="control-plane-http", daemon=True)
    thread.start()
    return server
