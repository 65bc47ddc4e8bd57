"""Device-tier sandbox runner.

Receives pushed code archives, verifies and unpacks them into per-task
sandboxes, resolves declared dependencies against what the host actually
has, executes the entry point for the task's runtime kind, and streams
status back.  Also computes the sufferance metric a device reports when
probed: with no isolation on edge devices, the metric is the advisory
substitute — it estimates how much a new task would degrade (and be
degraded by) what is already running.

Two execution paths share the staging logic:

* `LocalTaskProcess` spawns real interpreter processes (shell scripts,
  python, node, ...) for demos and hermetic unit tests.
* `DeviceRuntime` is the device node used under the simulator: sim-task
  scripts advance on virtual ticks and never touch the filesystem.

Sandbox layout on disk: `<work>/<task_id>/{manifest, app/, logs/stdout,
logs/stderr}`.  Archives are gzipped tars with a `manifest` file at the
root; manifest fields: name, runtime, entry, args, dependencies.

The metric formula is replaceable per device (`DeviceRuntime.metric_fn`),
the same kind of hook the scheduler's matcher has.  An alternative
estimation style — the agent reporting a predictive model once at
startup instead of answering probes — is an acknowledged extension
point, not implemented.
"""

from __future__ import annotations

import gzip
import hashlib
import io
import json
import logging
import math
import os
import shutil
import subprocess
import tarfile
from dataclasses import dataclass, field

from . import messages
from .config import SystemConfig
from .domain import (
    ArtifactRef,
    AttributeSet,
    ResourceVector,
    RuntimeKind,
    TaskSpec,
    TaskState,
    port_count,
)
from .messages import Outbox

log = logging.getLogger(__name__)

MIB = 1024 * 1024


class HashMismatch(Exception):
    pass


class NoSpace(Exception):
    pass


class MissingDependency(Exception):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"missing dependency: {name}")


class ZeroCapacity(Exception):
    def __init__(self, component: str):
        self.component = component
        super().__init__(f"capacity is zero for component {component}")


class SpawnFailure(Exception):
    pass


# --------------------------------------------------------------------------
# Archives and manifests


@dataclass(frozen=True)
class ArchiveManifest:
    name: str
    runtime: RuntimeKind
    entry: str
    args: tuple[str, ...] = ()
    dependencies: tuple[tuple[str, str], ...] = ()  # (name, version)


def parse_manifest(raw: bytes) -> ArchiveManifest:
    try:
        data = json.loads(raw.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"unreadable manifest: {exc}") from exc
    for required in ("name", "runtime", "entry"):
        if required not in data:
            raise ValueError(f"manifest missing field {required!r}")
    return ArchiveManifest(
        name=data["name"],
        runtime=RuntimeKind(data["runtime"]),
        entry=data["entry"],
        args=tuple(data.get("args", [])),
        dependencies=tuple((d["name"], d.get("version", "*")) for d in data.get("dependencies", [])),
    )


def manifest_bytes(manifest: ArchiveManifest) -> bytes:
    return json.dumps(
        {
            "name": manifest.name,
            "runtime": manifest.runtime.value,
            "entry": manifest.entry,
            "args": list(manifest.args),
            "dependencies": [{"name": n, "version": v} for n, v in manifest.dependencies],
        },
        sort_keys=True,
    ).encode()


def make_archive(manifest: ArchiveManifest, files: dict[str, bytes]) -> bytes:
    """Build a deterministic gzipped tar: manifest at the root, code files
    beside it.  Deterministic so artifact hashes are stable in tests."""
    buf = io.BytesIO()
    with gzip.GzipFile(fileobj=buf, mode="wb", mtime=0) as gz:
        with tarfile.open(fileobj=gz, mode="w") as tar:
            entries = {"manifest": manifest_bytes(manifest)}
            entries.update(files)
            for name in sorted(entries):
                info = tarfile.TarInfo(name=name)
                payload = entries[name]
                info.size = len(payload)
                info.mtime = 0
                info.uid = info.gid = 0
                info.mode = 0o755
                tar.addfile(info, io.BytesIO(payload))
    return buf.getvalue()


def artifact_ref(archive: bytes) -> ArtifactRef:
    return ArtifactRef(sha256=hashlib.sha256(archive).hexdigest(), size_bytes=len(archive))


# --------------------------------------------------------------------------
# Sandboxes and staging


@dataclass
class Sandbox:
    task_id: str
    root: str
    manifest: ArchiveManifest
    entry_path: str
    reserved_mb: int
    exit_status: "int | None" = None

    @property
    def app_dir(self) -> str:
        return os.path.join(self.root, "app")

    @property
    def stdout_path(self) -> str:
        return os.path.join(self.root, "logs", "stdout")

    @property
    def stderr_path(self) -> str:
        return os.path.join(self.root, "logs", "stderr")

    def remove(self):
        shutil.rmtree(self.root, ignore_errors=True)


def stage(
    spec: TaskSpec,
    task_id: str,
    archive: bytes,
    work_dir: str,
    available_runtimes: "set[RuntimeKind] | frozenset",
    available_packages: frozenset = frozenset(),
    capacity_mb: "int | None" = None,
    reserved_mb: int = 0,
) -> Sandbox:
    """Verify, unpack, and dependency-check a pushed archive.

    One sandbox per task_id; the caller removes it only after the
    terminal status has been reported and acknowledged.
    """
    digest = hashlib.sha256(archive).hexdigest()
    if digest != spec.artifact.sha256 or len(archive) != spec.artifact.size_bytes:
        raise HashMismatch(
            f"archive hash {digest[:12]}.../{len(archive)}B does not match "
            f"{spec.artifact.sha256[:12]}.../{spec.artifact.size_bytes}B"
        )
    needed_mb = max(spec.required.disk_mb, math.ceil(len(archive) / MIB))
    if capacity_mb is not None and reserved_mb + needed_mb > capacity_mb:
        raise NoSpace(f"need {needed_mb} MiB, {capacity_mb - reserved_mb} MiB free")

    root = os.path.join(work_dir, task_id)
    if os.path.exists(root):
        raise ValueError(f"sandbox for {task_id} already exists")
    os.makedirs(os.path.join(root, "app"))
    os.makedirs(os.path.join(root, "logs"))

    manifest_raw = None
    with tarfile.open(fileobj=io.BytesIO(archive), mode="r:*") as tar:
        for member in tar.getmembers():
            name = os.path.normpath(member.name)
            if name.startswith("..") or os.path.isabs(name):
                raise ValueError(f"archive member escapes sandbox: {member.name}")
            if not member.isfile():
                continue
            payload = tar.extractfile(member).read()
            if name == "manifest":
                manifest_raw = payload
                with open(os.path.join(root, "manifest"), "wb") as fh:
                    fh.write(payload)
            else:
                dest = os.path.join(root, "app", name)
                os.makedirs(os.path.dirname(dest), exist_ok=True)
                with open(dest, "wb") as fh:
                    fh.write(payload)
                os.chmod(dest, 0o755)
    if manifest_raw is None:
        raise ValueError("archive has no manifest at its root")
    manifest = parse_manifest(manifest_raw)

    for runtime in {manifest.runtime, spec.runtime}:
        if runtime not in available_runtimes:
            raise MissingDependency(runtime.value)
    for dep_name, _version in manifest.dependencies:
        if dep_name not in available_packages:
            raise MissingDependency(dep_name)

    entry_path = os.path.join(root, "app", spec.entry)
    return Sandbox(
        task_id=task_id,
        root=root,
        manifest=manifest,
        entry_path=entry_path,
        reserved_mb=needed_mb,
    )


# --------------------------------------------------------------------------
# Real-process execution

# Interpreters are looked up on the host path; CI exercises only
# shell-script (and sim-task under the simulator) to stay hermetic.
_RUNTIME_ARGV = {
    RuntimeKind.SHELL_SCRIPT: lambda entry: ["/bin/sh", entry],
    RuntimeKind.PYTHON_APP: lambda entry: ["python3", entry],
    RuntimeKind.NODEJS_APP: lambda entry: ["node", entry],
    RuntimeKind.BROWSER_SCRIPT: lambda entry: ["node", entry],
    RuntimeKind.JVM_APP: lambda entry: ["java", "-cp", ".", entry],
    RuntimeKind.GROOVY_APP: lambda entry: ["groovy", entry],
}


class LocalTaskProcess:
    """One spawned user process: start, poll for its outcome, kill.

    Status mapping: exit 0 -> Finished, nonzero -> Failed, kill ->
    Killed.  Log files live inside the sandbox and are closed when the
    process is reaped.
    """

    def __init__(self, sandbox: Sandbox, spec: TaskSpec):
        if spec.runtime is RuntimeKind.SIM_TASK:
            raise SpawnFailure("sim-task runs only under the simulator")
        argv = _RUNTIME_ARGV[spec.runtime](spec.entry) + list(spec.args)
        self.sandbox = sandbox
        self._stdout = open(sandbox.stdout_path, "ab")
        self._stderr = open(sandbox.stderr_path, "ab")
        self._killed = False
        try:
            self.process = subprocess.Popen(
                argv, cwd=sandbox.app_dir, stdout=self._stdout, stderr=self._stderr
            )
        except OSError as exc:
            self._close_logs()
            raise SpawnFailure(f"cannot spawn {argv[0]}: {exc}") from exc

    def _close_logs(self):
        self._stdout.close()
        self._stderr.close()

    def poll(self) -> "tuple[TaskState, int | None] | None":
        """Terminal (state, exit_code) once the process is done, else None."""
        code = self.process.poll()
        if code is None:
            return None
        self._close_logs()
        self.sandbox.exit_status = code
        if self._killed:
            return (TaskState.KILLED, code)
        return (TaskState.FINISHED, 0) if code == 0 else (TaskState.FAILED, code)

    def kill(self):
        self._killed = True
        if self.process.poll() is None:
            self.process.kill()

    def wait(self, timeout: "float | None" = None) -> tuple[TaskState, "int | None"]:
        self.process.wait(timeout=timeout)
        return self.poll()


def run(sandbox: Sandbox, spec: TaskSpec, timeout: "float | None" = 30.0):
    """Run to completion, yielding (state, exit_code) events: Running
    first, then exactly one terminal status."""
    proc = LocalTaskProcess(sandbox, spec)
    yield (TaskState.RUNNING, None)
    yield proc.wait(timeout=timeout)


# --------------------------------------------------------------------------
# Sufferance metric


@dataclass(frozen=True)
class SufferanceMetric:
    """Max projected-utilization ratio across resource components.

    value <= 1 means the candidate fits without degrading what already
    runs; above 1 the task (and its neighbors) would suffer.
    """

    value: float
    components: tuple  # sorted (component, ratio) pairs

    def as_dict(self) -> dict:
        return dict(self.components)


def _views(rv: ResourceVector) -> dict[str, int]:
    return {
        "cpus": rv.cpu_millis,
        "mem_mb": rv.mem_mb,
        "disk_mb": rv.disk_mb,
        "ports": port_count(rv.ports),
        "gpus": rv.gpus,
    }


def sufferance(
    current: list[ResourceVector], capacity: ResourceVector, candidate: ResourceVector
) -> SufferanceMetric:
    """Projected utilization if `candidate` were added to `current`.

    For each component r: ratio_r = (sum(current_r) + candidate_r) /
    capacity_r; the metric value is the max ratio.  Raises ZeroCapacity
    when the candidate needs a component the device has none of.
    """
    cap = _views(capacity)
    want = _views(candidate)
    used = {name: 0 for name in cap}
    for rv in current:
        for name, amount in _views(rv).items():
            used[name] += amount
    ratios = {}
    for name in ("cpus", "mem_mb", "disk_mb", "ports", "gpus"):
        if want[name] > 0 and cap[name] == 0:
            raise ZeroCapacity(name)
        if cap[name] == 0:
            continue
        ratios[name] = (used[name] + want[name]) / cap[name]
    value = max(ratios.values()) if ratios else 0.0
    return SufferanceMetric(value=value, components=tuple(sorted(ratios.items())))


# --------------------------------------------------------------------------
# Simulated execution (virtual time)


@dataclass
class SimScript:
    """Scripted behavior for sim-task entries.

    The entry string is a comma-separated program, e.g.
    "sleep:5,exit:0" (run five ticks then succeed), "sleep:3,exit:2"
    (fail with code 2), "crash-at:40" (die when the global tick reaches
    40), or "forever" (run until killed or lost).
    """

    sleep: "int | None" = 0
    exit_code: int = 0
    crash_at: "int | None" = None

    @classmethod
    def parse(cls, entry: str) -> "SimScript":
        script = cls()
        for part in entry.split(","):
            part = part.strip()
            if not part:
                continue
            if part == "forever":
                script.sleep = None
            elif part.startswith("sleep:"):
                script.sleep = int(part.split(":", 1)[1])
            elif part.startswith("exit:"):
                script.exit_code = int(part.split(":", 1)[1])
            elif part.startswith("crash-at:"):
                script.crash_at = int(part.split(":", 1)[1])
            else:
                raise ValueError(f"bad sim-task directive: {part!r}")
        return script


@dataclass
class SimExecution:
    """One executor under virtual time; survives its agent's process
    crashes (it lives in the device), dies with the device."""

    task_id: str
    spec: TaskSpec
    script: SimScript
    started_at: int
    state: TaskState = TaskState.RUNNING
    exit_code: "int | None" = None

    def advance(self, now: int) -> "tuple[TaskState, int | None] | None":
        """Terminal (state, exit_code) if the script completes at `now`."""
        if self.state is not TaskState.RUNNING:
            return None
        if self.script.crash_at is not None and now >= self.script.crash_at:
            self.state, self.exit_code = TaskState.FAILED, 1
            return (self.state, self.exit_code)
        if self.script.sleep is not None and now - self.started_at >= self.script.sleep:
            if self.script.exit_code == 0:
                self.state, self.exit_code = TaskState.FINISHED, 0
            else:
                self.state, self.exit_code = TaskState.FAILED, self.script.exit_code
            return (self.state, self.exit_code)
        return None

    def kill(self) -> tuple[TaskState, "int | None"]:
        self.state, self.exit_code = TaskState.KILLED, None
        return (self.state, self.exit_code)


class SimEngine:
    """Virtual-time execution: sim-task scripts advancing on ticks."""

    def __init__(self, node_id: str, runtimes: frozenset, sim_mode: bool = True):
        self.node_id = node_id
        self.runtimes = runtimes
        self.sim_mode = sim_mode
        self.executions: dict[str, SimExecution] = {}

    def launch(self, task_id: str, spec: TaskSpec, archive: "bytes | None", now: int) -> "str | None":
        if spec.runtime is RuntimeKind.SIM_TASK and not self.sim_mode:
            return "sim-task outside simulation mode"
        if spec.runtime not in self.runtimes:
            return f"missing dependency: {spec.runtime.value}"
        try:
            script = SimScript.parse(spec.entry) if spec.runtime is RuntimeKind.SIM_TASK else SimScript()
        except ValueError as exc:
            return str(exc)
        self.executions[task_id] = SimExecution(
            task_id=task_id, spec=spec, script=script, started_at=now
        )
        return None

    def poll(self, now: int) -> list:
        done = []
        for task_id in sorted(self.executions):
            outcome = self.executions[task_id].advance(now)
            if outcome is not None:
                state, exit_code = outcome
                done.append((task_id, state, exit_code))
                del self.executions[task_id]
        return done

    def kill(self, task_id: str) -> "tuple | None":
        execution = self.executions.pop(task_id, None)
        if execution is None:
            return None
        state, exit_code = execution.kill()
        return (state, exit_code)

    def alive(self) -> dict[str, str]:
        return {t: e.state.value for t, e in sorted(self.executions.items())}

    def inventory(self) -> list[ResourceVector]:
        return [e.spec.required for _, e in sorted(self.executions.items())]

    def logs(self, task_id: str) -> "str | None":
        return None


class ProcessEngine:
    """Real execution: verified archives staged into sandboxes, entry
    points spawned as host processes.  Terminal sandboxes are kept
    around so logs stay retrievable; callers gc explicitly."""

    def __init__(
        self,
        node_id: str,
        work_dir: str,
        runtimes: frozenset,
        capacity: ResourceVector,
        packages: frozenset = frozenset(),
    ):
        self.node_id = node_id
        self.work_dir = work_dir
        self.runtimes = runtimes
        self.capacity = capacity
        self.packages = packages
        self.procs: dict[str, LocalTaskProcess] = {}
        self.specs: dict[str, TaskSpec] = {}
        self.sandboxes: dict[str, Sandbox] = {}
        self.reserved_mb = 0

    def launch(self, task_id: str, spec: TaskSpec, archive: "bytes | None", now: int) -> "str | None":
        if spec.runtime is RuntimeKind.SIM_TASK:
            return "sim-task outside simulation mode"
        if archive is None:
            return "no archive supplied"
        try:
            sandbox = stage(
                spec,
                task_id,
                archive,
                self.work_dir,
                self.runtimes,
                available_packages=self.packages,
                capacity_mb=self.capacity.disk_mb or None,
                reserved_mb=self.reserved_mb,
            )
        except (HashMismatch, NoSpace, MissingDependency, ValueError) as exc:
            return str(exc)
        try:
            proc = LocalTaskProcess(sandbox, spec)
        except SpawnFailure as exc:
            sandbox.remove()
            return str(exc)
        self.reserved_mb += sandbox.reserved_mb
        self.sandboxes[task_id] = sandbox
        self.procs[task_id] = proc
        self.specs[task_id] = spec
        return None

    def poll(self, now: int) -> list:
        done = []
        for task_id in sorted(self.procs):
            outcome = self.procs[task_id].poll()
            if outcome is not None:
                state, exit_code = outcome
                done.append((task_id, state, exit_code))
                del self.procs[task_id]
                self.reserved_mb -= self.sandboxes[task_id].reserved_mb
                del self.specs[task_id]
        return done

    def kill(self, task_id: str) -> "tuple | None":
        proc = self.procs.get(task_id)
        if proc is not None:
            proc.kill()  # the terminal report arrives via poll()
        return None

    def alive(self) -> dict[str, str]:
        return {t: TaskState.RUNNING.value for t in sorted(self.procs)}

    def inventory(self) -> list[ResourceVector]:
        return [self.specs[t].required for t in sorted(self.procs)]

    def logs(self, task_id: str) -> "str | None":
        sandbox = self.sandboxes.get(task_id)
        if sandbox is None:
            return None
        parts = []
        for label, path in (("stdout", sandbox.stdout_path), ("stderr", sandbox.stderr_path)):
            try:
                with open(path, "rb") as fh:
                    parts.append(f"=== {label} ===\n" + fh.read().decode(errors="replace"))
            except OSError:
                continue
        return "\n".join(parts)

    def gc(self, keep: int = 20):
        terminal = [t for t in self.sandboxes if t not in self.procs]
        for task_id in terminal[:-keep] if keep else terminal:
            self.sandboxes.pop(task_id).remove()


class DeviceRuntime:
    """The device node: executes tasks, answers probes, announces itself.

    In proxy mode (default) the device talks only to its gateway: it
    announces periodically for discovery, receives LAUNCH/KILL forwarded
    by its proxy agent, and reports status back through it.  In direct
    mode the device registers with the master itself and no proxy is
    involved.
    """

    def __init__(
        self,
        node_id: str,
        resources: ResourceVector,
        attributes: AttributeSet,
        config: SystemConfig,
        gateway_id: "str | None" = None,
        master_id: "str | None" = None,
        direct: bool = False,
        runtimes: frozenset = frozenset({RuntimeKind.SIM_TASK, RuntimeKind.SHELL_SCRIPT}),
        engine=None,
    ):
        self.node_id = node_id
        self.resources = resources
        self.attributes = attributes
        self.config = config
        self.gateway_id = gateway_id
        self.master_id = master_id
        self.direct = direct
        self.runtimes = frozenset(RuntimeKind(r) for r in runtimes)
        self.engine = engine if engine is not None else SimEngine(
            node_id, self.runtimes, sim_mode=config.sim_mode
        )
        self.task_managers: dict[str, str] = {}  # task_id -> who launched it
        # terminal reports are retransmitted a few times: status messages
        # are fire-and-forget and a lost one must not wedge the task
        self._retransmits: list = []  # [task_id, state, exit_code, remaining, next_at]
        self.outbox = Outbox(node_id)
        self._registered_with_master = False
        self.metric_fn = sufferance

    # -- wiring ------------------------------------------------------------

    def advertised_attributes(self) -> AttributeSet:
        return self.attributes.merged({"runtimes": frozenset(r.value for r in self.runtimes)})

    def _manager(self) -> str:
        # Status flows to whichever tier launched the task.
        return self.master_id if self.direct else self.gateway_id

    def on_start(self, now: int) -> list:
        if self.direct and self.master_id:
            self._register_direct(now)
        elif self.gateway_id:
            self._announce(now)
        return self.outbox.drain()

    def on_tick(self, now: int) -> list:
        if self.direct and self.master_id:
            if not self._registered_with_master:
                self._register_direct(now)
            elif now % self.config.heartbeat_period == 0:
                self.outbox.send(
                    self.master_id,
                    messages.HEARTBEAT,
                    now,
                    agent_id=self.node_id,
                    running=[[t, s] for t, s in self.engine.alive().items()],
                )
        elif self.gateway_id and now % self.config.announce_period == 0:
            self._announce(now)
        for task_id, state, exit_code in self.engine.poll(now):
            self._report(task_id, state, now, exit_code=exit_code)
            self._retransmits.append([task_id, state, exit_code, 2, now + 2])
        for entry in list(self._retransmits):
            task_id, state, exit_code, remaining, next_at = entry
            if now >= next_at:
                self._report(task_id, state, now, exit_code=exit_code)
                entry[3] -= 1
                entry[4] = now + 2
                if entry[3] <= 0:
                    self._retransmits.remove(entry)
        for task_id, state in self.engine.alive().items():
            self.outbox.note("executor_tick", task_id=task_id, state=state)
        if now % 100 == 0 and hasattr(self.engine, "gc"):
            self.engine.gc()
        return self.outbox.drain()

    def _announce(self, now: int):
        from . import codec  # local import keeps module deps one-way

        self.outbox.send(
            self.gateway_id,
            messages.DEV_REGISTER,
            now,
            device_id=self.node_id,
            resources=codec.to_wire(self.resources),
            attributes=codec.to_wire(self.advertised_attributes()),
        )

    def _register_direct(self, now: int):
        from . import codec

        self.outbox.send(
            self.master_id,
            messages.REGISTER,
            now,
            role="agent",
            agent_id=self.node_id,
            gateway_id="",
            advertised=codec.to_wire(self.resources),
            attributes=codec.to_wire(self.advertised_attributes()),
            running=[[t, s] for t, s in self.engine.alive().items()],
        )
        self._registered_with_master = True

    def handle(self, msg, now: int) -> list:
        from . import codec

        if msg.kind == messages.LAUNCH:
            self._handle_launch(msg, now)
        elif msg.kind == messages.KILL:
            task_id = msg.fields["task_id"]
            outcome = self.engine.kill(task_id)
            if outcome is not None:
                state, exit_code = outcome
                self._report(task_id, state, now, exit_code=exit_code)
        elif msg.kind == messages.PROBE:
            sketch = codec.from_wire(msg.fields["sketch"])
            current = self.engine.inventory()
            try:
                metric = self.metric_fn(current, self.resources, sketch)
                self.outbox.send(
                    msg.sender,
                    messages.PROBE_REPLY,
                    now,
                    probe_id=msg.fields["probe_id"],
                    agent_id=msg.fields.get("agent_id", self.node_id),
                    value=metric.value,
                    components=dict(metric.components),
                )
            except ZeroCapacity as exc:
                self.outbox.note("probe_refused", probe_id=msg.fields["probe_id"], reason=str(exc))
        elif msg.kind == messages.RECONCILE:
            # A restarted agent asking what survived: adopt its authority
            # over our executions from here on.
            alive = self.engine.alive()
            for task_id in alive:
                self.task_managers[task_id] = msg.sender
            self.outbox.send(
                msg.sender,
                messages.RECONCILE_REPLY,
                now,
                running=[[t, s] for t, s in alive.items()],
            )
        elif msg.kind == messages.AGENT_CTL and msg.fields.get("action") == "go-direct":
            if not self.direct:
                self.direct = True
                self._register_direct(now)
        return self.outbox.drain()

    def _handle_launch(self, msg, now: int):
        import base64

        from . import codec

        spec = codec.from_wire(msg.fields["spec"])
        task_id = msg.fields["task_id"]
        if task_id in self.engine.alive():
            self.outbox.note("duplicate_launch_ignored", task_id=task_id)
            return
        self.task_managers[task_id] = msg.sender
        self._report(task_id, TaskState.STAGING, now)
        archive = None
        if msg.fields.get("archive_b64"):
            archive = base64.b64decode(msg.fields["archive_b64"])
        failure = self.engine.launch(task_id, spec, archive, now)
        if failure is not None:
            self._report(task_id, TaskState.FAILED, now, reason=failure)
            return
        self._report(task_id, TaskState.RUNNING, now)

    def _report(self, task_id: str, state: TaskState, now: int, exit_code=None, reason=None):
        manager = self.task_managers.get(task_id) or self._manager()
        if manager is None:
            return
        self.outbox.send(
            manager,
            messages.STATUS,
            now,
            task_id=task_id,
            agent_id=self.node_id,
            state=state.value,
            exit_code=exit_code,
            reason=reason,
        )

    # -- introspection used by the simulator's invariant checks -------------

    def live_tasks(self) -> tuple[str, ...]:
        return tuple(sorted(self.engine.alive()))
