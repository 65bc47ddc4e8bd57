"""Single-command demo stack: real sockets, real shell-script tasks.

Boots a cloud group (master + framework + control plane) and an edge
group (gateway + device with a real-process engine), joined only by the
master's TCP hub — the same messages the simulator delivers virtually
go over the wire here.  The control plane serves HTTP for the CLI and
the dashboard.

Not used by the deterministic test scenarios; this is the path `scripts/
demo_local.py` and the end-to-end checks exercise.
"""

from __future__ import annotations

import logging

from .config import SystemConfig
from .control_plane import ControlPlaneService, UnknownTask, serve
from .domain import AttributeSet, ResourceVector, RuntimeKind, TaskSpec
from .executor import DeviceRuntime, ProcessEngine
from .gateway import Gateway
from .master import Master
from .persistence import FileStore, MemoryStore
from .scheduler import Scheduler
from .transport import Clock, HubClient, HubServer, NodeGroup

log = logging.getLogger(__name__)

DEMO_CONFIG = SystemConfig(
    heartbeat_period=2,
    suspect_after_misses=3,
    base_timeout=20,
    offer_ttl=20,
    offer_period=2,
    watchdog_period=10,
    announce_period=8,
    sim_mode=False,
)


class LiveHandle:
    """Control-plane handle over the live (socketed) stack: mutations
    and snapshots run on the cloud event loop."""

    def __init__(self, cloud: NodeGroup, scheduler: Scheduler, master: Master,
                 devices: "list[DeviceRuntime]"):
        self.cloud = cloud
        self.scheduler = scheduler
        self.master = master
        self.devices = devices

    @property
    def sim_mode(self) -> bool:
        return self.scheduler.config.sim_mode

    def submit(self, spec: TaskSpec, archive_b64, request_id: str) -> list:
        def run():
            if archive_b64:
                self.scheduler.add_archive(spec.artifact.sha256, archive_b64)
            ids = self.scheduler.submit(spec, self.cloud.clock.now())
            self.cloud._dispatch(self.scheduler.outbox.drain())
            return ids

        return self.cloud.loop.call(run)

    def action(self, task_id: str, action: str):
        def run():
            now = self.cloud.clock.now()
            if action == "kill":
                self.scheduler.kill_task(task_id, now)
            elif action == "restart":
                self.scheduler.restart_task(task_id, now)
            self.cloud._dispatch(self.scheduler.outbox.drain())

        return self.cloud.loop.call(run)

    def tasks(self) -> dict:
        return self.cloud.loop.call(lambda: dict(self.scheduler.tasks))

    def agents(self) -> dict:
        return self.cloud.loop.call(lambda: dict(self.master.agents))

    def logs(self, task_id: str) -> str:
        for device in self.devices:
            engine = device.engine
            text = engine.logs(task_id)
            if text is not None:
                return text
        record = self.tasks().get(task_id)
        if record is None:
            raise UnknownTask(task_id)
        return "\n".join(f"tick {t}: {s.value}" for s, t in record.state_history) + "\n"


class DemoStack:
    def __init__(self, work_dir: str, http_port: int = 0, hub_port: int = 0,
                 token: "str | None" = None, tick_seconds: float = 0.05,
                 store_dir: "str | None" = None, config: SystemConfig = DEMO_CONFIG):
        self.clock = Clock(tick_seconds)
        store = FileStore(store_dir) if store_dir else MemoryStore()

        # cloud tier
        self.cloud = NodeGroup("cloud", self.clock)
        self.master = Master(node_id="master", config=config, store=store)
        self.scheduler = Scheduler(
            node_id="fw1", master_id="master", config=config, store=store
        )
        self.cloud.add(self.master)
        self.cloud.add(self.scheduler)
        self.hub = HubServer(self.cloud, port=hub_port)

        # edge tier: one gateway, one device running real processes
        self.edge = NodeGroup("edge-site-1", self.clock)
        self.device = DeviceRuntime(
            node_id="dev1",
            resources=ResourceVector(cpus=2.0, mem_mb=2048, disk_mb=4096),
            attributes=AttributeSet.of({"os": "linux", "site": "demo"}),
            config=config,
            gateway_id="gw1",
            master_id="master",
            runtimes=frozenset({RuntimeKind.SHELL_SCRIPT, RuntimeKind.PYTHON_APP}),
            engine=ProcessEngine(
                node_id="dev1",
                work_dir=work_dir,
                runtimes=frozenset({RuntimeKind.SHELL_SCRIPT, RuntimeKind.PYTHON_APP}),
                capacity=ResourceVector(cpus=2.0, mem_mb=2048, disk_mb=4096),
            ),
        )
        self.gateway = Gateway(
            node_id="gw1",
            master_id="master",
            config=config,
            disk=self.edge.disk,
            address="edge-site-1",
            host_probe=lambda node_id: node_id in self.edge.nodes,
        )
        self.edge.add(self.gateway)
        self.edge.add(self.device)
        self.uplink = HubClient(self.edge, self.hub.address)

        # operator surface
        self.handle = LiveHandle(self.cloud, self.scheduler, self.master, [self.device])
        self.service = ControlPlaneService(self.handle, token=token)
        self.http = serve(self.service, port=http_port)

    @property
    def http_address(self) -> str:
        host, port = self.http.server_address[:2]
        return f"http://{host}:{port}"

    def start(self):
        self.cloud.start_ticker()
        self.edge.start_ticker()
        return self

    def stop(self):
        self.http.shutdown()
        self.uplink.close()
        self.hub.close()
        self.cloud.stop()
        self.edge.stop()


def main():  # pragma: no cover - interactive entry point
    import argparse
    import tempfile
    import time

    parser = argparse.ArgumentParser(description="run the demo stack until interrupted")
    parser.add_argument("--http-port", type=int, default=8700)
    parser.add_argument("--hub-port", type=int, default=8701)
    parser.add_argument("--token", default=None)
    parser.add_argument("--work-dir", default=None)
    parser.add_argument("--store-dir", default=None)
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    work_dir = args.work_dir or tempfile.mkdtemp(prefix="edgeorc-demo-")
    stack = DemoStack(
        work_dir=work_dir,
        http_port=args.http_port,
        hub_port=args.hub_port,
        token=args.token,
        store_dir=args.store_dir,
    ).start()
    print(f"control plane: {stack.http_address}")
    print(f"master hub:    {stack.hub.address[0]}:{stack.hub.address[1]}")
    print(f"sandboxes:     {work_dir}")
    print("deploy something:  edgeorc --master-addr", stack.http_address, "deploy --manifest job.json --archive job.tgz")
    try:
        while True:
            time.sleep(1)
    except KeyboardInterrupt:
        stack.stop()


if __name__ == "__main__":  # pragma: no cover
    main()
