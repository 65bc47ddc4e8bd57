"""Socket transport: the thin adapter that carries the same canonical
messages over TCP for demo deployments.

Framing is one message per line (the canonical serialized form is a
single JSON object, newline-free).  The master side runs a hub server:
every peer connects to it, the first message on a connection binds that
peer's node id to the socket, and anything the master-side nodes send
to a bound id is written back down that socket.  All node logic runs on
single-threaded event loops fed by queues, so handlers keep the same
deterministic (state, message) discipline as under the simulator; only
the edges of the process touch threads.
"""

from __future__ import annotations

import logging
import queue
import socket
import socketserver
import threading
import time

from . import codec
from .messages import Message, Note, RestartNode, Send, SpawnNode

log = logging.getLogger(__name__)


class EventLoop:
    """One logical event loop: closures in, executed strictly in order
    on a single worker thread."""

    def __init__(self, name: str):
        self.name = name
        self._queue: "queue.Queue" = queue.Queue()
        self._thread = threading.Thread(target=self._run, name=f"loop-{name}", daemon=True)
        self._thread.start()

    def _run(self):
        while True:
            fn = self._queue.get()
            if fn is None:
                return
            try:
                fn()
            except Exception:
                log.exception("event loop %s: handler failed", self.name)

    def post(self, fn) -> None:
        self._queue.put(fn)

    def call(self, fn):
        """Run `fn` on the loop and wait for its result (API snapshots
        and synchronous mutations)."""
        done = threading.Event()
        box = {}

        def wrapper():
            try:
                box["value"] = fn()
            except Exception as exc:  # re-raised on the caller's thread
                box["error"] = exc
            finally:
                done.set()

        self.post(wrapper)
        done.wait()
        if "error" in box:
            raise box["error"]
        return box["value"]

    def stop(self):
        self._queue.put(None)


class Clock:
    """Wall-clock backed tick source; logic only ever sees the integer."""

    def __init__(self, tick_seconds: float = 0.05):
        self.tick_seconds = tick_seconds
        self._start = time.monotonic()

    def now(self) -> int:
        return int((time.monotonic() - self._start) / self.tick_seconds)


class NodeGroup:
    """A set of co-located nodes sharing one event loop, with an uplink
    for messages addressed to anyone not hosted here."""

    def __init__(self, name: str, clock: Clock, uplink=None):
        self.name = name
        self.clock = clock
        self.loop = EventLoop(name)
        self.nodes: dict[str, object] = {}
        self.disk: dict = {}
        self.uplink = uplink  # callable(Message) or None

    def add(self, node, start: bool = True):
        self.nodes[node.node_id] = node
        if start:
            self.loop.post(lambda: self._dispatch(node.on_start(self.clock.now())))

    def deliver(self, msg: Message):
        self.loop.post(lambda: self._handle(msg))

    def _handle(self, msg: Message):
        node = self.nodes.get(msg.to)
        if node is None:
            log.debug("%s: no node %s for %s", self.name, msg.to, msg.kind)
            return
        self._dispatch(node.handle(msg, self.clock.now()))

    def tick(self):
        now = self.clock.now()
        for node_id in sorted(self.nodes):
            node = self.nodes[node_id]
            self._dispatch(node.on_tick(now))

    def _dispatch(self, effects):
        for effect in effects:
            if isinstance(effect, Send):
                self._route(effect.message)
            elif isinstance(effect, Note):
                log.debug("%s %s: %s %s", self.name, effect.node, effect.kind, effect.as_dict())
            elif isinstance(effect, SpawnNode):
                ctx = _GroupContext(self)
                node = effect.factory(ctx)
                self.nodes[effect.node_id] = node
                self._dispatch(node.on_start(self.clock.now()))
            elif isinstance(effect, RestartNode):
                log.info("%s: restart request for %s ignored in demo mode", self.name, effect.node_id)

    def _route(self, msg: Message):
        if msg.to in self.nodes:
            # local hop: queue it back through the loop to preserve
            # one-message-at-a-time semantics
            self.loop.post(lambda m=msg: self._handle(m))
        elif self.uplink is not None:
            self.uplink(msg)
        else:
            log.debug("%s: dropping %s to unknown %s", self.name, msg.kind, msg.to)

    def start_ticker(self):
        def run():
            while not self._stop_ticker:
                self.loop.post(self.tick)
                time.sleep(self.clock.tick_seconds)

        self._stop_ticker = False
        thread = threading.Thread(target=run, name=f"ticker-{self.name}", daemon=True)
        thread.start()
        return thread

    def stop(self):
        self._stop_ticker = True
        self.loop.stop()


class _GroupContext:
    def __init__(self, group: NodeGroup):
        self.disk = group.disk
        self._group = group

    def address(self) -> str:
        return self._group.name


class HubServer:
    """The master-side TCP endpoint: peers connect, bind their node id
    with their first message, and get a private downstream channel."""

    def __init__(self, group: NodeGroup, host: str = "127.0.0.1", port: int = 0):
        self.group = group
        self.connections: dict[str, socket.socket] = {}
        self._conn_lock = threading.Lock()
        hub = self

        class Handler(socketserver.StreamRequestHandler):
            def handle(self):
                bound = None
                for line in self.rfile:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        msg = codec.decode_line(line.decode())
                    except codec.CodecError as exc:
                        log.warning("hub: bad frame dropped: %s", exc)
                        continue
                    if bound is None:
                        bound = msg.sender
                        with hub._conn_lock:
                            hub.connections[bound] = self.request
                    hub.group.deliver(msg)
                if bound is not None:
                    with hub._conn_lock:
                        if hub.connections.get(bound) is self.request:
                            del hub.connections[bound]

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self.server = Server((host, port), Handler)
        self.address = self.server.server_address
        threading.Thread(target=self.server.serve_forever, name="hub-server", daemon=True).start()
        group.uplink = self.send_down

    def send_down(self, msg: Message):
        with self._conn_lock:
            conn = self.connections.get(msg.to)
        if conn is None:
            log.debug("hub: %s not connected, dropping %s", msg.to, msg.kind)
            return
        try:
            conn.sendall(codec.encode_line(msg).encode() + b"\n")
        except OSError as exc:
            log.warning("hub: send to %s failed: %s", msg.to, exc)

    def close(self):
        self.server.shutdown()


class HubClient:
    """Edge-side uplink: one TCP connection carrying everything the
    local group sends to non-local ids, and delivering whatever the hub
    sends back into the local loop."""

    def __init__(self, group: NodeGroup, address):
        self.group = group
        self.sock = socket.create_connection(address, timeout=10)
        self._write_lock = threading.Lock()
        group.uplink = self.send_up
        threading.Thread(target=self._reader, name="hub-client-reader", daemon=True).start()

    def send_up(self, msg: Message):
        try:
            with self._write_lock:
                self.sock.sendall(codec.encode_line(msg).encode() + b"\n")
        except OSError as exc:
            log.warning("uplink send failed: %s", exc)

    def _reader(self):
        buffer = b""
        try:
            while True:
                chunk = self.sock.recv(65536)
                if not chunk:
                    return
                buffer += chunk
                while b"\n" in buffer:
                    line, buffer = buffer.split(b"\n", 1)
                    if not line.strip():
                        continue
                    try:
                        msg = codec.decode_line(line.decode())
                    except codec.CodecError as exc:
                        log.warning("client: bad frame dropped: %s", exc)
                        continue
                    self.group.deliver(msg)
        except OSError:
            return

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass
