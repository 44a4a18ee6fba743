"""TCP transport: broker server (default port 7600) and node client.

Stream protocol is the standard framing; the first frame on a connection
must be CONTROL with verb=subscribe carrying the node identity and its
topic list (key=value text).  Every subsequent inbound frame is published
under that identity; outbound frames are the connection's subscription
stream.
"""

from __future__ import annotations

import socket
import threading
import time

from ..core import NS_PER_SEC
from ..errors import ClawError, ConfigError, FormatError, IncompleteError
from .broker import Broker, QueueEntry, Subscription
from .framing import Message, Topic, encode_message, read_frame
from .payloads import pack_control, unpack_control

DEFAULT_PORT = 7600


def _read_exact(sock: socket.socket):
    def read(n: int) -> bytes:
        buf = b""
        while len(buf) < n:
            chunk = sock.recv(n - len(buf))
            if not chunk:
                raise IncompleteError("connection closed mid-frame")
            buf += chunk
        return buf
    return read


def parse_topic_list(spec: str):
    """'*' subscribes to all known topics; otherwise comma-separated names
    or numeric ids."""
    if spec.strip() == "*":
        return None
    topics = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if part.isdigit():
            topics.append(int(part))
        else:
            try:
                topics.append(int(Topic[part]))
            except KeyError:
                raise ConfigError(f"unknown topic name {part!r}") from None
    return topics


class BrokerServer:
    """Thread-per-connection TCP front end over the in-process Broker."""

    def __init__(self, host: str = "127.0.0.1", port: int = DEFAULT_PORT,
                 queue_capacity: int = 1024, broker: Broker | None = None):
        self.host = host
        self.port = port
        self.broker = broker or Broker(queue_capacity=queue_capacity)
        self._listener: socket.socket | None = None
        self._threads: list[threading.Thread] = []
        self._stop = threading.Event()

    def start(self) -> None:
        self._listener = socket.create_server((self.host, self.port))
        self._listener.settimeout(0.2)
        self.port = self._listener.getsockname()[1]
        t = threading.Thread(target=self._accept_loop, name="broker-accept",
                             daemon=True)
        t.start()
        self._threads.append(t)

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            t = threading.Thread(target=self._serve, args=(conn,), daemon=True)
            t.start()
            self._threads.append(t)

    def _serve(self, conn: socket.socket) -> None:
        handle = None
        writer = None
        try:
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            read = _read_exact(conn)
            hello = read_frame(read)
            if hello.topic != Topic.CONTROL:
                raise FormatError("first frame must be CONTROL subscribe")
            fields = unpack_control(hello.payload)
            if fields.get("verb") != "subscribe" or "node" not in fields:
                raise FormatError("subscribe frame needs verb=subscribe, node=")
            node_id = fields["node"]
            topics = parse_topic_list(fields.get("topics", "*"))
            handle, sub = self.broker.subscribe(node_id, topics)
            wlock = threading.Lock()
            stop_writer = threading.Event()

            def write_loop():
                while not stop_writer.is_set():
                    entry = sub.queue.pop(timeout=0.1)
                    if entry is None:
                        continue
                    try:
                        with wlock:
                            conn.sendall(encode_message(entry.message))
                    except OSError:
                        return

            writer = threading.Thread(target=write_loop, daemon=True)
            writer.start()
            while not self._stop.is_set():
                msg = read_frame(read)
                self.broker.publish(msg, publisher=node_id)
        except (ClawError, OSError):
            pass
        finally:
            if handle is not None:
                self.broker.unsubscribe(handle)
            if writer is not None:
                stop_writer.set()
            try:
                conn.close()
            except OSError:
                pass

    def stop(self) -> None:
        self._stop.set()
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        for t in self._threads:
            t.join(timeout=1.0)


class BrokerClient:
    """Node-side endpoint over TCP; drop-in for the virtual endpoint.

    The reader thread stamps arrivals with the node-local clock and feeds a
    drop-oldest queue so slow node loops shed stale frames exactly like the
    virtual runtime.
    """

    def __init__(self, config, topics=None, host: str | None = None,
                 port: int | None = None, connect_retries: int = 5,
                 retry_delay_s: float = 0.2, publisher_label: str = ""):
        from ..runtime import NodeConfig  # avoid import cycle at module load
        assert isinstance(config, NodeConfig)
        self.config = config
        if host is None or port is None:
            addr = config.broker_addr
            host, _, port_s = addr.partition(":")
            port = int(port_s or DEFAULT_PORT)
        self.host, self.port = host, port
        self.topics = topics
        self.connect_retries = connect_retries
        self.retry_delay_s = retry_delay_s
        # frames carry no origin; entries from this connection get this
        # label so multi-broker consumers (teleop) can tell claws apart
        self.publisher_label = publisher_label
        self.stopped = False
        self._seq: dict[int, int] = {}
        self._sock: socket.socket | None = None
        self._wlock = threading.Lock()
        from .broker import SubscriberQueue
        self.queue = SubscriberQueue(config.queue_capacity)
        self._reader: threading.Thread | None = None

    # -- connection management ------------------------------------------------

    def connect(self) -> None:
        last_err = None
        for _ in range(max(1, self.connect_retries)):
            try:
                self._sock = socket.create_connection((self.host, self.port),
                                                      timeout=5.0)
                self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                break
            except OSError as e:
                last_err = e
                time.sleep(self.retry_delay_s)
        else:
            raise ConfigError(f"broker unreachable at "
                              f"{self.host}:{self.port}: {last_err}")
        spec = "*" if self.topics is None else ",".join(
            Topic(t).name if t in set(int(x) for x in Topic) else str(t)
            for t in self.topics)
        hello = Message(topic=int(Topic.CONTROL), seq=self.next_seq(Topic.CONTROL),
                        timestamp=self.now_ns(),
                        payload=pack_control({"verb": "subscribe",
                                              "node": self.config.node_id,
                                              "topics": spec}))
        self._sock.sendall(encode_message(hello))
        self._reader = threading.Thread(target=self._read_loop, daemon=True,
                                        name=f"rx-{self.config.node_id}")
        self._reader.start()

    def _read_loop(self) -> None:
        try:
            read = _read_exact(self._sock)
            while not self.stopped:
                msg = read_frame(read)
                self.queue.push(QueueEntry(message=msg,
                                           arrival_ns=self.now_ns(),
                                           publisher=self.publisher_label))
        except (ClawError, OSError):
            if not self.stopped:
                self.stopped = True

    def close(self, announce: bool = True) -> None:
        if announce and self._sock is not None and not self.stopped:
            try:
                self.publish(Topic.CONTROL, pack_control(
                    {"verb": "node-down", "node": self.config.node_id}))
            except (ClawError, OSError):
                pass
        self.stopped = True
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass

    # -- endpoint interface ---------------------------------------------------

    def now_ns(self) -> int:
        return time.time_ns() + self.config.clock_skew_ns

    def next_seq(self, topic: int) -> int:
        s = self._seq.get(int(topic), 0)
        self._seq[int(topic)] = s + 1
        return s

    def publish(self, topic: int, payload: bytes) -> Message:
        msg = Message(topic=int(topic), seq=self.next_seq(topic),
                      timestamp=self.now_ns(), payload=payload)
        if self._sock is None:
            raise ConfigError("not connected")
        try:
            with self._wlock:
                self._sock.sendall(encode_message(msg))
        except OSError as e:
            self.stopped = True
            raise ConfigError(f"broker connection lost: {e}") from None
        return msg

    def drain(self):
        return self.queue.drain()
