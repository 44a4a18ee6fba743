"""Browser gateway: bridges the broker to WebSocket text records.

Downstream: every broker message becomes one JSON record
{"topic", "name", "seq", "ts", "publisher", "data"}.  Upstream: JSON
control records are translated to wire messages:

    {"cmd": "grip", "setpoint": 0.03}            -> GRIP_CMD
    {"cmd": "record", "action": "begin"|"end"}   -> CONTROL record:*
    {"cmd": "teleop", "action": "start"|"stop"}  -> CONTROL teleop:*
    {"cmd": "node", "action": "start"|"stop", "node": id} -> CONTROL

A malformed upstream record answers {"error": ...} on that connection and
the connection stays up.  The same listener serves the dashboard's static
files over plain HTTP GET.
"""

from __future__ import annotations

import json
import socket
import threading
from pathlib import Path

from ..errors import ClawError, ConfigError
from ..runtime import NodeConfig
from .framing import Topic
from .payloads import (pack_control, pack_grip_cmd, payload_to_dict)
from .tcp import BrokerClient
from . import ws

DEFAULT_GATEWAY_PORT = 7601

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "application/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
    ".json": "application/json",
}


def record_for(entry) -> dict:
    msg = entry.message
    try:
        data = payload_to_dict(msg.topic, msg.payload)
    except ClawError as e:
        data = {"decode_error": str(e)}
    try:
        name = Topic(msg.topic).name
    except ValueError:
        name = f"UNKNOWN_{msg.topic}"
    return {"topic": msg.topic, "name": name, "seq": msg.seq,
            "ts": msg.timestamp, "publisher": entry.publisher, "data": data}


def translate_command(obj: dict) -> tuple[int, bytes]:
    """Upstream JSON -> (topic, payload); raises ConfigError on bad input."""
    if not isinstance(obj, dict):
        raise ConfigError("command record must be an object")
    cmd = obj.get("cmd")
    if cmd == "grip":
        setpoint = obj.get("setpoint")
        if not isinstance(setpoint, (int, float)):
            raise ConfigError("grip command needs numeric setpoint")
        return int(Topic.GRIP_CMD), pack_grip_cmd(float(setpoint))
    if cmd == "record":
        action = obj.get("action")
        if action not in ("begin", "end"):
            raise ConfigError("record action must be begin|end")
        return int(Topic.CONTROL), pack_control({"verb": f"record:{action}"})
    if cmd == "teleop":
        action = obj.get("action")
        if action not in ("start", "stop"):
            raise ConfigError("teleop action must be start|stop")
        return int(Topic.CONTROL), pack_control({"verb": f"teleop:{action}"})
    if cmd == "node":
        action = obj.get("action")
        if action not in ("start", "stop"):
            raise ConfigError("node action must be start|stop")
        return int(Topic.CONTROL), pack_control(
            {"verb": action, "node": str(obj.get("node", "all"))})
    raise ConfigError(f"unknown command {cmd!r}")


class GatewayServer:
    """One listener: HTTP GET for the dashboard bundle, WS for the streams."""

    def __init__(self, broker_host: str = "127.0.0.1", broker_port: int = 7600,
                 host: str = "127.0.0.1", port: int = DEFAULT_GATEWAY_PORT,
                 static_dir: str | None = None, node_id: str = "gateway"):
        self.host, self.port = host, port
        self.static_dir = Path(static_dir) if static_dir else None
        cfg = NodeConfig(node_id=node_id,
                         broker_addr=f"{broker_host}:{broker_port}",
                         queue_capacity=4096)
        self.client = BrokerClient(cfg)
        self._listener: socket.socket | None = None
        self._stop = threading.Event()
        self._clients: list[ws.WSConnection] = []
        self._clients_lock = threading.Lock()
        self._send_locks: dict[int, threading.Lock] = {}

    def start(self) -> None:
        self.client.connect()  # raises ConfigError if broker unreachable
        self._listener = socket.create_server((self.host, self.port))
        self.port = self._listener.getsockname()[1]
        self._listener.settimeout(0.2)
        threading.Thread(target=self._accept_loop, daemon=True,
                         name="gateway-accept").start()
        threading.Thread(target=self._pump_loop, daemon=True,
                         name="gateway-pump").start()

    # -- broker -> clients --------------------------------------------------

    def _pump_loop(self) -> None:
        while not self._stop.is_set() and not self.client.stopped:
            entry = self.client.queue.pop(timeout=0.1)
            if entry is None:
                continue
            line = json.dumps(record_for(entry), separators=(",", ":"))
            self._broadcast(line)

    def _broadcast(self, line: str) -> None:
        with self._clients_lock:
            conns = [(c, self._send_locks.get(id(c))) for c in self._clients]
        for conn, lock in conns:
            if lock is None:
                continue  # dropped concurrently
            try:
                with lock:
                    conn.send_text(line)
            except (OSError, ValueError):
                self._drop(conn)

    def _drop(self, conn: ws.WSConnection) -> None:
        with self._clients_lock:
            if conn in self._clients:
                self._clients.remove(conn)
            self._send_locks.pop(id(conn), None)
        conn.close()

    # -- client connections ---------------------------------------------------

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                sock, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            threading.Thread(target=self._serve, args=(sock,), daemon=True).start()

    def _serve(self, sock: socket.socket) -> None:
        try:
            # many small frames per second: Nagle would cap throughput
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            method, path, headers = ws.read_http_request(sock)
        except (ClawError, OSError):
            sock.close()
            return
        if headers.get("upgrade", "").lower() == "websocket":
            try:
                conn = ws.server_upgrade(sock, headers)
            except ClawError:
                sock.close()
                return
            with self._clients_lock:
                self._clients.append(conn)
                self._send_locks[id(conn)] = threading.Lock()
            self._client_reader(conn)
        elif method == "GET":
            self._serve_static(sock, path)
            sock.close()
        else:
            sock.sendall(b"HTTP/1.1 405 Method Not Allowed\r\n\r\n")
            sock.close()

    def _client_reader(self, conn: ws.WSConnection) -> None:
        lock = self._send_locks[id(conn)]
        try:
            while not self._stop.is_set():
                message = conn.recv_message()
                if message is None:
                    break
                _, payload = message
                reply = self._handle_upstream(payload)
                if reply is not None:
                    with lock:
                        conn.send_text(json.dumps(reply, separators=(",", ":")))
        except (ClawError, OSError):
            pass
        finally:
            self._drop(conn)

    def _handle_upstream(self, payload: bytes) -> dict | None:
        try:
            obj = json.loads(payload.decode("utf-8"))
            topic, wire = translate_command(obj)
        except (ValueError, ClawError) as e:
            return {"error": str(e), "echo": payload.decode("utf-8", "replace")}
        try:
            self.client.publish(topic, wire)
        except ClawError as e:
            return {"error": f"broker publish failed: {e}"}
        return {"ack": obj.get("cmd")}

    # -- static files -----------------------------------------------------------

    def _serve_static(self, sock: socket.socket, path: str) -> None:
        if self.static_dir is None:
            sock.sendall(b"HTTP/1.1 200 OK\r\nContent-Type: text/plain\r\n"
                         b"Content-Length: 19\r\n\r\nclawlink gateway up")
            return
        name = path.split("?")[0]
        if name in ("/", ""):
            name = "/index.html"
        target = (self.static_dir / name.lstrip("/")).resolve()
        if (self.static_dir.resolve() not in target.parents
                and target != self.static_dir.resolve()) or not target.is_file():
            sock.sendall(b"HTTP/1.1 404 Not Found\r\nContent-Length: 0\r\n\r\n")
            return
        body = target.read_bytes()
        ctype = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
        head = (f"HTTP/1.1 200 OK\r\nContent-Type: {ctype}\r\n"
                f"Content-Length: {len(body)}\r\n\r\n").encode("latin-1")
        sock.sendall(head + body)

    def stop(self) -> None:
        self._stop.set()
        with self._clients_lock:
            conns = list(self._clients)
        for c in conns:
            c.close()
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        self.client.close(announce=False)
