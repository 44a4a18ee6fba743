"""Minimal RFC 6455 WebSocket support on stdlib sockets.

Implements just what the gateway and its tests need: HTTP upgrade
handshake, text/binary/close/ping frames, client-side masking.  (The usual
websocket packages are not available in this environment, and the server
side also doubles as a tiny static-file HTTP server for the dashboard.)
"""

from __future__ import annotations

import base64
import hashlib
import os
import secrets
import socket
import struct

from ..errors import FormatError, IncompleteError

WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

OP_CONT, OP_TEXT, OP_BINARY = 0x0, 0x1, 0x2
OP_CLOSE, OP_PING, OP_PONG = 0x8, 0x9, 0xA


def accept_key(client_key: str) -> str:
    digest = hashlib.sha1((client_key + WS_GUID).encode()).digest()
    return base64.b64encode(digest).decode()


def _read_exact(sock: socket.socket, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise IncompleteError("socket closed mid-frame")
        buf += chunk
    return buf


def read_http_request(sock: socket.socket) -> tuple[str, str, dict[str, str]]:
    """Read one HTTP/1.1 request head; returns (method, path, headers)."""
    data = b""
    while b"\r\n\r\n" not in data:
        chunk = sock.recv(4096)
        if not chunk:
            raise IncompleteError("socket closed during HTTP request")
        data += chunk
        if len(data) > 65536:
            raise FormatError("oversized HTTP request head")
    head = data.split(b"\r\n\r\n", 1)[0].decode("latin-1")
    lines = head.split("\r\n")
    try:
        method, path, _ = lines[0].split(" ", 2)
    except ValueError:
        raise FormatError(f"bad request line {lines[0]!r}") from None
    headers = {}
    for line in lines[1:]:
        if ":" in line:
            k, _, v = line.partition(":")
            headers[k.strip().lower()] = v.strip()
    return method, path, headers


class WSConnection:
    """One upgraded socket; thread-compatible (one reader, writes locked
    by the caller)."""

    def __init__(self, sock: socket.socket, mask_outgoing: bool):
        self.sock = sock
        self.mask_outgoing = mask_outgoing
        self.open = True

    # -- sending ----------------------------------------------------------

    def _send_frame(self, opcode: int, payload: bytes) -> None:
        fin_op = 0x80 | opcode
        length = len(payload)
        if length < 126:
            header = struct.pack("!BB", fin_op,
                                 (0x80 if self.mask_outgoing else 0) | length)
        elif length < 65536:
            header = struct.pack("!BBH", fin_op,
                                 (0x80 if self.mask_outgoing else 0) | 126, length)
        else:
            header = struct.pack("!BBQ", fin_op,
                                 (0x80 if self.mask_outgoing else 0) | 127, length)
        if self.mask_outgoing:
            mask = secrets.token_bytes(4)
            masked = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
            self.sock.sendall(header + mask + masked)
        else:
            self.sock.sendall(header + payload)

    def send_text(self, text: str) -> None:
        self._send_frame(OP_TEXT, text.encode("utf-8"))

    def send_binary(self, data: bytes) -> None:
        self._send_frame(OP_BINARY, data)

    def send_close(self, code: int = 1000) -> None:
        try:
            self._send_frame(OP_CLOSE, struct.pack("!H", code))
        except OSError:
            pass
        self.open = False

    # -- receiving ---------------------------------------------------------

    def recv_message(self) -> tuple[int, bytes] | None:
        """Next data message as (opcode, payload); None once closed.
        Handles ping/pong and fragmentation internally."""
        buffer = b""
        first_opcode = None
        while True:
            b0, b1 = struct.unpack("!BB", _read_exact(self.sock, 2))
            fin = bool(b0 & 0x80)
            opcode = b0 & 0x0F
            masked = bool(b1 & 0x80)
            length = b1 & 0x7F
            if length == 126:
                (length,) = struct.unpack("!H", _read_exact(self.sock, 2))
            elif length == 127:
                (length,) = struct.unpack("!Q", _read_exact(self.sock, 8))
            mask = _read_exact(self.sock, 4) if masked else None
            payload = _read_exact(self.sock, length) if length else b""
            if mask:
                payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
            if opcode == OP_CLOSE:
                self.send_close()
                return None
            if opcode == OP_PING:
                self._send_frame(OP_PONG, payload)
                continue
            if opcode == OP_PONG:
                continue
            if opcode in (OP_TEXT, OP_BINARY):
                first_opcode = opcode
                buffer = payload
            elif opcode == OP_CONT:
                buffer += payload
            else:
                raise FormatError(f"unexpected opcode {opcode}")
            if fin:
                return first_opcode, buffer

    def close(self) -> None:
        self.open = False
        try:
            self.sock.close()
        except OSError:
            pass


def server_upgrade(sock: socket.socket, headers: dict[str, str]) -> WSConnection:
    """Answer an Upgrade: websocket request."""
    if headers.get("upgrade", "").lower() != "websocket":
        raise FormatError("not a websocket upgrade request")
    key = headers.get("sec-websocket-key")
    if not key:
        raise FormatError("missing Sec-WebSocket-Key")
    response = (
        "HTTP/1.1 101 Switching Protocols\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Accept: {accept_key(key)}\r\n\r\n"
    )
    sock.sendall(response.encode("latin-1"))
    return WSConnection(sock, mask_outgoing=False)


def client_connect(host: str, port: int, path: str = "/ws",
                   timeout: float = 5.0) -> WSConnection:
    """Plain WebSocket client used by tests and diagnostics."""
    sock = socket.create_connection((host, port), timeout=timeout)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    key = base64.b64encode(os.urandom(16)).decode()
    request = (
        f"GET {path} HTTP/1.1\r\n"
        f"Host: {host}:{port}\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Key: {key}\r\n"
        "Sec-WebSocket-Version: 13\r\n\r\n"
    )
    sock.sendall(request.encode("latin-1"))
    data = b""
    while b"\r\n\r\n" not in data:
        chunk = sock.recv(4096)
        if not chunk:
            raise IncompleteError("server closed during handshake")
        data += chunk
    head = data.split(b"\r\n\r\n", 1)[0].decode("latin-1")
    if "101" not in head.split("\r\n")[0]:
        raise FormatError(f"upgrade refused: {head.splitlines()[0]}")
    expected = accept_key(key)
    if f"sec-websocket-accept: {expected.lower()}" not in head.lower():
        raise FormatError("bad Sec-WebSocket-Accept")
    return WSConnection(sock, mask_outgoing=True)
