"""Live session server: TCP line endpoint plus a browser WebSocket endpoint.

Both transports carry the same LF-terminated JSON lines; WebSocket clients
send them as text frames on path /ws.  Every connection funnels decoded
messages into one queue consumed serially by the engine thread, which fans
emissions back out: headsets receive marker, confirmation, episode, and
POI traffic; observers receive everything.
"""
from __future__ import annotations

import base64
import hashlib
import mimetypes
import os
import queue
import socket
import struct
import threading
import time
import uuid
from typing import Optional

from .config import EngineConfig, NetConfig
from .engine import AttentionEngine, Poi
from .geometry import Vec3
from .protocol import (
    ProtocolError,
    RoleViolation,
    ROLE_TYPES,
    SessionCore,
    WireMessage,
    decode,
    encode,
)

_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

HEADSET_TYPES = {
    "MARKER_PLACE", "MARKER_MOVE", "MARKER_REMOVE",
    "GAZE_CONFIRMED", "EPISODE_DONE", "POI_WORLD",
}

OUTBOUND_QUEUE_LIMIT = 1000
TICK_HZ = 20


class Connection:
    """One client; the writer thread drains a bounded outbound queue."""

    _next_id = 1
    _id_lock = threading.Lock()

    def __init__(self, sock: socket.socket, transport: str):
        with Connection._id_lock:
            self.id = Connection._next_id
            Connection._next_id += 1
        self.sock = sock
        self.transport = transport  # "tcp" | "ws"
        self.role: Optional[str] = None
        self.last_seq: Optional[int] = None
        self.outbound: queue.Queue = queue.Queue(maxsize=OUTBOUND_QUEUE_LIMIT)
        self.closed = threading.Event()

    def send_line(self, line: bytes):
        try:
            self.outbound.put_nowait(line)
        except queue.Full:
            # Slow consumer: drop the connection rather than the session.
            self.closed.set()
            self.hard_close()

    def close(self):
        """Close after any queued outbound lines have been written."""
        if not self.closed.is_set():
            self.closed.set()
            try:
                self.outbound.put_nowait(None)
            except queue.Full:
                self.hard_close()

    def hard_close(self):
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self.sock.close()
        except OSError:
            pass

    # -- raw writes (writer thread only) -------------------------------

    def write_raw(self, line: bytes):
        if self.transport == "tcp":
            self.sock.sendall(line)
        else:
            payload = line.rstrip(b"\n")
            header = bytearray([0x81])
            n = len(payload)
            if n < 126:
                header.append(n)
            elif n < 1 << 16:
                header.append(126)
                header += struct.pack(">H", n)
            else:
                header.append(127)
                header += struct.pack(">Q", n)
            self.sock.sendall(bytes(header) + payload)


class SessionServer:
    def __init__(self, engine_cfg: EngineConfig, net: NetConfig,
                 world: Optional[list] = None):
        self.engine_cfg = engine_cfg
        self.net = net
        self.world = world or []
        self.session_id = uuid.uuid4().hex[:12]
        self.epoch = time.time()
        self.events: queue.Queue = queue.Queue()
        self.connections: dict = {}
        self.conn_lock = threading.Lock()
        self.running = threading.Event()
        self._threads: list = []
        os.makedirs(net.log_dir, exist_ok=True)
        self.log_path = os.path.join(net.log_dir, f"session-{self.session_id}.ndjson")
        self._log_file = open(self.log_path, "w", encoding="utf-8")
        self.core = SessionCore(AttentionEngine(engine_cfg), log=self._log_file)
        try:
            self.tcp_listener = self._bind(net.port)
            self.ws_listener = self._bind(net.ws_port)
        except OSError:
            self._log_file.close()
            raise

    @staticmethod
    def _bind(port: int) -> socket.socket:
        s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        s.bind(("0.0.0.0", port))
        s.listen(16)
        return s

    def now_us(self) -> int:
        return int((time.time() - self.epoch) * 1e6)

    # -- lifecycle -----------------------------------------------------

    def start(self):
        self.running.set()
        # Seed the engine's POI registry from the configured world.
        for poi_cfg in self.world:
            poi = Poi(id=poi_cfg["id"],
                      position=Vec3.from_seq(poi_cfg["position"]),
                      label=poi_cfg.get("label", ""))
            self.core.pois[poi.id] = poi
        for fn in (self._engine_loop, self._ticker):
            t = threading.Thread(target=fn, daemon=True)
            t.start()
            self._threads.append(t)
        for listener, transport in ((self.tcp_listener, "tcp"),
                                    (self.ws_listener, "ws")):
            t = threading.Thread(target=self._accept_loop,
                                 args=(listener, transport), daemon=True)
            t.start()
            self._threads.append(t)

    def stop(self):
        if not self.running.is_set():
            return
        self.running.clear()
        for listener in (self.tcp_listener, self.ws_listener):
            try:
                listener.close()
            except OSError:
                pass
        with self.conn_lock:
            conns = list(self.connections.values())
        for conn in conns:
            conn.close()
        self.events.put(None)
        self._log_file.flush()
        self._log_file.close()

    def serve_forever(self):
        self.start()
        try:
            while self.running.is_set():
                time.sleep(0.1)
        finally:
            self.stop()

    # -- accept / per-connection ---------------------------------------

    def _accept_loop(self, listener: socket.socket, transport: str):
        while self.running.is_set():
            try:
                sock, _addr = listener.accept()
            except OSError:
                return
            conn = Connection(sock, transport)
            threading.Thread(target=self._writer, args=(conn,), daemon=True).start()
            threading.Thread(target=self._reader, args=(conn,), daemon=True).start()

    def _writer(self, conn: Connection):
        while True:
            line = conn.outbound.get()
            if line is None:
                conn.hard_close()
                return
            try:
                conn.write_raw(line)
            except OSError:
                conn.closed.set()
                conn.hard_close()
                return

    def _register(self, conn: Connection, role: str) -> bool:
        with self.conn_lock:
            if role in ("headset", "robot"):
                taken = any(c.role == role for c in self.connections.values())
                if taken:
                    return False
            conn.role = role
            self.connections[conn.id] = conn
        return True

    def _unregister(self, conn: Connection):
        with self.conn_lock:
            self.connections.pop(conn.id, None)
        conn.close()

    def _send_error(self, conn: Connection, code: str, msg: str):
        err = WireMessage(type="ERROR", seq=0, ts=self.now_us(),
                          payload={"code": code, "msg": msg})
        conn.send_line(encode(err))

    def _reader(self, conn: Connection):
        try:
            if conn.transport == "ws":
                if not self._ws_handshake(conn):
                    return
                lines = self._ws_lines(conn)
            else:
                lines = self._tcp_lines(conn)
            self._handle_lines(conn, lines)
        except OSError:
            pass
        finally:
            self._unregister(conn)

    def _tcp_lines(self, conn: Connection):
        buf = b""
        sock = conn.sock
        while True:
            chunk = sock.recv(4096)
            if not chunk:
                return
            buf += chunk
            while b"\n" in buf:
                line, buf = buf.split(b"\n", 1)
                yield line

    def _handle_lines(self, conn: Connection, lines):
        # Handshake: the first message must be HELLO{role}.
        first = next(lines, None)
        if first is None:
            return
        try:
            hello = decode(first)
            if hello.type != "HELLO":
                raise RoleViolation("first message must be HELLO")
        except ProtocolError as exc:
            self._send_error(conn, exc.code, str(exc))
            return
        role = hello.payload["role"]
        if not self._register(conn, role):
            self._send_error(conn, "role-taken",
                             f"session already has a {role}")
            return
        welcome = WireMessage(type="WELCOME", seq=0, ts=self.now_us(), payload={
            "session_id": self.session_id,
            "epoch_ts": int(self.epoch * 1e6),
        })
        conn.send_line(encode(welcome))
        conn.last_seq = hello.seq
        for raw in lines:
            if not self.running.is_set():
                return
            try:
                msg = decode(raw)
            except ProtocolError as exc:
                # Malformed lines are reported; the connection stays usable.
                self._send_error(conn, exc.code, str(exc))
                continue
            if msg.seq <= conn.last_seq:
                self._send_error(conn, "non-monotonic-seq",
                                 f"seq {msg.seq} after {conn.last_seq}")
                return
            conn.last_seq = msg.seq
            if msg.type not in ROLE_TYPES.get(conn.role, set()):
                self._send_error(conn, "role-violation",
                                 f"{conn.role} may not send {msg.type}")
                return
            self.events.put((conn, msg))

    # -- WebSocket plumbing --------------------------------------------

    def _ws_handshake(self, conn: Connection) -> bool:
        sock = conn.sock
        data = b""
        while b"\r\n\r\n" not in data:
            chunk = sock.recv(4096)
            if not chunk:
                return False
            data = data + chunk
            if len(data) > 65536:
                return False
        head, _, _rest = data.partition(b"\r\n\r\n")
        lines = head.decode("latin-1").split("\r\n")
        try:
            method, path, _version = lines[0].split(" ", 2)
        except ValueError:
            return False
        headers = {}
        for line in lines[1:]:
            if ":" in line:
                k, v = line.split(":", 1)
                headers[k.strip().lower()] = v.strip()
        if headers.get("upgrade", "").lower() != "websocket":
            self._serve_static(conn, method, path)
            return False
        if path.split("?", 1)[0] != "/ws":
            sock.sendall(b"HTTP/1.1 404 Not Found\r\nContent-Length: 0\r\n\r\n")
            return False
        key = headers.get("sec-websocket-key", "")
        accept = base64.b64encode(
            hashlib.sha1((key + _WS_GUID).encode("ascii")).digest()
        ).decode("ascii")
        sock.sendall(
            b"HTTP/1.1 101 Switching Protocols\r\n"
            b"Upgrade: websocket\r\n"
            b"Connection: Upgrade\r\n"
            + f"Sec-WebSocket-Accept: {accept}\r\n\r\n".encode("ascii")
        )
        return True

    def _serve_static(self, conn: Connection, method: str, path: str):
        sock = conn.sock
        root = self.net.static_dir
        if method != "GET" or root is None:
            sock.sendall(b"HTTP/1.1 404 Not Found\r\nContent-Length: 0\r\n\r\n")
            return
        rel = path.split("?", 1)[0].lstrip("/") or "index.html"
        full = os.path.realpath(os.path.join(root, rel))
        if not full.startswith(os.path.realpath(root)) or not os.path.isfile(full):
            sock.sendall(b"HTTP/1.1 404 Not Found\r\nContent-Length: 0\r\n\r\n")
            return
        with open(full, "rb") as fh:
            body = fh.read()
        ctype = mimetypes.guess_type(full)[0] or "application/octet-stream"
        sock.sendall(
            f"HTTP/1.1 200 OK\r\nContent-Type: {ctype}\r\n"
            f"Content-Length: {len(body)}\r\n\r\n".encode("ascii") + body)

    def _recv_exact(self, sock: socket.socket, n: int) -> bytes:
        buf = b""
        while len(buf) < n:
            chunk = sock.recv(n - len(buf))
            if not chunk:
                raise OSError("connection closed mid-frame")
            buf += chunk
        return buf

    def _ws_lines(self, conn: Connection):
        sock = conn.sock
        while True:
            hdr = self._recv_exact(sock, 2)
            opcode = hdr[0] & 0x0F
            masked = bool(hdr[1] & 0x80)
            length = hdr[1] & 0x7F
            if length == 126:
                length = struct.unpack(">H", self._recv_exact(sock, 2))[0]
            elif length == 127:
                length = struct.unpack(">Q", self._recv_exact(sock, 8))[0]
            mask = self._recv_exact(sock, 4) if masked else b"\x00" * 4
            payload = self._recv_exact(sock, length)
            if masked:
                payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
            if opcode == 0x8:  # close
                return
            if opcode == 0x9:  # ping -> pong
                sock.sendall(bytes([0x8A, len(payload)]) + payload)
                continue
            if opcode in (0x1, 0x2):
                for piece in payload.split(b"\n"):
                    if piece.strip():
                        yield piece

    # -- engine side ---------------------------------------------------

    def _ticker(self):
        period = 1.0 / TICK_HZ
        seq = 0
        while self.running.is_set():
            time.sleep(period)
            msg = WireMessage(type="TICK", seq=seq, ts=self.now_us())
            seq += 1
            self.events.put((None, msg))

    def _engine_loop(self):
        while True:
            item = self.events.get()
            if item is None:
                return
            conn, msg = item
            try:
                emissions = self.core.submit(msg)
            except ProtocolError as exc:
                if conn is not None:
                    self._send_error(conn, exc.code, str(exc))
                continue
            self._fan_out(conn, emissions)

    def _fan_out(self, origin: Optional[Connection], emissions):
        with self.conn_lock:
            conns = list(self.connections.values())
        for m in emissions:
            line = encode(m)
            if m.type == "ERROR":
                if origin is not None:
                    origin.send_line(line)
                continue
            for c in conns:
                if c.role == "observer":
                    c.send_line(line)
                elif c.role == "headset" and m.type in HEADSET_TYPES:
                    c.send_line(line)
