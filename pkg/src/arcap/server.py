"""Streaming engine service: raw TCP framing plus a web-compatible path.

Each connection owns one engine session (hello handshake, optional scene
upload and robot placement, then hand frames in / engine outputs out). HTTP
connections on the same port serve the browser console assets, the /model,
/config and /scene endpoints, and WebSocket upgrades at /ws carrying the
identical length-prefixed frames inside binary messages.
"""

from __future__ import annotations

import base64
import hashlib
import json
import re
import select
import socket
import struct
import threading
from pathlib import Path

import numpy as np

from .engine import (
    EngineConfig,
    calibrate_extrinsics,
    config_to_dict,
    initial_state,
    place_virtual_robot,
    process_frame,
)
from .errors import OrderingError, ProtocolError, StateError
from .kinematics import robot_model_to_dict
from .protocol import (
    DEFAULT_PORT,
    PROTOCOL_VERSION,
    FrameStream,
    cloud_from_wire,
    decode_message,
    encode_message,
    hand_frame_from_wire,
    output_to_wire,
    pose_from_wire,
    pose_to_wire,
)
from .recording import DemoFrame, DemoRecorder
from .scene import ColoredPointCloud, VoxelGrid, voxelize

_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

# client-supplied ids become directory names; keep them boring
_SESSION_ID_RE = re.compile(r"[A-Za-z0-9._-]{1,64}")

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".mjs": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".map": "application/json",
    ".png": "image/png",
    ".svg": "image/svg+xml",
}


class _WebSocketStream:
    """Message framing over an upgraded WebSocket; mirrors FrameStream."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.buf = bytearray()
        self.frag = bytearray()
        self.pending: list[dict] = []
        self.eof = False

    def _parse_ws_frames(self) -> None:
        # Consume as many complete WebSocket frames as the buffer holds.
        while True:
            if len(self.buf) < 2:
                return
            b0, b1 = self.buf[0], self.buf[1]
            fin = bool(b0 & 0x80)
            opcode = b0 & 0x0F
            masked = bool(b1 & 0x80)
            length = b1 & 0x7F
            pos = 2
            if length == 126:
                if len(self.buf) < pos + 2:
                    return
                (length,) = struct.unpack_from(">H", self.buf, pos)
                pos += 2
            elif length == 127:
                if len(self.buf) < pos + 8:
                    return
                (length,) = struct.unpack_from(">Q", self.buf, pos)
                pos += 8
            mask = b""
            if masked:
                if len(self.buf) < pos + 4:
                    return
                mask = bytes(self.buf[pos:pos + 4])
                pos += 4
            if len(self.buf) < pos + length:
                return
            payload = bytes(self.buf[pos:pos + length])
            del self.buf[:pos + length]
            if masked and length:
                data = np.frombuffer(payload, dtype=np.uint8)
                key = np.frombuffer((mask * (length // 4 + 1))[:length], dtype=np.uint8)
                payload = (data ^ key).tobytes()
            if opcode == 0x8:  # close
                self.eof = True
                try:
                    self.sock.sendall(b"\x88\x00")
                except OSError:
                    pass
                return
            if opcode == 0x9:  # ping -> pong
                self._send_raw(0xA, payload)
                continue
            if opcode == 0xA:  # pong
                continue
            self.frag.extend(payload)
            if fin:
                whole = bytes(self.frag)
                self.frag.clear()
                try:
                    msg, consumed = decode_message(whole)
                    if consumed != len(whole):
                        raise ProtocolError("trailing_bytes", "websocket message holds extra bytes")
                    self.pending.append(msg)
                except ProtocolError as err:
                    err.fatal = getattr(err, "fatal", False)
                    self.pending.append(err)  # surfaced by recv_message

    def _send_raw(self, opcode: int, payload: bytes) -> None:
        header = bytearray([0x80 | opcode])
        n = len(payload)
        if n < 126:
            header.append(n)
        elif n < 65536:
            header.append(126)
            header.extend(struct.pack(">H", n))
        else:
            header.append(127)
            header.extend(struct.pack(">Q", n))
        self.sock.sendall(bytes(header) + payload)

    def _pop_pending(self):
        if self.pending:
            item = self.pending.pop(0)
            if isinstance(item, ProtocolError):
                raise item
            return item
        return None

    def recv_message(self, timeout: float | None = None) -> dict | None:
        while True:
            msg = self._pop_pending()
            if msg is not None:
                return msg
            if self.eof:
                return None
            self.sock.settimeout(timeout)
            try:
                chunk = self.sock.recv(65536)
            except socket.timeout:
                raise TimeoutError("timed out waiting for a websocket frame")
            except OSError:
                self.eof = True
                return None
            if not chunk:
                self.eof = True
                return None
            self.buf.extend(chunk)
            self._parse_ws_frames()

    def poll_messages(self, limit: int = 1024) -> list[dict]:
        while True:
            readable, _, _ = select.select([self.sock], [], [], 0)
            if not readable:
                break
            try:
                chunk = self.sock.recv(65536)
            except OSError:
                self.eof = True
                break
            if not chunk:
                self.eof = True
                break
            self.buf.extend(chunk)
        self._parse_ws_frames()
        out = []
        while len(out) < limit:
            try:
                msg = self._pop_pending()
            except ProtocolError:
                continue
            if msg is None:
                break
            out.append(msg)
        return out

    def send_message(self, msg: dict) -> None:
        self._send_raw(0x2, encode_message(msg))

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class EngineServer:
    """Threaded service; one engine session per connection."""

    def __init__(
        self,
        config: EngineConfig,
        host: str = "127.0.0.1",
        port: int = DEFAULT_PORT,
        scene: ColoredPointCloud | None = None,
        sessions_dir: str | Path = "sessions",
        console_dir: str | Path | None = None,
        grid_origin=(0.0, 0.0, 0.0),
    ):
        self.config = config
        self.host = host
        self.sessions_dir = Path(sessions_dir)
        self.console_dir = Path(console_dir).resolve() if console_dir else None
        self.grid_origin = np.asarray(grid_origin, dtype=np.float64)
        if scene is not None:
            self.base_grid = voxelize(scene, self.grid_origin, config.voxel_resolution)
            # warm the nearest-neighbor index before sessions share the grid
            self.base_grid.nearest_center_distances(np.zeros((1, 3)))
        else:
            self.base_grid = VoxelGrid(self.grid_origin, config.voxel_resolution)
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self.port = self._listener.getsockname()[1]
        self._accept_thread: threading.Thread | None = None
        self._conn_threads: list[threading.Thread] = []
        self._running = False
        self._session_counter = 0
        self._lock = threading.Lock()

    # -- lifecycle ----------------------------------------------------------

    def start(self) -> "EngineServer":
        self._listener.listen(16)
        self._listener.settimeout(0.25)  # lets the accept loop notice stop()
        self._running = True
        self._accept_thread = threading.Thread(target=self._accept_loop, name="arcap-accept", daemon=True)
        self._accept_thread.start()
        return self

    def stop(self) -> None:
        self._running = False
        try:
            self._listener.close()
        except OSError:
            pass
        if self._accept_thread:
            self._accept_thread.join(timeout=5)
        for t in list(self._conn_threads):
            t.join(timeout=5)

    def serve_forever(self) -> None:
        self.start()
        try:
            while self._running:
                self._accept_thread.join(timeout=0.5)
                if not self._accept_thread.is_alive():
                    break
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()

    def _accept_loop(self) -> None:
        while self._running:
            try:
                sock, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            sock.settimeout(None)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            t = threading.Thread(target=self._handle_connection, args=(sock,), daemon=True)
            self._conn_threads.append(t)
            t.start()

    def _next_session_id(self) -> str:
        with self._lock:
            self._session_counter += 1
            return f"{self._session_counter:04d}"

    # -- connection handling -------------------------------------------------

    def _handle_connection(self, sock: socket.socket) -> None:
        try:
            head = sock.recv(4, socket.MSG_PEEK)
            if not head:
                sock.close()
                return
            if head[:4] in (b"GET ", b"HEAD", b"POST"):
                self._handle_http(sock)
            else:
                self._run_session(FrameStream(sock))
        except Exception:
            try:
                sock.close()
            except OSError:
                pass

    def _handle_http(self, sock: socket.socket) -> None:
        sock.settimeout(10.0)
        data = bytearray()
        while b"\r\n\r\n" not in data:
            chunk = sock.recv(65536)
            if not chunk:
                sock.close()
                return
            data.extend(chunk)
            if len(data) > 65536:
                sock.close()
                return
        head = bytes(data).split(b"\r\n\r\n", 1)[0].decode("latin-1")
        lines = head.split("\r\n")
        method, path, _ = lines[0].split(" ", 2)
        headers = {}
        for line in lines[1:]:
            if ":" in line:
                k, v = line.split(":", 1)
                headers[k.strip().lower()] = v.strip()
        if headers.get("upgrade", "").lower() == "websocket":
            key = headers.get("sec-websocket-key", "")
            accept = base64.b64encode(hashlib.sha1((key + _WS_GUID).encode()).digest()).decode()
            sock.sendall(
                b"HTTP/1.1 101 Switching Protocols\r\n"
                b"Upgrade: websocket\r\nConnection: Upgrade\r\n"
                b"Sec-WebSocket-Accept: " + accept.encode() + b"\r\n\r\n")
            sock.settimeout(None)
            self._run_session(_WebSocketStream(sock))
            return
        self._serve_http(sock, method, path)

    def _http_reply(self, sock, status: str, body: bytes, ctype: str = "text/plain") -> None:
        sock.sendall(
            f"HTTP/1.1 {status}\r\nContent-Type: {ctype}\r\n"
            f"Content-Length: {len(body)}\r\nAccess-Control-Allow-Origin: *\r\n"
            f"Connection: close\r\n\r\n".encode() + body)
        sock.close()

    def _serve_http(self, sock, method: str, path: str) -> None:
        if method not in ("GET", "HEAD"):
            self._http_reply(sock, "405 Method Not Allowed", b"method not allowed")
            return
        path = path.split("?", 1)[0]
        if path == "/model":
            body = json.dumps(robot_model_to_dict(self.config.model)).encode()
            self._http_reply(sock, "200 OK", body, "application/json")
        elif path == "/config":
            body = json.dumps(config_to_dict(self.config, embed_model=False)).encode()
            self._http_reply(sock, "200 OK", body, "application/json")
        elif path == "/scene":
            body = json.dumps({
                "origin": [float(x) for x in self.base_grid.origin],
                "resolution": self.base_grid.resolution,
                "occupied": sorted(self.base_grid.occupied),
            }).encode()
            self._http_reply(sock, "200 OK", body, "application/json")
        elif self.console_dir is not None:
            rel = "index.html" if path == "/" else path.lstrip("/")
            target = (self.console_dir / rel).resolve()
            if not str(target).startswith(str(self.console_dir)) or not target.is_file():
                self._http_reply(sock, "404 Not Found", b"not found")
                return
            ctype = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
            self._http_reply(sock, "200 OK", target.read_bytes(), ctype)
        else:
            self._http_reply(sock, "404 Not Found", b"not found")

    # -- protocol session ----------------------------------------------------

    def _run_session(self, stream) -> None:
        out_seq = 0

        def send(mtype: str, **fields) -> None:
            nonlocal out_seq
            out_seq += 1
            stream.send_message({"type": mtype, "seq": out_seq, **fields})

        def send_error(code: str, text: str) -> None:
            try:
                send("error", code=code, text=text)
            except OSError:
                pass

        recorder: DemoRecorder | None = None
        try:
            # Handshake: first message must be a version-matched hello.
            try:
                first = stream.recv_message(timeout=30.0)
            except ProtocolError as err:
                send_error(err.code, err.text)
                return
            if first is None:
                return
            if first["type"] != "hello":
                send_error("handshake_required", "first message must be hello")
                return
            if first.get("version") != PROTOCOL_VERSION:
                send_error("version_mismatch",
                           f"server speaks version {PROTOCOL_VERSION}, client sent {first.get('version')!r}")
                return
            send("hello", version=PROTOCOL_VERSION, client="server")

            config = self.config
            grid = self.base_grid
            state = initial_state(config)
            last_in_seq = first["seq"]
            dropped_since_reply = 0
            queue: list[dict] = []

            while True:
                if not queue:
                    try:
                        msg = stream.recv_message(timeout=None)
                    except ProtocolError as err:
                        if getattr(err, "fatal", False):
                            send_error(err.code, err.text)
                            return
                        send_error(err.code, err.text)
                        continue
                    if msg is None:
                        return
                    queue.append(msg)
                    # Backpressure: coalesce any backlog that built up while
                    # the engine was busy with the previous tick.
                    queue.extend(stream.poll_messages())
                msg = queue.pop(0)
                if msg["seq"] <= last_in_seq:
                    send_error("bad_sequence", f"seq {msg['seq']} not increasing")
                    continue
                last_in_seq = msg["seq"]
                mtype = msg["type"]

                if mtype == "hand_frame":
                    if queue and queue[0]["type"] == "hand_frame":
                        dropped_since_reply += 1  # newer frame already waiting
                        continue
                    try:
                        frame, cloud = hand_frame_from_wire(msg["frame"])
                    except ProtocolError as err:
                        send_error(err.code, err.text)
                        continue
                    try:
                        state, output = process_frame(state, frame, config, grid)
                    except OrderingError as exc:
                        send_error("ordering", str(exc))
                        continue
                    if recorder is not None:
                        recorder.append(DemoFrame.create(
                            output.timestamp, cloud, output.joint_angles, frame.headset,
                            config.base_pose, output.gripper_command,
                            (e.kind for e in output.events)))
                    send("engine_output", in_reply_to=msg["seq"], dropped=dropped_since_reply,
                         output=output_to_wire(output))
                    dropped_since_reply = 0
                elif mtype == "scene_upload":
                    try:
                        cloud = cloud_from_wire(msg["cloud"])
                    except ProtocolError as err:
                        send_error(err.code, err.text)
                        continue
                    grid = voxelize(cloud, self.grid_origin, config.voxel_resolution)
                elif mtype == "place_robot":
                    try:
                        pose = pose_from_wire(msg["pose"])
                    except ProtocolError as err:
                        send_error(err.code, err.text)
                        continue
                    config = place_virtual_robot(config, pose)
                    state = initial_state(config)
                elif mtype == "record_start":
                    if recorder is not None:
                        send_error("state", "already recording")
                        continue
                    session_id = msg.get("session_id") or self._next_session_id()
                    if not isinstance(session_id, str) or not _SESSION_ID_RE.fullmatch(session_id):
                        send_error("bad_session_id", "session id must match [A-Za-z0-9._-]{1,64}")
                        continue
                    try:
                        recorder = DemoRecorder(self.sessions_dir / f"session-{session_id}", config)
                    except StateError as exc:
                        send_error("state", str(exc))
                        continue
                    send("record_start", session_id=session_id)
                elif mtype == "record_stop":
                    if recorder is None:
                        send_error("state", "not recording")
                        continue
                    mode = msg.get("mode")
                    if mode not in ("finalize", "discard"):
                        send_error("bad_mode", f"mode must be finalize|discard, got {mode!r}")
                        continue
                    if mode == "finalize":
                        recorder.finalize()
                    else:
                        recorder.discard()
                    session_id = recorder.session_id
                    recorder = None
                    send("record_stop", mode=mode, session_id=session_id)
                elif mtype == "calibrate":
                    try:
                        t_wb = pose_from_wire(msg["robot_base"])
                        t_wc = pose_from_wire(msg["camera"])
                    except ProtocolError as err:
                        send_error(err.code, err.text)
                        continue
                    send("calibration_result", pose=pose_to_wire(calibrate_extrinsics(t_wb, t_wc)))
                elif mtype == "hello":
                    send_error("protocol", "duplicate hello")
                elif mtype == "error":
                    pass  # client-side report; nothing to do
                else:
                    send_error("protocol", f"server does not accept {mtype!r}")
        except (OSError, TimeoutError):
            pass
        finally:
            if recorder is not None and recorder.status == "recording":
                recorder.discard()  # mid-session disconnect
            stream.close()
