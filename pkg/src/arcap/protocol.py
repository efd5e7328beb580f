"""Versioned wire protocol between tracker clients and the engine service.

Frames are a u32 little-endian byte length followed by a canonical JSON
payload (sorted keys, no whitespace) carrying a ``type`` and a per-sender
monotonically increasing ``seq``. Point clouds travel as base64-packed
little-endian float32/uint8 arrays. The exact field names are documented in
PROTOCOL.md at the repo root.
"""

from __future__ import annotations

import base64
import json
import socket
import struct
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ContractViolation, IncompleteFrame, IntegrityError, ProtocolError
from .geometry import Pose
from .kinematics import frame_pose
from .recording import DemoSession, read_session
from .retargeting import FINGERS, GripperCommand, HandFrame
from .scene import ColoredPointCloud, DisplayColor, EventKind, FeedbackDisplay, FeedbackEvent

PROTOCOL_VERSION = 1
DEFAULT_PORT = 8765
PORT_ENV_VAR = "ARCAP_PORT"

MAX_FRAME_BYTES = 32 * 1024 * 1024

MESSAGE_TYPES = {
    "hello": ("version", "client"),
    "scene_upload": ("cloud",),
    "place_robot": ("pose",),
    "hand_frame": ("frame",),
    "engine_output": ("in_reply_to", "dropped", "output"),
    "record_start": ("session_id",),
    "record_stop": ("mode",),
    "calibrate": ("robot_base", "camera"),
    "calibration_result": ("pose",),
    "error": ("code", "text"),
}


def encode_message(msg: dict) -> bytes:
    if "type" not in msg or msg["type"] not in MESSAGE_TYPES:
        raise ContractViolation(f"unknown message type {msg.get('type')!r}")
    payload = json.dumps(msg, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return struct.pack("<I", len(payload)) + payload


def decode_message(buf, offset: int = 0) -> tuple[dict, int]:
    """Decode one frame from buf at offset; returns (message, next offset).

    Raises IncompleteFrame when more bytes are needed. A ProtocolError from a
    complete-but-malformed frame carries ``.consumed`` so callers can skip it
    and keep the connection alive; ``.fatal`` marks unrecoverable framing.
    """
    view = memoryview(buf)
    try:
        if len(view) - offset < 4:
            raise IncompleteFrame()
        (length,) = struct.unpack_from("<I", view, offset)
        if length > MAX_FRAME_BYTES:
            err = ProtocolError("frame_too_large", f"frame length {length} exceeds {MAX_FRAME_BYTES}")
            err.fatal = True
            raise err
        if len(view) - offset - 4 < length:
            raise IncompleteFrame()
        end = offset + 4 + length
        raw = bytes(view[offset + 4:end])
    finally:
        view.release()

    def bad(code: str, text: str) -> ProtocolError:
        err = ProtocolError(code, text)
        err.consumed = end
        err.fatal = False
        return err

    try:
        msg = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise bad("malformed_payload", f"payload is not valid JSON: {exc}") from exc
    if not isinstance(msg, dict):
        raise bad("malformed_payload", "payload must be a JSON object")
    mtype = msg.get("type")
    if mtype not in MESSAGE_TYPES:
        raise bad("unknown_type", f"unknown message type {mtype!r}")
    if not isinstance(msg.get("seq"), int) or msg["seq"] < 0:
        raise bad("bad_sequence", "seq must be a non-negative integer")
    for fieldname in MESSAGE_TYPES[mtype]:
        if fieldname not in msg:
            raise bad("missing_field", f"{mtype} message lacks {fieldname!r}")
    return msg, end


# ---------------------------------------------------------------------------
# Domain <-> wire converters


def pose_to_wire(p: Pose) -> dict:
    return {"position": [float(x) for x in p.position],
            "orientation": [float(x) for x in p.orientation]}


def pose_from_wire(d) -> Pose:
    try:
        return Pose(np.asarray(d["position"], dtype=np.float64).reshape(3),
                    np.asarray(d["orientation"], dtype=np.float64).reshape(4))
    except (KeyError, TypeError, ValueError, ContractViolation) as exc:
        raise ProtocolError("bad_pose", str(exc)) from exc


def _b64(arr: np.ndarray) -> str:
    return base64.b64encode(arr.tobytes()).decode("ascii")


def cloud_to_wire(cloud: ColoredPointCloud) -> dict:
    return {"count": len(cloud),
            "xyz": _b64(cloud.points.astype("<f4")),
            "rgb": _b64(cloud.colors.astype("u1"))}


def cloud_from_wire(d) -> ColoredPointCloud:
    try:
        count = int(d["count"])
        xyz = np.frombuffer(base64.b64decode(d["xyz"], validate=True), dtype="<f4")
        rgb = np.frombuffer(base64.b64decode(d["rgb"], validate=True), dtype="u1")
        if count < 0 or len(xyz) != 3 * count or len(rgb) != 3 * count:
            raise ValueError(f"cloud arrays do not match count={count}")
        return ColoredPointCloud(xyz.reshape(count, 3).astype(np.float64), rgb.reshape(count, 3).copy())
    except (KeyError, TypeError, ValueError, ContractViolation) as exc:
        raise ProtocolError("bad_cloud", str(exc)) from exc


def hand_frame_to_wire(frame: HandFrame, cloud: ColoredPointCloud | None = None) -> dict:
    return {
        "timestamp": float(frame.timestamp),
        "wrist": pose_to_wire(frame.wrist),
        "headset": pose_to_wire(frame.headset),
        "fingertips": {f: [float(x) for x in frame.fingertips[f]] for f in FINGERS},
        "cloud": cloud_to_wire(cloud) if cloud is not None else None,
    }


def hand_frame_from_wire(d) -> tuple[HandFrame, ColoredPointCloud | None]:
    try:
        tips = {f: np.asarray(d["fingertips"][f], dtype=np.float64).reshape(3) for f in FINGERS}
        frame = HandFrame(timestamp=float(d["timestamp"]),
                          wrist=pose_from_wire(d["wrist"]),
                          headset=pose_from_wire(d["headset"]),
                          fingertips=tips)
    except ProtocolError:
        raise
    except (KeyError, TypeError, ValueError, ContractViolation) as exc:
        raise ProtocolError("bad_hand_frame", str(exc)) from exc
    cloud = cloud_from_wire(d["cloud"]) if d.get("cloud") is not None else None
    return frame, cloud


def event_to_wire(e: FeedbackEvent) -> dict:
    return {"kind": e.kind.value, "timestamp": float(e.timestamp), "detail": e.detail}


def event_from_wire(d) -> FeedbackEvent:
    try:
        return FeedbackEvent(EventKind(d["kind"]), float(d["timestamp"]), dict(d["detail"]))
    except (KeyError, TypeError, ValueError, ContractViolation) as exc:
        raise ProtocolError("bad_event", str(exc)) from exc


def output_to_wire(out) -> dict:
    return {
        "timestamp": float(out.timestamp),
        "joint_angles": [float(x) for x in out.joint_angles],
        "gripper": out.gripper_command.value if out.gripper_command is not None else None,
        "ee_pose": pose_to_wire(out.ee_pose),
        "events": [event_to_wire(e) for e in out.events],
        "display": {"color": out.display.color.value, "blinking": bool(out.display.blinking),
                    "haptic": bool(out.display.haptic)},
        "lagging": bool(out.lagging),
        "blink_phase": int(out.blink_phase),
    }


def output_from_wire(d):
    from .engine import EngineOutput  # local import to avoid a cycle

    try:
        disp = d["display"]
        return EngineOutput(
            timestamp=float(d["timestamp"]),
            joint_angles=np.asarray(d["joint_angles"], dtype=np.float64),
            gripper_command=GripperCommand(d["gripper"]) if d.get("gripper") is not None else None,
            ee_pose=pose_from_wire(d["ee_pose"]),
            events=tuple(event_from_wire(e) for e in d["events"]),
            display=FeedbackDisplay(DisplayColor(disp["color"]), bool(disp["blinking"]), bool(disp["haptic"])),
            lagging=bool(d["lagging"]),
            blink_phase=int(d["blink_phase"]),
        )
    except ProtocolError:
        raise
    except (KeyError, TypeError, ValueError, ContractViolation) as exc:
        raise ProtocolError("bad_output", str(exc)) from exc


# ---------------------------------------------------------------------------
# Socket framing


class FrameStream:
    """Length-prefixed message stream over a connected socket."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.buf = bytearray()
        self.eof = False

    def _try_decode(self) -> dict | None:
        try:
            msg, consumed = decode_message(self.buf)
        except IncompleteFrame:
            return None
        except ProtocolError as err:
            if getattr(err, "fatal", False):
                raise
            del self.buf[:err.consumed]
            raise
        del self.buf[:consumed]
        return msg

    def recv_message(self, timeout: float | None = None) -> dict | None:
        """Next message, or None at EOF. ProtocolError skips the bad frame."""
        while True:
            msg = self._try_decode()
            if msg is not None:
                return msg
            if self.eof:
                return None
            self.sock.settimeout(timeout)
            try:
                chunk = self.sock.recv(65536)
            except socket.timeout:
                raise TimeoutError("timed out waiting for a frame")
            if not chunk:
                self.eof = True
                if self.buf:
                    self.buf.clear()
                return None
            self.buf.extend(chunk)

    def poll_messages(self, limit: int = 1024) -> list[dict]:
        """Drain already-buffered frames without blocking; errors are skipped."""
        import select

        while True:
            readable, _, _ = select.select([self.sock], [], [], 0)
            if not readable:
                break
            chunk = self.sock.recv(65536)
            if not chunk:
                self.eof = True
                break
            self.buf.extend(chunk)
        out: list[dict] = []
        while len(out) < limit:
            try:
                msg = self._try_decode()
            except ProtocolError as err:
                if getattr(err, "fatal", False):
                    raise  # cannot resync past this frame
                continue
            if msg is None:
                break
            out.append(msg)
        return out

    def send_message(self, msg: dict) -> None:
        self.sock.sendall(encode_message(msg))

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class EngineClient:
    """Blocking client used by the replay CLI and the test suites."""

    def __init__(self, host: str = "127.0.0.1", port: int = DEFAULT_PORT,
                 client_kind: str = "client", timeout: float = 30.0,
                 version: int = PROTOCOL_VERSION):
        sock = socket.create_connection((host, port), timeout=timeout)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.stream = FrameStream(sock)
        self.timeout = timeout
        self._seq = 0
        self.server_hello = None
        self.send("hello", version=version, client=client_kind)
        reply = self.recv()
        if reply is None or reply["type"] == "error":
            code = reply["code"] if reply else "closed"
            raise ProtocolError(code, reply["text"] if reply else "server closed during handshake")
        if reply["type"] != "hello":
            raise ProtocolError("bad_handshake", f"expected hello, got {reply['type']}")
        self.server_hello = reply

    def send(self, mtype: str, **fields) -> int:
        self._seq += 1
        msg = {"type": mtype, "seq": self._seq, **fields}
        self.stream.send_message(msg)
        return self._seq

    def recv(self) -> dict | None:
        return self.stream.recv_message(timeout=self.timeout)

    def recv_nowait(self) -> list[dict]:
        return self.stream.poll_messages()

    def upload_scene(self, cloud: ColoredPointCloud) -> int:
        return self.send("scene_upload", cloud=cloud_to_wire(cloud))

    def place_robot(self, pose: Pose) -> int:
        return self.send("place_robot", pose=pose_to_wire(pose))

    def send_hand_frame(self, frame: HandFrame, cloud: ColoredPointCloud | None = None) -> int:
        return self.send("hand_frame", frame=hand_frame_to_wire(frame, cloud))

    def step(self, frame: HandFrame, cloud: ColoredPointCloud | None = None) -> dict:
        """Send one frame and block for its engine_output (or error) reply."""
        self.send_hand_frame(frame, cloud)
        reply = self.recv()
        if reply is None:
            raise ProtocolError("closed", "connection closed mid-stream")
        return reply

    def record_start(self, session_id: str | None = None) -> str:
        self.send("record_start", session_id=session_id)
        reply = self.recv()
        if reply is None or reply["type"] != "record_start":
            raise ProtocolError("record_failed", f"unexpected reply {reply and reply.get('type')!r}")
        return reply["session_id"]

    def record_stop(self, mode: str = "finalize") -> dict:
        self.send("record_stop", mode=mode)
        reply = self.recv()
        if reply is None or reply["type"] != "record_stop":
            raise ProtocolError("record_failed", f"unexpected reply {reply and reply.get('type')!r}")
        return reply

    def calibrate(self, robot_base: Pose, camera: Pose) -> Pose:
        self.send("calibrate", robot_base=pose_to_wire(robot_base), camera=pose_to_wire(camera))
        reply = self.recv()
        if reply is None or reply["type"] != "calibration_result":
            raise ProtocolError("calibrate_failed", f"unexpected reply {reply and reply.get('type')!r}")
        return pose_from_wire(reply["pose"])

    def close(self) -> None:
        self.stream.close()


# ---------------------------------------------------------------------------
# Hand-stream files and replay sources


def write_hand_stream(path: str | Path, frames) -> None:
    """Serialize (HandFrame, cloud|None) pairs as consecutive hand_frame frames."""
    with open(path, "wb") as fh:
        for seq, item in enumerate(frames, start=1):
            frame, cloud = item if isinstance(item, tuple) else (item, None)
            fh.write(encode_message(
                {"type": "hand_frame", "seq": seq, "frame": hand_frame_to_wire(frame, cloud)}))


def _scaled(frame: HandFrame, speed: float) -> HandFrame:
    if speed == 1.0:
        return frame
    return HandFrame(timestamp=frame.timestamp / speed, wrist=frame.wrist,
                     headset=frame.headset, fingertips=frame.fingertips)


def _stream_file_frames(path: Path, speed: float) -> Iterator[tuple[HandFrame, ColoredPointCloud | None]]:
    data = path.read_bytes()
    offset = 0
    while offset < len(data):
        try:
            msg, offset = decode_message(data, offset)
        except IncompleteFrame:
            raise IntegrityError(f"{path}: truncated frame at byte offset {offset}")
        except ProtocolError as exc:
            raise IntegrityError(f"{path}: corrupt frame at byte offset {offset}: {exc}") from exc
        if msg["type"] != "hand_frame":
            raise IntegrityError(f"{path}: unexpected {msg['type']!r} message at byte offset {offset}")
        try:
            frame, cloud = hand_frame_from_wire(msg["frame"])
        except ProtocolError as exc:
            raise IntegrityError(f"{path}: invalid hand frame at byte offset {offset}: {exc}") from exc
        yield _scaled(frame, speed), cloud


def session_hand_stream(session: DemoSession, speed: float = 1.0) -> Iterator[tuple[HandFrame, ColoredPointCloud | None]]:
    """Synthesize a tracker stream that retraces a recorded robot trajectory.

    The wrist pose is the recorded end-effector pose; fingertips come from
    fingertip-frame forward kinematics (dex hand) or a pinch distance that
    reproduces the recorded gripper commands through the hysteresis rule.
    """
    config = session.engine_config()
    model = config.model
    wrist_name = model.wrist_frame()
    tip_frames = model.fingertip_frames() if model.embodiment == "dex_hand" else []
    for rec in session.frames:
        base = rec.base_pose()
        wrist_world = base * frame_pose(model, rec.joint_angles, wrist_name)
        tips: dict[str, np.ndarray] = {}
        if tip_frames:
            inv = wrist_world.inverse()
            for tf in tip_frames:
                world = base * frame_pose(model, rec.joint_angles, tf)
                tips[tf.replace("_tip", "")] = inv.transform_point(world.position)
            tips["pinky"] = tips["ring"] + np.array([0.0, 0.02, -0.01])
        else:
            gap = config.open_width + 0.04 if rec.gripper_command == GripperCommand.OPEN else max(
                0.0, config.open_width - 0.06)
            tips["index"] = np.array([0.0, -gap / 2, 0.08])
            tips["thumb"] = np.array([0.0, gap / 2, 0.08])
            tips["middle"] = np.array([0.0, 0.01, 0.09])
            tips["ring"] = np.array([0.0, 0.03, 0.08])
            tips["pinky"] = np.array([0.0, 0.05, 0.07])
        frame = HandFrame(timestamp=rec.timestamp, wrist=wrist_world,
                          headset=rec.headset_pose(), fingertips=tips)
        yield _scaled(frame, speed), rec.cloud


def replay_source(path: str | Path, speed: float = 1.0) -> Iterator[tuple[HandFrame, ColoredPointCloud | None]]:
    """Stream hand frames from a raw stream file or a recorded session directory.

    Timestamps are scaled by 1/speed, so speed 2 halves every delta.
    """
    if speed <= 0:
        raise ContractViolation("speed must be > 0")
    path = Path(path)
    if path.is_dir():
        return session_hand_stream(read_session(path), speed)
    if not path.exists():
        raise IntegrityError(f"{path}: no such file")
    return _stream_file_frames(path, speed)
