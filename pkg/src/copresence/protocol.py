"""Wire protocol between session clients and the server.

Frames are a 4-byte big-endian payload length followed by canonical JSON
(UTF-8, sorted keys, no insignificant whitespace). Positions are
quantized to 0.0001 m and orientation components to 1e-6 at encode time,
which makes encoding deterministic: semantically equal messages produce
identical bytes, and encode-decode-encode is a fixed point.

The transport underneath is a reliable ordered byte stream; resilience to
delay is handled above it with latest-wins pose sequencing (accept_pose).
Note the quantization grid perturbs a unit quaternion's norm by up to
~1e-6, hence the slightly relaxed norm check on the Pose container.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, fields
from typing import Any, Optional, Union

from .spatial import Pose, Quat, Vec3

PROTOCOL_VERSION = 1
DEFAULT_PORT = 38801
MAX_FRAME_BYTES = 1 << 20  # 1 MiB

_POS_GRID = 10_000.0  # 0.0001 m
_ANG_GRID = 1_000_000.0  # 1e-6


class ProtocolError(ValueError):
    """Malformed frame or message."""


class EncodeError(ValueError):
    """Message cannot be framed (e.g., over the size limit)."""


class NeedsMoreData(Exception):
    """The buffer does not yet hold a complete frame; zero bytes consumed."""

    def __init__(self, needed: int = 1):
        self.needed = needed
        super().__init__(f"need at least {needed} more bytes")


class Role(str, enum.Enum):
    PARTICIPANT = "participant"
    FACILITATOR = "facilitator"
    OBSERVER = "observer"


class MudraState(str, enum.Enum):
    NONE = "none"
    INDEX = "index"
    MIDDLE = "middle"


def _qpos(x: float) -> float:
    return round(x * _POS_GRID) / _POS_GRID


def _qang(x: float) -> float:
    return round(x * _ANG_GRID) / _ANG_GRID


def quantize_pose(p: Pose) -> Pose:
    return Pose(
        Vec3(_qpos(p.position.x), _qpos(p.position.y), _qpos(p.position.z)),
        Quat(_qang(p.orientation.w), _qang(p.orientation.x), _qang(p.orientation.y), _qang(p.orientation.z)),
    )


def _pose_to_wire(p: Pose) -> dict:
    q = quantize_pose(p)
    return {
        "position": [q.position.x, q.position.y, q.position.z],
        "orientation": [q.orientation.w, q.orientation.x, q.orientation.y, q.orientation.z],
    }


def _pose_from_wire(obj: Any, where: str) -> Pose:
    if not isinstance(obj, dict):
        raise ProtocolError(f"{where}: pose must be an object")
    try:
        px, py, pz = (float(v) for v in obj["position"])
        w, x, y, z = (float(v) for v in obj["orientation"])
    except (KeyError, TypeError, ValueError) as e:
        raise ProtocolError(f"{where}: bad pose fields: {e}") from e
    try:
        return Pose(Vec3(px, py, pz), Quat(w, x, y, z))
    except ValueError as e:
        raise ProtocolError(f"{where}: {e}") from e


# --- message types -----------------------------------------------------------


@dataclass(frozen=True)
class JoinRequest:
    version: int
    role: Role
    node_label: str = ""


@dataclass(frozen=True)
class JoinAccept:
    participant_id: str
    session_config: dict
    node_index: Optional[int]  # None for facilitator/observer (no floor slot)
    n_participants: int
    snapshot: dict = field(default_factory=dict)  # late joiners get current state


@dataclass(frozen=True)
class JoinReject:
    reason: str


@dataclass(frozen=True)
class PoseUpdate:
    seq: int
    head: Pose
    left: Pose
    right: Pose
    mudra_left: MudraState = MudraState.NONE
    mudra_right: MudraState = MudraState.NONE


@dataclass(frozen=True)
class Ping:
    nonce: int


@dataclass(frozen=True)
class Pong:
    nonce: int


COMMAND_ACTIONS = ("hold", "resume", "skip", "set_override", "clear_override", "set_scale", "spectate")


@dataclass(frozen=True)
class FacilitatorCommand:
    action: str
    key: Optional[str] = None  # for set_override / clear_override
    value: Union[float, int, str, bool, None] = None

    def __post_init__(self) -> None:
        if self.action not in COMMAND_ACTIONS:
            raise ProtocolError(f"unknown facilitator action {self.action!r}")


@dataclass(frozen=True)
class AvatarState:
    id: str
    head: Pose
    left: Pose
    right: Pose
    luminosity: float


@dataclass(frozen=True)
class WorldFrame:
    tick: int
    state_name: str
    avatars: tuple[AvatarState, ...]
    sim_positions: tuple[tuple[float, float, float], ...]
    group_luminosity: float
    scale: float


@dataclass(frozen=True)
class Leave:
    pass


@dataclass(frozen=True)
class Error:
    code: str
    detail: str = ""


Message = Union[
    JoinRequest, JoinAccept, JoinReject, PoseUpdate, Ping, Pong,
    FacilitatorCommand, WorldFrame, Leave, Error,
]

_TAGS: dict[str, type] = {
    "join_request": JoinRequest,
    "join_accept": JoinAccept,
    "join_reject": JoinReject,
    "pose_update": PoseUpdate,
    "ping": Ping,
    "pong": Pong,
    "facilitator_command": FacilitatorCommand,
    "world_frame": WorldFrame,
    "leave": Leave,
    "error": Error,
}
_TAG_OF = {cls: tag for tag, cls in _TAGS.items()}


def _to_wire(m: Message) -> dict:
    if isinstance(m, JoinRequest):
        return {"version": m.version, "role": m.role.value, "node_label": m.node_label}
    if isinstance(m, JoinAccept):
        return {
            "participant_id": m.participant_id,
            "session_config": m.session_config,
            "node_index": m.node_index,
            "n_participants": m.n_participants,
            "snapshot": m.snapshot,
        }
    if isinstance(m, JoinReject):
        return {"reason": m.reason}
    if isinstance(m, PoseUpdate):
        return {
            "seq": m.seq,
            "head": _pose_to_wire(m.head),
            "left": _pose_to_wire(m.left),
            "right": _pose_to_wire(m.right),
            "mudra_left": m.mudra_left.value,
            "mudra_right": m.mudra_right.value,
        }
    if isinstance(m, (Ping, Pong)):
        return {"nonce": m.nonce}
    if isinstance(m, FacilitatorCommand):
        return {"action": m.action, "key": m.key, "value": m.value}
    if isinstance(m, WorldFrame):
        return {
            "tick": m.tick,
            "state_name": m.state_name,
            "avatars": [
                {
                    "id": a.id,
                    "head": _pose_to_wire(a.head),
                    "left": _pose_to_wire(a.left),
                    "right": _pose_to_wire(a.right),
                    "luminosity": a.luminosity,
                }
                for a in m.avatars
            ],
            "sim_positions": [[_qpos(x), _qpos(y), _qpos(z)] for (x, y, z) in m.sim_positions],
            "group_luminosity": m.group_luminosity,
            "scale": m.scale,
        }
    if isinstance(m, Leave):
        return {}
    if isinstance(m, Error):
        return {"code": m.code, "detail": m.detail}
    raise EncodeError(f"not a protocol message: {m!r}")


def _require(obj: dict, key: str, where: str) -> Any:
    if key not in obj:
        raise ProtocolError(f"{where}: missing field {key!r}")
    return obj[key]


def _from_wire(tag: str, obj: dict) -> Message:
    if tag == "join_request":
        version = _require(obj, "version", tag)
        if not isinstance(version, int):
            raise ProtocolError("join_request: version must be an integer")
        role_raw = _require(obj, "role", tag)
        try:
            role = Role(role_raw)
        except ValueError:
            raise ProtocolError(f"join_request: unknown role {role_raw!r}") from None
        return JoinRequest(version, role, str(obj.get("node_label", "")))
    if tag == "join_accept":
        node_index = obj.get("node_index")
        if node_index is not None and not isinstance(node_index, int):
            raise ProtocolError("join_accept: node_index must be an integer or null")
        return JoinAccept(
            str(_require(obj, "participant_id", tag)),
            dict(_require(obj, "session_config", tag)),
            node_index,
            int(_require(obj, "n_participants", tag)),
            dict(obj.get("snapshot", {})),
        )
    if tag == "join_reject":
        return JoinReject(str(_require(obj, "reason", tag)))
    if tag == "pose_update":
        seq = _require(obj, "seq", tag)
        if not isinstance(seq, int) or seq < 0:
            raise ProtocolError("pose_update: seq must be a non-negative integer")
        try:
            ml = MudraState(obj.get("mudra_left", "none"))
            mr = MudraState(obj.get("mudra_right", "none"))
        except ValueError as e:
            raise ProtocolError(f"pose_update: bad mudra value: {e}") from None
        return PoseUpdate(
            seq,
            _pose_from_wire(_require(obj, "head", tag), "pose_update.head"),
            _pose_from_wire(_require(obj, "left", tag), "pose_update.left"),
            _pose_from_wire(_require(obj, "right", tag), "pose_update.right"),
            ml,
            mr,
        )
    if tag == "ping":
        return Ping(int(_require(obj, "nonce", tag)))
    if tag == "pong":
        return Pong(int(_require(obj, "nonce", tag)))
    if tag == "facilitator_command":
        action = _require(obj, "action", tag)
        if action not in COMMAND_ACTIONS:
            raise ProtocolError(f"facilitator_command: unknown action {action!r}")
        key = obj.get("key")
        if key is not None and not isinstance(key, str):
            raise ProtocolError("facilitator_command: key must be a string or null")
        value = obj.get("value")
        if value is not None and not isinstance(value, (int, float, str, bool)):
            raise ProtocolError("facilitator_command: unsupported value type")
        return FacilitatorCommand(action, key, value)
    if tag == "world_frame":
        avatars = []
        raw_avatars = _require(obj, "avatars", tag)
        if not isinstance(raw_avatars, list):
            raise ProtocolError("world_frame: avatars must be a list")
        for i, a in enumerate(raw_avatars):
            if not isinstance(a, dict):
                raise ProtocolError(f"world_frame.avatars[{i}]: must be an object")
            avatars.append(
                AvatarState(
                    str(_require(a, "id", f"world_frame.avatars[{i}]")),
                    _pose_from_wire(_require(a, "head", "avatar"), f"world_frame.avatars[{i}].head"),
                    _pose_from_wire(_require(a, "left", "avatar"), f"world_frame.avatars[{i}].left"),
                    _pose_from_wire(_require(a, "right", "avatar"), f"world_frame.avatars[{i}].right"),
                    float(_require(a, "luminosity", f"world_frame.avatars[{i}]")),
                )
            )
        raw_sim = _require(obj, "sim_positions", tag)
        if not isinstance(raw_sim, list):
            raise ProtocolError("world_frame: sim_positions must be a list")
        sim_positions = []
        for i, p in enumerate(raw_sim):
            if not isinstance(p, list) or len(p) != 3:
                raise ProtocolError(f"world_frame.sim_positions[{i}]: must be [x, y, z]")
            sim_positions.append((float(p[0]), float(p[1]), float(p[2])))
        tick = _require(obj, "tick", tag)
        if not isinstance(tick, int):
            raise ProtocolError("world_frame: tick must be an integer")
        scale = float(_require(obj, "scale", tag))
        if scale <= 0 or not math.isfinite(scale):
            raise ProtocolError("world_frame: scale must be positive and finite")
        return WorldFrame(
            tick,
            str(_require(obj, "state_name", tag)),
            tuple(avatars),
            tuple(sim_positions),
            float(_require(obj, "group_luminosity", tag)),
            scale,
        )
    if tag == "leave":
        return Leave()
    if tag == "error":
        return Error(str(_require(obj, "code", tag)), str(obj.get("detail", "")))
    raise ProtocolError(f"unknown message tag {tag!r}")


def encode(m: Message) -> bytes:
    """Frame a message: deterministic canonical JSON behind a length prefix."""
    try:
        body = _to_wire(m)
        body["type"] = _TAG_OF.get(type(m)) or _fail_unknown(m)
        payload = json.dumps(body, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False).encode("utf-8")
    except EncodeError:
        raise
    except (ValueError, OverflowError, TypeError) as e:
        raise EncodeError(f"cannot encode message: {e}") from e
    if len(payload) > MAX_FRAME_BYTES:
        raise EncodeError(f"payload of {len(payload)} bytes exceeds the {MAX_FRAME_BYTES} byte frame limit")
    return len(payload).to_bytes(4, "big") + payload


def _fail_unknown(m: object):
    raise EncodeError(f"not a protocol message: {type(m).__name__}")


def decode(buffer: bytes) -> tuple[Message, bytes]:
    """Parse one frame from the buffer; returns (message, remainder).

    Raises NeedsMoreData without consuming anything if the frame is
    incomplete, ProtocolError for anything malformed.
    """
    if len(buffer) < 4:
        raise NeedsMoreData(4 - len(buffer))
    length = int.from_bytes(buffer[:4], "big")
    if length > MAX_FRAME_BYTES:
        raise ProtocolError(f"frame length {length} exceeds the {MAX_FRAME_BYTES} byte limit")
    if len(buffer) < 4 + length:
        raise NeedsMoreData(4 + length - len(buffer))
    payload = buffer[4 : 4 + length]
    remainder = buffer[4 + length :]
    try:
        obj = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ProtocolError(f"payload is not valid UTF-8 JSON: {e}") from e
    if not isinstance(obj, dict):
        raise ProtocolError("payload must be a JSON object")
    tag = obj.pop("type", None)
    if not isinstance(tag, str):
        raise ProtocolError("payload missing string 'type' tag")
    return _from_wire(tag, obj), remainder


def message_to_jsonable(m: Message) -> dict:
    """Tagged JSON-native form of a message (what encode() serializes)."""
    body = _to_wire(m)
    body["type"] = _TAG_OF[type(m)]
    return body


def message_from_jsonable(obj: dict) -> Message:
    obj = dict(obj)
    tag = obj.pop("type", None)
    if not isinstance(tag, str):
        raise ProtocolError("object missing string 'type' tag")
    return _from_wire(tag, obj)


class FrameAssembler:
    """Incremental decoder for a byte stream: feed chunks, iterate messages."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, chunk: bytes) -> list[Message]:
        self._buf.extend(chunk)
        out: list[Message] = []
        while True:
            try:
                msg, rest = decode(bytes(self._buf))
            except NeedsMoreData:
                return out
            self._buf = bytearray(rest)
            out.append(msg)


def accept_pose(last_seq: int, incoming: PoseUpdate) -> bool:
    """Latest-wins: keep only strictly newer pose updates."""
    return incoming.seq > last_seq
