"""Scripted headless participants for integration, load, and fault tests.

A bot joins as a participant, walks a scripted trajectory in its local
frame at the session tick rate (the server composes it into the shared
world), and records everything it sees: frames, state transitions, the
group-luminosity trace, and how stale its own echoed pose gets. Scripts
are JSON files in the same style as the state sequences.

Kinematics are deliberately simple: fixed head height, hands slung a
little below and in front, piecewise-linear interpolation between marks.
"""

from __future__ import annotations

import asyncio
import json
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

from .netdiag import FaultProfile, inject
from .protocol import (
    PROTOCOL_VERSION,
    JoinAccept,
    JoinReject,
    JoinRequest,
    Leave,
    MudraState,
    PoseUpdate,
    Role,
    WorldFrame,
    message_to_jsonable,
    quantize_pose,
)
from .spatial import Pose, RigidTransform, Vec3, radial_transform, to_shared
from .states import SchemaError
from .transport import connect_tcp

HEAD_HEIGHT = 1.6
HAND_DROP = 0.55
HAND_SIDE = 0.2
HAND_FORWARD = 0.25


@dataclass(frozen=True)
class MoveTo:
    to: tuple[float, float]  # local floor (x, z)
    over: float


@dataclass(frozen=True)
class SetMudra:
    hand: str  # "left" | "right"
    state: MudraState


@dataclass(frozen=True)
class Bow:
    over: float = 4.0


@dataclass(frozen=True)
class RaiseArms:
    rounds: int = 3
    over: float = 12.0


@dataclass(frozen=True)
class Idle:
    duration: float


@dataclass(frozen=True)
class Mimic:
    duration: float


@dataclass(frozen=True)
class HoldThread:
    duration: float
    hand: str = "right"


Action = Union[MoveTo, SetMudra, Bow, RaiseArms, Idle, Mimic, HoldThread]


@dataclass(frozen=True)
class BotScript:
    name: str
    actions: tuple[Action, ...]


def parse_script(document: bytes) -> BotScript:
    try:
        doc = json.loads(document.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise SchemaError("$", f"not valid UTF-8 JSON: {e}") from e
    if not isinstance(doc, dict) or doc.get("version") != 1:
        raise SchemaError("version", "bot scripts require version 1")
    name = doc.get("name")
    if not isinstance(name, str) or not name:
        raise SchemaError("name", "must be a non-empty string")
    actions: list[Action] = []
    for i, raw in enumerate(doc.get("actions", [])):
        where = f"actions[{i}]"
        if not isinstance(raw, dict) or "type" not in raw:
            raise SchemaError(where, "must be an object with a 'type'")
        kind = raw["type"]
        try:
            if kind == "move_to":
                x, z = raw["to"]
                actions.append(MoveTo((float(x), float(z)), float(raw["over"])))
            elif kind == "set_mudra":
                actions.append(SetMudra(str(raw["hand"]), MudraState(raw["state"])))
            elif kind == "bow":
                actions.append(Bow(float(raw.get("over", 4.0))))
            elif kind == "raise_arms":
                actions.append(RaiseArms(int(raw.get("rounds", 3)), float(raw.get("over", 12.0))))
            elif kind == "idle":
                actions.append(Idle(float(raw["for"])))
            elif kind == "mimic":
                actions.append(Mimic(float(raw["for"])))
            elif kind == "hold_thread":
                actions.append(HoldThread(float(raw["for"]), str(raw.get("hand", "right"))))
            else:
                raise SchemaError(where, f"unknown action type {kind!r}")
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, SchemaError):
                raise
            raise SchemaError(where, f"bad action fields: {e}") from e
    for a in actions:
        dur = getattr(a, "over", getattr(a, "duration", 1.0))
        if isinstance(a, (MoveTo, Bow, RaiseArms, Idle, Mimic, HoldThread)) and dur <= 0:
            raise SchemaError("actions", f"durations must be positive ({a})")
    return BotScript(name, tuple(actions))


@dataclass
class BotReport:
    name: str
    participant_id: str = ""
    node_index: Optional[int] = None
    frames_received: int = 0
    states_observed: list[str] = field(default_factory=list)
    luminosity_trace: list[tuple[int, float]] = field(default_factory=list)
    max_pose_staleness_ms: float = 0.0
    saw_finished: bool = False
    partial: bool = False
    errors: list[str] = field(default_factory=list)
    final_frame_digest: str = ""
    final_state_name: str = ""

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "participant_id": self.participant_id,
            "node_index": self.node_index,
            "frames_received": self.frames_received,
            "states_observed": self.states_observed,
            "max_pose_staleness_ms": round(self.max_pose_staleness_ms, 3),
            "saw_finished": self.saw_finished,
            "partial": self.partial,
            "errors": self.errors,
            "final_state_name": self.final_state_name,
        }


class EnsembleError(RuntimeError):
    def __init__(self, failures: dict[str, str]):
        self.failures = failures
        super().__init__("bots failed: " + ", ".join(f"{k}: {v}" for k, v in failures.items()))


class _Body:
    """The bot's local-frame body state, mutated by the script driver."""

    def __init__(self):
        self.x = 0.0
        self.z = 1.0
        self.head_dy = 0.0
        self.hand_dy = 0.0
        self.mudra = {"left": MudraState.NONE, "right": MudraState.NONE}
        self.hand_override: dict[str, Optional[Vec3]] = {"left": None, "right": None}
        self.head_override_y: Optional[float] = None

    def poses(self) -> tuple[Pose, Pose, Pose]:
        head_y = self.head_override_y if self.head_override_y is not None else HEAD_HEIGHT + self.head_dy
        head = Pose(Vec3(self.x, head_y, self.z))
        hands = {}
        for hand, sign in (("left", -1.0), ("right", 1.0)):
            override = self.hand_override[hand]
            if override is not None:
                hands[hand] = Pose(override)
            else:
                hands[hand] = Pose(
                    Vec3(
                        self.x + sign * HAND_SIDE,
                        HEAD_HEIGHT - HAND_DROP + self.hand_dy,
                        self.z - HAND_FORWARD,
                    )
                )
        return head, hands["left"], hands["right"]


class Bot:
    def __init__(
        self,
        host: str,
        port: int,
        script: BotScript,
        name: str = "",
        fault: Optional[FaultProfile] = None,
        until_finished: bool = False,
        max_seconds: float = 120.0,
    ):
        self.host, self.port = host, port
        self.script = script
        self.name = name or script.name
        self.fault = fault
        self.until_finished = until_finished
        self.max_seconds = max_seconds
        self.report = BotReport(self.name)
        self.body = _Body()
        self.tick_rate = 30.0
        self.transform: RigidTransform = RigidTransform()
        self.latest_frame: Optional[WorldFrame] = None
        self._sent_keys: dict[str, float] = {}  # quantized shared head -> send time
        self._sent_order: list[str] = []
        self._seq = 0
        self._done = asyncio.Event()

    # -- helpers --

    def _shared_head_key(self, local_head: Pose) -> str:
        shared = quantize_pose(to_shared(quantize_pose(local_head), self.transform))
        p = shared.position
        return f"{p.x!r},{p.y!r},{p.z!r}"

    async def _send_pose(self, transport) -> None:
        head, left, right = self.body.poses()
        self._seq += 1
        msg = PoseUpdate(self._seq, head, left, right, self.body.mudra["left"], self.body.mudra["right"])
        key = self._shared_head_key(head)
        now = asyncio.get_running_loop().time()
        if key not in self._sent_keys:
            self._sent_order.append(key)
            if len(self._sent_order) > 4096:
                self._sent_keys.pop(self._sent_order.pop(0), None)
        self._sent_keys[key] = now  # latest send of this content
        await transport.send(msg)

    def _note_frame(self, frame: WorldFrame) -> None:
        self.report.frames_received += 1
        self.latest_frame = frame
        name = frame.state_name
        if name == "finished":
            self.report.saw_finished = True
        elif name and (not self.report.states_observed or self.report.states_observed[-1] != name):
            self.report.states_observed.append(name)
        self.report.luminosity_trace.append((frame.tick, frame.group_luminosity))
        me = next((a for a in frame.avatars if a.id == self.report.participant_id), None)
        if me is not None:
            p = quantize_pose(me.head).position
            key = f"{p.x!r},{p.y!r},{p.z!r}"
            sent_at = self._sent_keys.get(key)
            if sent_at is not None:
                staleness = (asyncio.get_running_loop().time() - sent_at) * 1000.0
                self.report.max_pose_staleness_ms = max(self.report.max_pose_staleness_ms, staleness)
        self.report.final_state_name = name

    # -- script driver --

    async def _drive(self, interval: float) -> None:
        for action in self.script.actions:
            if isinstance(action, MoveTo):
                x0, z0 = self.body.x, self.body.z
                steps = max(1, int(action.over / interval))
                for k in range(1, steps + 1):
                    f = k / steps
                    self.body.x = x0 + (action.to[0] - x0) * f
                    self.body.z = z0 + (action.to[1] - z0) * f
                    await asyncio.sleep(interval)
            elif isinstance(action, SetMudra):
                self.body.mudra[action.hand] = action.state
            elif isinstance(action, Bow):
                steps = max(2, int(action.over / interval))
                for k in range(steps):
                    self.body.head_dy = -0.4 * math.sin(math.pi * k / (steps - 1))
                    await asyncio.sleep(interval)
                self.body.head_dy = 0.0
            elif isinstance(action, RaiseArms):
                steps = max(2, int(action.over / interval))
                for k in range(steps):
                    phase = action.rounds * 2 * math.pi * k / (steps - 1)
                    self.body.hand_dy = 0.35 * (1 - math.cos(phase))  # 0..0.7 m sweep
                    await asyncio.sleep(interval)
                self.body.hand_dy = 0.0
            elif isinstance(action, Idle):
                await asyncio.sleep(action.duration)
            elif isinstance(action, Mimic):
                deadline = asyncio.get_running_loop().time() + action.duration
                while asyncio.get_running_loop().time() < deadline:
                    frame = self.latest_frame
                    if frame is not None:
                        other = next(
                            (a for a in frame.avatars if a.id != self.report.participant_id), None
                        )
                        if other is not None:
                            self.body.head_override_y = other.head.position.y
                            self.body.hand_dy = other.left.position.y - (HEAD_HEIGHT - HAND_DROP)
                    await asyncio.sleep(interval)
                self.body.head_override_y = None
                self.body.hand_dy = 0.0
            elif isinstance(action, HoldThread):
                frame = self.latest_frame
                if frame is not None and frame.sim_positions:
                    head, _, right = self.body.poses()
                    hand_shared = to_shared(right, self.transform).position
                    nearest = min(
                        frame.sim_positions,
                        key=lambda p: (p[0] - hand_shared.x) ** 2 + (p[1] - hand_shared.y) ** 2 + (p[2] - hand_shared.z) ** 2,
                    )
                    # bring the local hand onto the bead, then pinch
                    local = self.transform.inverse().apply(Vec3(*nearest))
                    self.body.hand_override[action.hand] = local
                    await asyncio.sleep(2 * interval)
                    self.body.mudra[action.hand] = MudraState.INDEX
                    await asyncio.sleep(action.duration)
                    self.body.mudra[action.hand] = MudraState.NONE
                    self.body.hand_override[action.hand] = None
                else:
                    await asyncio.sleep(action.duration)

    # -- main --

    async def run(self) -> BotReport:
        try:
            inner = await connect_tcp(self.host, self.port, self.name)
        except OSError as e:
            self.report.errors.append(f"connect failed: {e}")
            return self.report
        pose_channel = inject(inner, self.fault) if self.fault else inner
        try:
            await inner.send(JoinRequest(PROTOCOL_VERSION, Role.PARTICIPANT, self.name))
            reply = await inner.recv()
            if isinstance(reply, JoinReject):
                self.report.errors.append(f"join rejected: {reply.reason}")
                return self.report
            if not isinstance(reply, JoinAccept):
                self.report.errors.append(f"unexpected join reply: {type(reply).__name__}")
                return self.report
            self.report.participant_id = reply.participant_id
            self.report.node_index = reply.node_index
            self.tick_rate = float(reply.session_config.get("tick_rate", 30.0))
            if reply.node_index is not None:
                self.transform = radial_transform(reply.node_index, reply.n_participants)
            interval = 1.0 / self.tick_rate

            async def receiver():
                while True:
                    m = await inner.recv()
                    if m is None:
                        if not self._done.is_set():
                            self.report.partial = True
                            self.report.errors.append("disconnected mid-script")
                        self._done.set()
                        return
                    if isinstance(m, WorldFrame):
                        self._note_frame(m)

            async def sender():
                while not self._done.is_set():
                    await self._send_pose(pose_channel)
                    await asyncio.sleep(interval)

            rx = asyncio.create_task(receiver())
            tx = asyncio.create_task(sender())
            deadline = asyncio.get_running_loop().time() + self.max_seconds
            try:
                await asyncio.wait_for(self._drive(interval), timeout=self.max_seconds)
                while (
                    self.until_finished
                    and not self.report.saw_finished
                    and not self._done.is_set()
                    and asyncio.get_running_loop().time() < deadline
                ):
                    await asyncio.sleep(interval)
            except asyncio.TimeoutError:
                self.report.partial = True
                self.report.errors.append("script timed out")
            self._done.set()
            tx.cancel()
            rx.cancel()
            try:
                await inner.send(Leave())
            except ConnectionError:
                pass
        finally:
            if pose_channel is not inner:
                await pose_channel.close()
            await inner.close()
        return self.report


def run_bot(
    host: str,
    port: int,
    script: BotScript,
    name: str = "",
    fault: Optional[FaultProfile] = None,
    until_finished: bool = False,
    max_seconds: float = 120.0,
) -> BotReport:
    return asyncio.run(Bot(host, port, script, name, fault, until_finished, max_seconds).run())


async def run_ensemble_async(
    host: str,
    port: int,
    scripts: Sequence[BotScript],
    fault: Optional[FaultProfile] = None,
    until_finished: bool = True,
    max_seconds: float = 120.0,
) -> list[BotReport]:
    """Launch one bot per script concurrently against one session."""
    bots = []
    for i, script in enumerate(scripts):
        bot_fault = None
        if fault is not None:
            bot_fault = FaultProfile(
                seed=fault.seed + i, base_delay_ms=fault.base_delay_ms,
                jitter_ms=fault.jitter_ms, drop_p=fault.drop_p, dup_p=fault.dup_p,
            )
        bots.append(Bot(host, port, script, f"{script.name}-{i}", bot_fault, until_finished, max_seconds))
    results = await asyncio.gather(*(b.run() for b in bots), return_exceptions=True)
    failures = {}
    reports = []
    for bot, result in zip(bots, results):
        if isinstance(result, BaseException):
            failures[bot.name] = repr(result)
        else:
            reports.append(result)
    if failures:
        raise EnsembleError(failures)
    return reports


def run_ensemble(
    host: str,
    port: int,
    scripts: Sequence[BotScript],
    fault: Optional[FaultProfile] = None,
    until_finished: bool = True,
    max_seconds: float = 120.0,
) -> list[BotReport]:
    return asyncio.run(run_ensemble_async(host, port, scripts, fault, until_finished, max_seconds))
