"""Authoritative session orchestration.

One Session owns all mutable state: the roster, the shared ring-polymer
sim, the scripted state machines, and the tick counter. All inputs funnel
through a single ordered queue, the tick loop advances everything at a
fixed logical rate (1/tick_rate per tick regardless of wall clock), and
every state-affecting input is written to a JSON-lines event log. Because
the sim thermostat, the scripts, and the composition are all deterministic
functions of (config, logged inputs), replaying a log reproduces the
frame-digest trajectory bit for bit - replay_log() checks exactly that.

The network layer (SessionServer) fans broadcast frames out without
blocking the tick; a client that cannot drain its bounded buffer is
disconnected with an error.
"""

from __future__ import annotations

import asyncio
import hashlib
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from . import simdyn, states
from .protocol import (
    DEFAULT_PORT,
    PROTOCOL_VERSION,
    AvatarState,
    Error,
    FacilitatorCommand,
    JoinAccept,
    JoinReject,
    JoinRequest,
    Leave,
    Message,
    MudraState,
    Ping,
    Pong,
    PoseUpdate,
    Role,
    WorldFrame,
    accept_pose,
    encode,
    message_from_jsonable,
    message_to_jsonable,
)
from .spatial import (
    BODY_CENTER_OFFSET_Y,
    BodyKernel,
    PlaySpace,
    Pose,
    RigidTransform,
    Vec3,
    avatar_luminosities,
    body_center,
    group_luminosity,
    radial_transform,
    to_shared,
)

CLIENT_BUFFER_FRAMES = 256


@dataclass(frozen=True)
class SessionConfig:
    max_participants: int = 5
    tick_rate: float = 30.0
    play_space: PlaySpace = PlaySpace()
    kernel: BodyKernel = BodyKernel()
    topology: simdyn.RingTopology = simdyn.RingTopology()
    integrator: simdyn.IntegratorParams = simdyn.IntegratorParams()
    sequences: tuple[states.StateSequence, ...] = ()
    grab_radius: float = 0.35
    body_offset_y: float = BODY_CENTER_OFFSET_Y
    auto_start: bool = False  # True: scripts run from tick 0 without a facilitator
    port: int = DEFAULT_PORT
    console_port: Optional[int] = None

    def __post_init__(self) -> None:
        if not (1 <= self.max_participants <= 5):
            raise ValueError(f"max_participants must be 1..5, got {self.max_participants}")
        if self.tick_rate <= 0:
            raise ValueError("tick_rate must be positive")
        if self.grab_radius <= 0:
            raise ValueError("grab_radius must be positive")

    def to_jsonable(self) -> dict:
        return {
            "max_participants": self.max_participants,
            "tick_rate": self.tick_rate,
            "play_space": {"width": self.play_space.width, "depth": self.play_space.depth},
            "kernel": {
                "sigma": self.kernel.sigma,
                "base_luminosity": self.kernel.base_luminosity,
                "pair_gain": self.kernel.pair_gain,
            },
            "topology": {
                "n_beads": self.topology.n_beads,
                "rest_length": self.topology.rest_length,
                "bond_stiffness": self.topology.bond_stiffness,
                "angle_stiffness": self.topology.angle_stiffness,
                "rest_angle": self.topology.rest_angle,
                "bead_mass": self.topology.bead_mass,
            },
            "integrator": {
                "dt": self.integrator.dt,
                "friction": self.integrator.friction,
                "kT": self.integrator.kT,
                "rng_seed": self.integrator.rng_seed,
            },
            "sequences": [json.loads(states.serialize_sequence(s)) for s in self.sequences],
            "grab_radius": self.grab_radius,
            "body_offset_y": self.body_offset_y,
            "auto_start": self.auto_start,
        }

    @staticmethod
    def from_jsonable(obj: dict) -> "SessionConfig":
        seqs = tuple(
            states.parse_sequence(json.dumps(s).encode()) for s in obj.get("sequences", [])
        )
        return SessionConfig(
            max_participants=int(obj.get("max_participants", 5)),
            tick_rate=float(obj.get("tick_rate", 30.0)),
            play_space=PlaySpace(**obj.get("play_space", {})),
            kernel=BodyKernel(**obj.get("kernel", {})),
            topology=simdyn.RingTopology(**obj.get("topology", {})),
            integrator=simdyn.IntegratorParams(**obj.get("integrator", {})),
            sequences=seqs,
            grab_radius=float(obj.get("grab_radius", 0.35)),
            body_offset_y=float(obj.get("body_offset_y", BODY_CENTER_OFFSET_Y)),
            auto_start=bool(obj.get("auto_start", False)),
        )


class EventLog:
    """JSON-lines sink. First write error is surfaced once, then logging stops."""

    def __init__(self, path: Optional[str] = None, stream: Optional[io.TextIOBase] = None):
        self._own = False
        if stream is not None:
            self._fh = stream
        elif path is not None:
            parent = Path(path).parent
            if not parent.exists():
                raise FileNotFoundError(f"log directory does not exist: {parent}")
            self._fh = open(path, "w", encoding="utf-8")
            self._own = True
        else:
            self._fh = None
        self._failed = False
        self.lines_written = 0

    def write(self, event: dict) -> None:
        if self._fh is None or self._failed:
            return
        try:
            self._fh.write(json.dumps(event, sort_keys=True, separators=(",", ":")) + "\n")
            self.lines_written += 1
        except OSError as e:
            self._failed = True
            print(f"event log failed, logging disabled: {e}")

    def close(self) -> None:
        if self._fh is not None and not self._failed:
            try:
                self._fh.flush()
                if self._own:
                    self._fh.close()
            except OSError:
                pass


@dataclass
class RosterEntry:
    id: str
    role: Role
    node_index: Optional[int]
    transform: RigidTransform
    spectating: bool = False
    last_seq: int = -1
    head: Optional[Pose] = None
    left: Optional[Pose] = None
    right: Optional[Pose] = None
    mudra_left: MudraState = MudraState.NONE
    mudra_right: MudraState = MudraState.NONE
    grabs: dict = field(default_factory=dict)  # hand -> bead index
    last_pose_tick: int = -1


class _SequenceRunner:
    """Chains the configured sequences into one timeline."""

    def __init__(self, sequences: Sequence[states.StateSequence], auto_start: bool):
        self.machines = [states.StateMachine(s) for s in sequences]
        self.seq_idx = 0
        self.started = auto_start and bool(self.machines)
        self.pending_start_events: list[tuple[str, states.StateEntered]] = []
        if self.started:
            _, evs = self.machines[0].start()
            self.pending_start_events = [(self.phase, e) for e in evs]

    @property
    def finished(self) -> bool:
        if not self.machines:
            return True
        return self.seq_idx == len(self.machines) - 1 and self.machines[-1].mode == "finished"

    @property
    def current(self) -> Optional[states.StateMachine]:
        if not self.machines or self.seq_idx >= len(self.machines):
            return None
        return self.machines[self.seq_idx]

    @property
    def phase(self) -> str:
        m = self.current
        return m.sequence.phase if m is not None else ""

    @property
    def state_name(self) -> str:
        if not self.started:
            return ""
        m = self.current
        if m is None or m.mode == "finished":
            return "finished"
        return m.current.name

    def start(self) -> list[tuple[str, states.StateEntered]]:
        if self.started or not self.machines:
            self.started = self.started or not self.machines
            return []
        self.started = True
        _, evs = self.machines[0].start()
        return [(self.phase, e) for e in evs]

    def tick(self, dt: float) -> list[tuple[str, states.MachineEvent]]:
        out: list[tuple[str, states.MachineEvent]] = self.pending_start_events
        self.pending_start_events = []
        if not self.started:
            return out
        m = self.current
        if m is None:
            return out
        m, events = states.tick_machine(m, dt)
        self.machines[self.seq_idx] = m
        for e in events:
            if isinstance(e, states.SequenceFinished):
                out.append((self.phase, e))
                if self.seq_idx + 1 < len(self.machines):
                    self.seq_idx += 1
                    _, evs = self.machines[self.seq_idx].start()
                    out.extend((self.phase, ev) for ev in evs)
            else:
                out.append((self.phase, e))
        return out

    def command(self, c: states.Command) -> list[tuple[str, states.MachineEvent]]:
        """Apply a machine command; returns entry events caused by skips/starts."""
        if not self.machines:
            raise states.StateError("no sequences configured")
        if not self.started:
            if isinstance(c, states.Resume):
                return self.start()
            if isinstance(c, (states.SetOverride, states.ClearOverride)):
                self.machines = [states.command(m, c) for m in self.machines]
                return []
            raise states.StateError("sequence not started (send resume to begin)")
        m = self.current
        if m is None:
            raise states.StateError("all sequences finished")
        if isinstance(c, (states.SetOverride, states.ClearOverride)):
            # overrides persist across sequence boundaries: apply to the rest
            self.machines = self.machines[: self.seq_idx] + [
                states.command(mm, c) for mm in self.machines[self.seq_idx :]
            ]
            return []
        before_idx, before_seq = m.index, self.seq_idx
        m2 = states.command(m, c)
        self.machines[self.seq_idx] = m2
        events: list[tuple[str, states.MachineEvent]] = []
        if isinstance(c, states.Skip):
            if m2.mode == "finished":
                events.append((self.phase, states.SequenceFinished()))
                if self.seq_idx + 1 < len(self.machines):
                    self.seq_idx += 1
                    _, evs = self.machines[self.seq_idx].start()
                    events.extend((self.phase, ev) for ev in evs)
            elif m2.index != before_idx:
                events.append((self.phase, states.StateEntered(m2.index, m2.current.name)))
        return events

    def effective_params(self) -> dict:
        m = self.current
        if not self.started or m is None or m.mode == "finished":
            base = {k: spec.default for k, spec in states.DEFAULT_REGISTRY.items()}
            if m is not None:
                base.update(m.overrides)
            elif self.machines:
                base.update(self.machines[-1].overrides)
            return base
        return states.effective_params(m)

    @property
    def overrides(self) -> dict:
        m = self.current if self.current is not None else (self.machines[-1] if self.machines else None)
        return dict(m.overrides) if m is not None else {}


class Session:
    """The authoritative state. Single logical owner; no internal locking."""

    def __init__(self, config: SessionConfig, log: Optional[EventLog] = None):
        self.config = config
        self.log = log or EventLog()
        self.roster: dict[str, RosterEntry] = {}
        self.sim = simdyn.build_ring(config.topology)
        self._sim_snapshot = self.sim
        self.runner = _SequenceRunner(config.sequences, config.auto_start)
        self.tick_count = 0
        self._role_counters: dict[str, int] = {}
        self.last_frame: Optional[WorldFrame] = None
        # virtual facilitator identity for console-originated commands; never
        # in the roster, so it has no avatar and cannot spectate-toggle itself
        self._console_entry = RosterEntry("console", Role.FACILITATOR, None, RigidTransform())
        self.write_event({"type": "session-start", "config": config.to_jsonable()})

    # -- events --

    def write_event(self, event: dict) -> None:
        event.setdefault("ts", time.time())
        event.setdefault("tick", self.tick_count)
        self.log.write(event)

    # -- joins --

    def _next_id(self, role: Role) -> str:
        n = self._role_counters.get(role.value, 0) + 1
        self._role_counters[role.value] = n
        return f"{role.value}-{n}"

    def handle_join(self, req: JoinRequest, forced_id: Optional[str] = None) -> tuple[Optional[str], Message]:
        """Returns (participant_id or None, JoinAccept | JoinReject)."""
        if req.version != PROTOCOL_VERSION:
            return None, JoinReject(
                f"protocol version {req.version} unsupported; server speaks {PROTOCOL_VERSION}"
            )
        if req.role == Role.PARTICIPANT:
            used = {e.node_index for e in self.roster.values() if e.node_index is not None}
            free = [i for i in range(self.config.max_participants) if i not in used]
            if not free:
                return None, JoinReject("session full")
            node_index = free[0]
            transform = radial_transform(node_index, self.config.max_participants)
            spectating = False
        elif req.role == Role.FACILITATOR:
            if any(e.role == Role.FACILITATOR for e in self.roster.values()):
                return None, JoinReject("facilitator already connected")
            node_index, transform, spectating = None, RigidTransform(), False
        else:  # observer: unbounded, always invisible
            node_index, transform, spectating = None, RigidTransform(), True

        pid = forced_id or self._next_id(req.role)
        self.roster[pid] = RosterEntry(pid, req.role, node_index, transform, spectating)
        self.write_event(
            {"type": "joined", "id": pid, "role": req.role.value, "node_index": node_index,
             "label": req.node_label}
        )
        accept = JoinAccept(
            participant_id=pid,
            session_config={
                "tick_rate": self.config.tick_rate,
                "max_participants": self.config.max_participants,
                "play_space": {"width": self.config.play_space.width, "depth": self.config.play_space.depth},
                "n_beads": self.config.topology.n_beads,
                "grab_radius": self.config.grab_radius,
                "kernel_sigma": self.config.kernel.sigma,
                "protocol_version": PROTOCOL_VERSION,
            },
            node_index=node_index,
            n_participants=self.config.max_participants,
            snapshot={
                "tick": self.tick_count,
                "state_name": self.runner.state_name,
                "scale": self.sim.scale,
            },
        )
        return pid, accept

    def remove(self, pid: str) -> None:
        if pid in self.roster:
            del self.roster[pid]
            self.write_event({"type": "left", "id": pid})

    # -- input --

    def ingest(self, sender: str, m: Message) -> list[tuple[str, Message]]:
        """Apply one client message; returns (recipient, reply) pairs."""
        entry = self.roster.get(sender)
        if entry is None:
            return [(sender, Error("protocol", "not joined"))]
        if isinstance(m, PoseUpdate):
            self._ingest_pose(entry, m)
            return []
        if isinstance(m, FacilitatorCommand):
            return self._ingest_command(entry, m)
        if isinstance(m, Ping):
            return [(sender, Pong(m.nonce))]
        if isinstance(m, Leave):
            self.remove(sender)
            return []
        return [(sender, Error("protocol", f"unexpected {type(m).__name__}"))]

    def ingest_console(self, m: FacilitatorCommand) -> list[Error]:
        """A command arriving over the console endpoint (token-authorized)."""
        replies = self._ingest_command(self._console_entry, m)
        return [reply for _target, reply in replies if isinstance(reply, Error)]

    def _ingest_pose(self, entry: RosterEntry, m: PoseUpdate) -> None:
        if not accept_pose(entry.last_seq, m):
            return  # stale or duplicate: latest wins
        entry.last_seq = m.seq
        head = to_shared(m.head, entry.transform)
        left = to_shared(m.left, entry.transform)
        right = to_shared(m.right, entry.transform)
        self.write_event({"type": "pose", "id": entry.id, "message": message_to_jsonable(m)})
        for hand, pose, new_mudra, old_mudra in (
            ("left", left, m.mudra_left, entry.mudra_left),
            ("right", right, m.mudra_right, entry.mudra_right),
        ):
            if old_mudra == MudraState.NONE and new_mudra != MudraState.NONE:
                bead = simdyn.pick_bead(self.sim, pose.position, self.config.grab_radius)
                if bead is not None:
                    entry.grabs[hand] = bead
            elif new_mudra == MudraState.NONE:
                entry.grabs.pop(hand, None)
        entry.head, entry.left, entry.right = head, left, right
        entry.mudra_left, entry.mudra_right = m.mudra_left, m.mudra_right
        entry.last_pose_tick = self.tick_count

    def _ingest_command(self, entry: RosterEntry, m: FacilitatorCommand) -> list[tuple[str, Message]]:
        if entry.role != Role.FACILITATOR:
            self.write_event({"type": "permission-denied", "id": entry.id, "action": m.action})
            return [(entry.id, Error("permission", "facilitator commands require the facilitator role"))]
        try:
            if m.action == "set_scale":
                if not isinstance(m.value, (int, float)) or isinstance(m.value, bool):
                    raise ValueError("set_scale needs a numeric value")
                self.sim = simdyn.set_scale(self.sim, float(m.value))
            elif m.action == "spectate":
                entry.spectating = bool(m.value)
            else:
                cmd: states.Command
                if m.action == "hold":
                    cmd = states.Hold()
                elif m.action == "resume":
                    cmd = states.Resume()
                elif m.action == "skip":
                    cmd = states.Skip()
                elif m.action == "set_override":
                    if m.key is None:
                        raise ValueError("set_override needs a key")
                    cmd = states.SetOverride(m.key, m.value)
                elif m.action == "clear_override":
                    if m.key is None:
                        raise ValueError("clear_override needs a key")
                    cmd = states.ClearOverride(m.key)
                else:
                    raise ValueError(f"unhandled action {m.action}")
                for phase, ev in self.runner.command(cmd):
                    self._write_machine_event(phase, ev)
        except (states.StateError, ValueError) as e:
            self.write_event({"type": "command-rejected", "id": entry.id, "action": m.action, "reason": str(e)})
            return [(entry.id, Error("state", str(e)))]
        self.write_event({"type": "command-applied", "id": entry.id, "message": message_to_jsonable(m)})
        return []

    def _write_machine_event(self, phase: str, ev: states.MachineEvent) -> None:
        if isinstance(ev, states.StateEntered):
            self.write_event({"type": "state-entered", "phase": phase, "index": ev.index, "name": ev.name})
        else:
            self.write_event({"type": "sequence-finished", "phase": phase})

    # -- tick --

    def _visible_entries(self) -> list[RosterEntry]:
        return [
            e for e in self.roster.values()
            if not e.spectating and e.head is not None and e.role != Role.OBSERVER
        ]

    def _interactions(self, params: dict) -> list[simdyn.InteractionForce]:
        stiffness = float(params.get("thread.interaction_stiffness", 50.0))
        max_force = float(params.get("thread.interaction_max_force", 20.0))
        out = []
        for e in self.roster.values():
            if e.spectating or e.head is None:
                continue
            for hand, pose in (("left", e.left), ("right", e.right)):
                bead = e.grabs.get(hand)
                if bead is not None and pose is not None and stiffness > 0:
                    out.append(
                        simdyn.InteractionForce(f"{e.id}/{hand}", bead, pose.position, stiffness, max_force)
                    )
        return out

    def tick(self) -> WorldFrame:
        dt = 1.0 / self.config.tick_rate
        params = self.runner.effective_params()

        interactions = self._interactions(params)
        n_sub = max(1, round(dt / self.config.integrator.dt))
        sim = self.sim
        try:
            for _ in range(n_sub):
                sim = simdyn.step(sim, self.config.topology, interactions, self.config.integrator)
            self._sim_snapshot = sim
        except simdyn.IntegrationBlowupError as e:
            self.write_event({"type": "sim-reset", "reason": str(e)})
            sim = self._sim_snapshot  # last good state, velocities intact
        self.sim = sim

        for phase, ev in self.runner.tick(dt):
            self._write_machine_event(phase, ev)

        visible = self._visible_entries()
        centers = [body_center(e.head, self.config.body_offset_y) for e in visible]
        lums = avatar_luminosities(centers, self.config.kernel)
        group_lum = group_luminosity(centers, self.config.kernel)

        avatars = tuple(
            AvatarState(e.id, e.head, e.left, e.right, lum)
            for e, lum in zip(visible, lums)
        )
        world_positions = tuple(
            (float(p[0]) * self.sim.scale, float(p[1]) * self.sim.scale, float(p[2]) * self.sim.scale)
            for p in self.sim.positions
        )
        frame = WorldFrame(
            tick=self.tick_count,
            state_name=self.runner.state_name,
            avatars=avatars,
            sim_positions=world_positions,
            group_luminosity=group_lum,
            scale=self.sim.scale,
        )
        digest = hashlib.sha256(encode(frame)).hexdigest()[:16]
        self.write_event({"type": "frame", "digest": digest})
        self.tick_count += 1
        self.last_frame = frame
        return frame

    def close(self) -> None:
        self.write_event({"type": "session-end"})
        self.log.close()

    # -- console view --

    def view(self) -> dict:
        m = self.runner.current
        current = None
        if self.runner.started and m is not None and m.mode != "finished":
            current = {
                "phase": m.sequence.phase,
                "name": m.current.name,
                "index": m.index,
                "elapsed": m.elapsed,
                "duration": m.current.duration,
                "mode": m.mode,
                "sequence_index": self.runner.seq_idx,
            }
        sequences = [
            {"phase": s.phase, "states": [st.name for st in s.states]} for s in self.config.sequences
        ]
        visible = self._visible_entries()
        centers = [body_center(e.head, self.config.body_offset_y) for e in visible]
        roster = []
        for e in self.roster.values():
            age_ticks = self.tick_count - e.last_pose_tick if e.last_pose_tick >= 0 else None
            age_ms = None if age_ticks is None else age_ticks * 1000.0 / self.config.tick_rate
            if e.role == Role.OBSERVER:
                net = "n/a"
            elif age_ms is None:
                net = "no-pose"
            elif age_ms < 200:
                net = "good"
            elif age_ms < 1000:
                net = "degraded"
            else:
                net = "unusable"
            roster.append(
                {
                    "id": e.id,
                    "role": e.role.value,
                    "node_index": e.node_index,
                    "spectating": e.spectating,
                    "last_pose_age_ms": age_ms,
                    "net_verdict": net,
                }
            )
        return {
            "tick": self.tick_count,
            "state": current,
            "state_name": self.runner.state_name,
            "started": self.runner.started,
            "sequences": sequences,
            "overrides": self.runner.overrides,
            "scale": self.sim.scale,
            "group_luminosity": group_luminosity(centers, self.config.kernel),
            "roster": roster,
            "registry": {
                key: (
                    {"kind": spec.kind, "default": spec.default, "lo": spec.lo, "hi": spec.hi}
                    if spec.kind == "scalar"
                    else {"kind": spec.kind, "default": spec.default, "choices": list(spec.choices)}
                )
                for key, spec in states.DEFAULT_REGISTRY.items()
            },
        }


# --- log replay ------------------------------------------------------------------


@dataclass(frozen=True)
class ReplayResult:
    ticks: int
    frames_checked: int
    mismatches: tuple[int, ...]  # ticks whose digest diverged

    @property
    def ok(self) -> bool:
        return not self.mismatches


def replay_log(lines: Iterable[str]) -> ReplayResult:
    """Re-run a session log and verify every frame digest matches."""
    session: Optional[Session] = None
    frames = 0
    mismatches: list[int] = []
    for line in lines:
        line = line.strip()
        if not line:
            continue
        event = json.loads(line)
        etype = event.get("type")
        if etype == "session-start":
            session = Session(SessionConfig.from_jsonable(event["config"]), EventLog())
        elif session is None:
            raise ValueError("log does not begin with session-start")
        elif etype == "joined":
            req = JoinRequest(PROTOCOL_VERSION, Role(event["role"]), event.get("label", ""))
            pid, reply = session.handle_join(req, forced_id=event["id"])
            if pid != event["id"]:
                raise ValueError(f"replay join mismatch: {pid} != {event['id']}")
        elif etype == "left":
            session.remove(event["id"])
        elif etype == "pose":
            msg = message_from_jsonable(event["message"])
            session.ingest(event["id"], msg)
        elif etype == "command-applied":
            msg = message_from_jsonable(event["message"])
            if event["id"] == "console":
                session.ingest_console(msg)
            else:
                session.ingest(event["id"], msg)
        elif etype == "frame":
            frame = session.tick()
            digest = hashlib.sha256(encode(frame)).hexdigest()[:16]
            if digest != event["digest"]:
                mismatches.append(frame.tick)
            frames += 1
        # state-entered / command-rejected / permission-denied / sim-reset /
        # session-end are derived events: the replay regenerates them itself
    ticks = session.tick_count if session is not None else 0
    return ReplayResult(ticks, frames, tuple(mismatches))


# --- network server ----------------------------------------------------------------


class _Connection:
    def __init__(self, transport, conn_id: int):
        self.transport = transport
        self.conn_id = conn_id
        self.participant_id: Optional[str] = None
        self.outbox: asyncio.Queue = asyncio.Queue(maxsize=CLIENT_BUFFER_FRAMES)
        self.writer_task: Optional[asyncio.Task] = None
        self.reader_task: Optional[asyncio.Task] = None


class SessionServer:
    """asyncio shell around a Session: TCP protocol port plus console HTTP."""

    def __init__(self, config: SessionConfig, log: Optional[EventLog] = None, console_token: Optional[str] = None):
        self.config = config
        self.session = Session(config, log)
        self.inputs: asyncio.Queue = asyncio.Queue()
        self.connections: dict[int, _Connection] = {}
        self._conn_counter = 0
        self._server: Optional[asyncio.AbstractServer] = None
        self._session_task: Optional[asyncio.Task] = None
        self._console_runner = None
        self.console_port: Optional[int] = None
        self.console_token = console_token
        self.event_subscribers: set[asyncio.Queue] = set()
        self._event_id = 0
        self.stopped = asyncio.Event()
        self._attach_console_events()

    # -- lifecycle --

    async def start(self) -> None:
        self._server = await asyncio.start_server(self._on_connection, "0.0.0.0", self.config.port)
        self._session_task = asyncio.create_task(self._session_loop())
        if self.config.console_port is not None:
            from .console_api import start_console  # local import: optional surface

            self._console_runner, self.console_port = await start_console(self, self.config.console_port)

    @property
    def port(self) -> int:
        return self._server.sockets[0].getsockname()[1]

    async def stop(self) -> None:
        if self._session_task:
            self._session_task.cancel()
            try:
                await self._session_task
            except asyncio.CancelledError:
                pass
        for conn in list(self.connections.values()):
            await self._drop_connection(conn)
        if self._server:
            self._server.close()
            await self._server.wait_closed()
        if self._console_runner is not None:
            await self._console_runner.cleanup()
        self.session.close()
        self.stopped.set()

    async def serve_forever(self) -> None:
        await self.stopped.wait()

    # -- connections --

    async def _on_connection(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        from .transport import StreamTransport

        self._conn_counter += 1
        conn = _Connection(StreamTransport(reader, writer), self._conn_counter)
        self.connections[conn.conn_id] = conn
        conn.writer_task = asyncio.create_task(self._writer_loop(conn))
        conn.reader_task = asyncio.create_task(self._reader_loop(conn))

    async def _reader_loop(self, conn: _Connection) -> None:
        try:
            while True:
                msg = await conn.transport.recv()
                if msg is None:
                    break
                if isinstance(msg, Ping):
                    # answered at the connection layer so RTT probes do not
                    # ride the tick cadence
                    self._offer(conn, Pong(msg.nonce))
                    continue
                await self.inputs.put((conn.conn_id, msg))
        except (ConnectionError, ValueError):
            pass
        finally:
            await self.inputs.put((conn.conn_id, None))  # disconnect marker

    async def _writer_loop(self, conn: _Connection) -> None:
        try:
            while True:
                item = await conn.outbox.get()
                if item is None:
                    break
                data = item if isinstance(item, (bytes, bytearray)) else encode(item)
                await conn.transport.send_bytes(data)
        except ConnectionError:
            pass

    def _offer(self, conn: _Connection, item) -> bool:
        """Queue without blocking; a full buffer means a dead-slow client."""
        try:
            conn.outbox.put_nowait(item)
            return True
        except asyncio.QueueFull:
            asyncio.create_task(self._drop_connection(conn, reason="send buffer overflow"))
            return False

    async def _drop_connection(self, conn: _Connection, reason: str = "") -> None:
        if conn.conn_id not in self.connections:
            return
        del self.connections[conn.conn_id]
        if conn.participant_id:
            self.session.remove(conn.participant_id)
        if conn.writer_task:
            try:
                conn.outbox.put_nowait(None)
            except asyncio.QueueFull:
                conn.writer_task.cancel()
        await conn.transport.close()
        if conn.reader_task and conn.reader_task is not asyncio.current_task():
            conn.reader_task.cancel()

    # -- event stream for the console --

    def _publish_event(self, event: dict) -> None:
        self._event_id += 1
        payload = {"event_id": self._event_id, **event}
        for q in list(self.event_subscribers):
            try:
                q.put_nowait(payload)
            except asyncio.QueueFull:
                self.event_subscribers.discard(q)

    # -- the single session task --

    # Polling slice for the session loop. Inputs queue for at most this long
    # before being applied; small against the 33 ms tick, and a bare sleep()
    # keeps cancellation prompt (asyncio.wait_for in 3.10 can swallow a
    # cancel that races the inner future).
    _POLL_S = 0.005

    async def _session_loop(self) -> None:
        interval = 1.0 / self.config.tick_rate
        loop = asyncio.get_running_loop()
        next_tick = loop.time() + interval
        while True:
            while True:  # drain everything queued, in arrival order
                try:
                    cid, msg = self.inputs.get_nowait()
                except asyncio.QueueEmpty:
                    break
                self._process_input(cid, msg)
            if loop.time() >= next_tick:
                self._do_tick()
                next_tick = max(next_tick + interval, loop.time())  # no catch-up bursts
            await asyncio.sleep(min(max(next_tick - loop.time(), 0.0), self._POLL_S))

    def _process_input(self, cid: int, msg: Optional[Message]) -> None:
        conn = self.connections.get(cid)
        if conn is None:
            return
        if msg is None:
            asyncio.create_task(self._drop_connection(conn))
            return
        if isinstance(msg, JoinRequest):
            pid, reply = self.session.handle_join(msg)
            self._offer(conn, reply)
            if pid is not None:
                conn.participant_id = pid
            return
        if conn.participant_id is None:
            self._offer(conn, Error("protocol", "join first"))
            return
        replies = self.session.ingest(conn.participant_id, msg)
        for target, reply in replies:
            target_conn = self._conn_for(target)
            if target_conn is not None:
                self._offer(target_conn, reply)

    def _conn_for(self, participant_id: str) -> Optional[_Connection]:
        for conn in self.connections.values():
            if conn.participant_id == participant_id:
                return conn
        return None

    def _do_tick(self) -> None:
        frame = self.session.tick()
        data = encode(frame)
        for conn in list(self.connections.values()):
            if conn.participant_id is not None:
                self._offer(conn, data)

    def _attach_console_events(self) -> None:
        # the console's WS /events stream mirrors the session's durable log
        original = self.session.write_event

        def wrapped(event: dict) -> None:
            original(event)
            if event.get("type") in ("state-entered", "command-applied", "joined", "left", "sim-reset",
                                     "sequence-finished", "command-rejected", "permission-denied"):
                self._publish_event(dict(event))

        self.session.write_event = wrapped  # type: ignore[method-assign]
