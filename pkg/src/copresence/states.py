"""The reproducible experience script: timed aesthetic states and their runtime.

A "state" assigns values to named aesthetic hyperparameters for a fixed
duration; a sequence is an ordered list of states under a phase label
(preparation, journey, integration). Sequences are stored as versioned
JSON with a canonical serialization (UTF-8, sorted keys, no insignificant
whitespace) so a saved file replays to the identical run.

The parameter registry ships a canonical set of keys covering the body,
heart-light, thread, mudra, global-light and space families, each with a
declared range and default. Extra keys can be registered from a JSON
registry file; unknown keys in a sequence are rejected at parse time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Union

SCHEMA_VERSION = 1

PHASES = ("preparation", "journey", "integration")

Value = Union[float, int, str]


class SchemaError(ValueError):
    """A sequence document violates the schema; `path` points at the field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class VersionError(SchemaError):
    """Document schema version is not the one this runtime speaks."""


class StateError(RuntimeError):
    """Operation invalid for the machine's current mode."""


@dataclass(frozen=True)
class ParamSpec:
    """Declared range for one registered hyperparameter."""

    kind: str  # "scalar" | "enum"
    default: Value
    lo: float = 0.0
    hi: float = 1.0
    choices: tuple[str, ...] = ()

    def validate(self, value: Value) -> None:
        if self.kind == "scalar":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValueError(f"expected a number in [{self.lo}, {self.hi}], got {value!r}")
            if not (self.lo <= float(value) <= self.hi):
                raise ValueError(f"value {value} outside [{self.lo}, {self.hi}]")
        else:
            if value not in self.choices:
                raise ValueError(f"value {value!r} not one of {list(self.choices)}")


def _scalar(default: float, lo: float, hi: float) -> ParamSpec:
    return ParamSpec("scalar", default, lo, hi)


def _enum(default: str, *choices: str) -> ParamSpec:
    return ParamSpec("enum", default, choices=tuple(choices))


#: Canonical hyperparameter registry. Covers the named families (body
#: color/distribution/density/latency, heart-light size, thread rendering
#: and interaction forces, global light) without inventing the long tail.
DEFAULT_REGISTRY: dict[str, ParamSpec] = {
    "body.hue": _scalar(0.6, 0.0, 1.0),
    "body.saturation": _scalar(0.5, 0.0, 1.0),
    "body.brightness": _scalar(1.0, 0.0, 2.0),
    "body.density": _scalar(0.5, 0.0, 1.0),
    "body.distribution": _scalar(0.5, 0.0, 1.0),
    "body.latency": _scalar(0.2, 0.0, 2.0),
    "body.trail_length": _scalar(0.5, 0.0, 3.0),
    "heart.light_size": _scalar(0.25, 0.0, 1.0),
    "heart.intensity": _scalar(1.0, 0.0, 2.0),
    "heart.pulse_rate": _scalar(0.0, 0.0, 4.0),
    "mudra.light_gain": _scalar(1.0, 0.0, 2.0),
    "thread.render_mode": _enum("beads", "off", "line", "beads", "ribbon"),
    "thread.glow": _scalar(1.0, 0.0, 2.0),
    "thread.interaction_stiffness": _scalar(50.0, 0.0, 200.0),
    "thread.interaction_max_force": _scalar(20.0, 0.1, 100.0),
    "global.light_level": _scalar(0.5, 0.0, 1.0),
    "global.fog_density": _scalar(0.1, 0.0, 1.0),
    "global.floor": _enum("visible", "visible", "hidden"),
    "global.skybox": _enum("void", "void", "stars", "dawn"),
    "space.boundary_glow": _scalar(0.2, 0.0, 1.0),
}


def load_registry_file(data: bytes, base: Optional[Mapping[str, ParamSpec]] = None) -> dict[str, ParamSpec]:
    """Extend the registry from a JSON file of {name: spec} entries."""
    registry = dict(base if base is not None else DEFAULT_REGISTRY)
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise SchemaError("$", f"registry file is not valid UTF-8 JSON: {e}") from e
    if not isinstance(doc, dict):
        raise SchemaError("$", "registry file must be a JSON object")
    for name, spec in doc.items():
        if not isinstance(spec, dict) or "kind" not in spec:
            raise SchemaError(name, "registry entry needs a 'kind'")
        if spec["kind"] == "scalar":
            registry[name] = _scalar(float(spec["default"]), float(spec["lo"]), float(spec["hi"]))
        elif spec["kind"] == "enum":
            registry[name] = _enum(str(spec["default"]), *[str(c) for c in spec["choices"]])
        else:
            raise SchemaError(name, f"unknown kind {spec['kind']!r}")
    return registry


@dataclass(frozen=True)
class AestheticState:
    """One timed assignment of hyperparameter values."""

    name: str
    duration: float
    params: Mapping[str, Value] = field(default_factory=dict)
    crossfade: float = 0.0

    def __post_init__(self) -> None:
        if self.duration <= 0:
            raise ValueError(f"state {self.name!r}: duration must be positive")
        if not (0.0 <= self.crossfade < self.duration):
            raise ValueError(f"state {self.name!r}: crossfade must be in [0, duration)")


@dataclass(frozen=True)
class StateSequence:
    version: int
    phase: str
    states: tuple[AestheticState, ...]
    comment: str = ""

    def __post_init__(self) -> None:
        if not self.states:
            raise ValueError("sequence has no states")
        names = [s.name for s in self.states]
        if len(set(names)) != len(names):
            raise ValueError("state names within a sequence must be unique")

    @property
    def total_duration(self) -> float:
        return sum(s.duration for s in self.states)


def parse_sequence(document: bytes, registry: Optional[Mapping[str, ParamSpec]] = None) -> StateSequence:
    """Parse and validate a sequence document against the registry."""
    registry = registry if registry is not None else DEFAULT_REGISTRY
    try:
        doc = json.loads(document.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise SchemaError("$", f"not valid UTF-8 JSON: {e}") from e
    if not isinstance(doc, dict):
        raise SchemaError("$", "top level must be an object")

    version = doc.get("version")
    if version != SCHEMA_VERSION:
        raise VersionError("version", f"expected schema version {SCHEMA_VERSION}, got {version!r}")

    phase = doc.get("phase")
    if phase not in PHASES:
        raise SchemaError("phase", f"must be one of {list(PHASES)}, got {phase!r}")

    comment = doc.get("comment", "")
    if not isinstance(comment, str):
        raise SchemaError("comment", "must be a string")

    raw_states = doc.get("states")
    if not isinstance(raw_states, list) or not raw_states:
        raise SchemaError("states", "must be a non-empty list")

    states: list[AestheticState] = []
    seen: set[str] = set()
    for i, raw in enumerate(raw_states):
        where = f"states[{i}]"
        if not isinstance(raw, dict):
            raise SchemaError(where, "must be an object")
        name = raw.get("name")
        if not isinstance(name, str) or not name:
            raise SchemaError(f"{where}.name", "must be a non-empty string")
        if name in seen:
            raise SchemaError(f"{where}.name", f"duplicate state name {name!r}")
        seen.add(name)
        duration = raw.get("duration")
        if not isinstance(duration, (int, float)) or isinstance(duration, bool) or duration <= 0:
            raise SchemaError(f"{where}.duration", f"state {name!r}: must be a positive number")
        crossfade = raw.get("crossfade", 0.0)
        if not isinstance(crossfade, (int, float)) or isinstance(crossfade, bool) or not (0 <= crossfade < duration):
            raise SchemaError(f"{where}.crossfade", f"state {name!r}: must be in [0, duration)")
        params = raw.get("params", {})
        if not isinstance(params, dict):
            raise SchemaError(f"{where}.params", "must be an object")
        for key, value in params.items():
            spec = registry.get(key)
            if spec is None:
                raise SchemaError(f"{where}.params.{key}", f"unregistered parameter {key!r}")
            try:
                spec.validate(value)
            except ValueError as e:
                raise SchemaError(f"{where}.params.{key}", str(e)) from e
        states.append(AestheticState(name, float(duration), dict(params), float(crossfade)))

    return StateSequence(int(version), phase, tuple(states), comment)


def serialize_sequence(seq: StateSequence) -> bytes:
    """Canonical form: UTF-8, sorted keys, no insignificant whitespace."""
    doc: dict = {
        "version": seq.version,
        "phase": seq.phase,
        "states": [
            {
                "name": s.name,
                "duration": s.duration,
                "crossfade": s.crossfade,
                "params": dict(sorted(s.params.items())),
            }
            for s in seq.states
        ],
    }
    if seq.comment:
        doc["comment"] = seq.comment
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def compressed(seq: StateSequence, factor: float) -> StateSequence:
    """Same script with every duration (and crossfade) scaled by `factor`."""
    if factor <= 0:
        raise ValueError("factor must be positive")
    states = tuple(
        replace(s, duration=s.duration * factor, crossfade=s.crossfade * factor) for s in seq.states
    )
    return StateSequence(seq.version, seq.phase, states, seq.comment)


# --- runtime ---------------------------------------------------------------


@dataclass(frozen=True)
class StateEntered:
    index: int
    name: str


@dataclass(frozen=True)
class SequenceFinished:
    pass


MachineEvent = Union[StateEntered, SequenceFinished]


@dataclass(frozen=True)
class Hold:
    pass


@dataclass(frozen=True)
class Resume:
    pass


@dataclass(frozen=True)
class Skip:
    pass


@dataclass(frozen=True)
class SetOverride:
    key: str
    value: Value


@dataclass(frozen=True)
class ClearOverride:
    key: str


Command = Union[Hold, Resume, Skip, SetOverride, ClearOverride]


@dataclass(frozen=True)
class StateMachine:
    """Cursor over one sequence. Immutable; tick/command return new machines.

    The initial state-entered event belongs to whoever starts the machine:
    call start() once, then tick_machine() emits only boundary crossings.
    """

    sequence: StateSequence
    registry: Mapping[str, ParamSpec] = field(default_factory=lambda: DEFAULT_REGISTRY)
    index: int = 0
    elapsed: float = 0.0
    mode: str = "running"  # running | held | finished
    overrides: Mapping[str, Value] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.mode not in ("running", "held", "finished"):
            raise ValueError(f"bad mode {self.mode!r}")
        if self.mode != "finished" and not (0 <= self.index < len(self.sequence.states)):
            raise ValueError("index out of range")
        for key in self.overrides:
            if key not in self.registry:
                raise ValueError(f"override for unregistered parameter {key!r}")

    @property
    def current(self) -> AestheticState:
        if self.mode == "finished":
            raise StateError("machine is finished")
        return self.sequence.states[self.index]

    def start(self) -> tuple["StateMachine", list[MachineEvent]]:
        """Announce entry into the first state (no time advances)."""
        if self.mode == "finished":
            raise StateError("machine is finished")
        return self, [StateEntered(self.index, self.current.name)]


def tick_machine(m: StateMachine, dt: float) -> tuple[StateMachine, list[MachineEvent]]:
    """Advance elapsed time; emit an event per boundary crossed, then finish."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    if m.mode != "running":
        return m, []
    events: list[MachineEvent] = []
    index, elapsed = m.index, m.elapsed + dt
    states = m.sequence.states
    while elapsed >= states[index].duration:
        elapsed -= states[index].duration
        index += 1
        if index >= len(states):
            return replace(m, index=len(states) - 1, elapsed=0.0, mode="finished"), events + [SequenceFinished()]
        events.append(StateEntered(index, states[index].name))
    return replace(m, index=index, elapsed=elapsed), events


def effective_params(m: StateMachine) -> dict[str, Value]:
    """Registry defaults, overlaid by the current state (crossfaded in from
    the previous state during the crossfade window), overlaid by overrides."""
    if m.mode == "finished":
        raise StateError("machine is finished")
    registry = m.registry
    cur = m.sequence.states[m.index]

    def resolved(state: AestheticState) -> dict[str, Value]:
        vals = {k: spec.default for k, spec in registry.items()}
        vals.update(state.params)
        return vals

    out = resolved(cur)
    if m.index > 0 and cur.crossfade > 0 and m.elapsed < cur.crossfade:
        frac = m.elapsed / cur.crossfade
        prev = resolved(m.sequence.states[m.index - 1])
        for key, spec in registry.items():
            if spec.kind == "scalar":
                out[key] = prev[key] + (out[key] - prev[key]) * frac
            # enums step at state entry: keep the current value
    out.update(m.overrides)
    return out


def command(m: StateMachine, c: Command) -> StateMachine:
    """Apply a facilitator command; raises StateError where meaningless."""
    if isinstance(c, Hold):
        if m.mode == "finished":
            raise StateError("cannot hold a finished machine")
        return replace(m, mode="held")
    if isinstance(c, Resume):
        if m.mode == "finished":
            raise StateError("cannot resume a finished machine")
        return replace(m, mode="running")
    if isinstance(c, Skip):
        if m.mode == "finished":
            raise StateError("cannot skip on a finished machine")
        nxt = m.index + 1
        if nxt >= len(m.sequence.states):
            return replace(m, elapsed=0.0, mode="finished")
        return replace(m, index=nxt, elapsed=0.0)
    if isinstance(c, SetOverride):
        spec = m.registry.get(c.key)
        if spec is None:
            raise ValueError(f"unregistered parameter {c.key!r}")
        spec.validate(c.value)
        new = dict(m.overrides)
        new[c.key] = c.value
        return replace(m, overrides=new)
    if isinstance(c, ClearOverride):
        new = dict(m.overrides)
        new.pop(c.key, None)
        return replace(m, overrides=new)
    raise ValueError(f"unknown command {c!r}")
