"""Network quality measurement and deterministic fault injection.

probe() runs the pre-session latency check: a train of pings, round-trip
stats, and a verdict against documented thresholds. inject() wraps one
direction of a message transport with drop/duplicate/delay faults whose
per-message fate is a pure function of (seed, send sequence number), so a
faulted run replays identically regardless of task scheduling.

Faults live above the reliable stream on purpose: the pathology being
reproduced is application-level staleness and stalls, not TCP loss.
"""

from __future__ import annotations

import asyncio
import math
import random
from dataclasses import dataclass
from typing import Optional

from .protocol import Message, Ping, Pong
from .transport import connect_tcp

# Verdict thresholds (the source of the check gives only qualitative
# guidance; these encode "low jitter, low loss" numerically).
GOOD_MAX_LOSS = 0.01
GOOD_MAX_JITTER_MS = 30.0
UNUSABLE_LOSS = 0.10
UNUSABLE_RTT_MS = 400.0

REMEDIATION_ADVICE = (
    "prefer wired ethernet over wifi",
    "move closer to the wireless router",
    "avoid tethering through a phone",
    "pause other heavy transfers on the same network",
)


@dataclass(frozen=True)
class NetReport:
    samples: int  # pings sent
    rtt_mean_ms: float  # inf when nothing came back
    rtt_jitter_ms: float  # sample SD of RTTs
    loss_fraction: float
    verdict: str  # good | degraded | unusable

    def to_json_dict(self) -> dict:
        return {
            "samples": self.samples,
            "rtt_mean_ms": None if not math.isfinite(self.rtt_mean_ms) else round(self.rtt_mean_ms, 3),
            "rtt_jitter_ms": round(self.rtt_jitter_ms, 3),
            "loss_fraction": round(self.loss_fraction, 6),
            "verdict": self.verdict,
        }


def classify(rtt_mean_ms: float, rtt_jitter_ms: float, loss_fraction: float) -> str:
    if loss_fraction > UNUSABLE_LOSS or rtt_mean_ms > UNUSABLE_RTT_MS:
        return "unusable"
    if loss_fraction < GOOD_MAX_LOSS and rtt_jitter_ms < GOOD_MAX_JITTER_MS:
        return "good"
    return "degraded"


async def probe_transport(transport, n: int, interval_ms: float = 20.0, timeout_ms: float = 1000.0) -> NetReport:
    """Send n pings over an open transport and measure the replies."""
    if n < 2:
        raise ValueError("probe needs at least 2 pings")
    loop = asyncio.get_running_loop()
    send_times: dict[int, float] = {}
    rtts: list[float] = []
    matched: set[int] = set()
    done = asyncio.Event()

    async def receiver():
        while True:
            m = await transport.recv()
            if m is None:
                return
            if isinstance(m, Pong) and m.nonce in send_times and m.nonce not in matched:
                matched.add(m.nonce)
                rtts.append((loop.time() - send_times[m.nonce]) * 1000.0)
                if len(matched) == n:
                    done.set()
                    return

    rx = asyncio.create_task(receiver())
    for nonce in range(n):
        send_times[nonce] = loop.time()
        await transport.send(Ping(nonce))
        if interval_ms > 0:
            await asyncio.sleep(interval_ms / 1000.0)
    try:
        await asyncio.wait_for(done.wait(), timeout=timeout_ms / 1000.0)
    except asyncio.TimeoutError:
        pass
    rx.cancel()

    loss = (n - len(rtts)) / n
    if rtts:
        mean = sum(rtts) / len(rtts)
        if len(rtts) >= 2:
            jitter = math.sqrt(sum((r - mean) ** 2 for r in rtts) / (len(rtts) - 1))
        else:
            jitter = 0.0
    else:
        mean, jitter = math.inf, 0.0
    return NetReport(n, mean, jitter, loss, classify(mean, jitter, loss))


async def probe_endpoint(host: str, port: int, n: int, interval_ms: float = 20.0, timeout_ms: float = 1000.0) -> NetReport:
    try:
        transport = await connect_tcp(host, port)
    except OSError as e:
        raise ConnectionError(f"cannot reach {host}:{port}: {e}") from e
    try:
        return await probe_transport(transport, n, interval_ms, timeout_ms)
    finally:
        await transport.close()


def probe(host: str, port: int, n: int, interval_ms: float = 20.0, timeout_ms: float = 1000.0) -> NetReport:
    """Synchronous wrapper around probe_endpoint."""
    return asyncio.run(probe_endpoint(host, port, n, interval_ms, timeout_ms))


# --- fault injection ----------------------------------------------------------


@dataclass(frozen=True)
class FaultProfile:
    seed: int = 0
    base_delay_ms: float = 0.0
    jitter_ms: float = 0.0  # uniform +/- around base_delay
    drop_p: float = 0.0
    dup_p: float = 0.0

    def __post_init__(self) -> None:
        for name in ("drop_p", "dup_p"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.base_delay_ms < 0 or self.jitter_ms < 0:
            raise ValueError("delays must be non-negative")


@dataclass(frozen=True)
class Fate:
    drop: bool
    duplicate: bool
    delay_ms: float


def message_fate(profile: FaultProfile, seq: int) -> Fate:
    """Deterministic fate of the seq-th sent message under this profile.

    String-keyed RNG seeding keeps this independent of PYTHONHASHSEED and
    of any scheduling: the same (seed, seq) always yields the same fate.
    """
    rng = random.Random(f"{profile.seed}:{seq}")
    drop = rng.random() < profile.drop_p
    duplicate = rng.random() < profile.dup_p
    delay = max(0.0, profile.base_delay_ms + rng.uniform(-profile.jitter_ms, profile.jitter_ms))
    return Fate(drop, duplicate, delay)


class FaultyTransport:
    """Applies a FaultProfile to the send direction of an inner transport.

    Wrap both ends (with different seeds) to fault both directions. Delayed
    messages are delivered by background tasks, so jitter can reorder them
    exactly as a jittery network would; latest-wins sequencing upstream is
    what keeps the session coherent.
    """

    def __init__(self, inner, profile: FaultProfile):
        self._inner = inner
        self.profile = profile
        self._seq = 0
        self._tasks: set[asyncio.Task] = set()

    @property
    def name(self) -> str:
        return f"faulty({self._inner.name})"

    async def _deliver_later(self, m: Message, delay_ms: float) -> None:
        await asyncio.sleep(delay_ms / 1000.0)
        try:
            await self._inner.send(m)
        except ConnectionError:
            pass

    async def send(self, m: Message) -> None:
        fate = message_fate(self.profile, self._seq)
        self._seq += 1
        if fate.drop:
            return
        copies = 2 if fate.duplicate else 1
        for _ in range(copies):
            if fate.delay_ms <= 0:
                await self._inner.send(m)
            else:
                task = asyncio.create_task(self._deliver_later(m, fate.delay_ms))
                self._tasks.add(task)
                task.add_done_callback(self._tasks.discard)

    async def recv(self) -> Optional[Message]:
        return await self._inner.recv()

    async def close(self) -> None:
        for task in list(self._tasks):
            task.cancel()
        await self._inner.close()

    @property
    def closed(self) -> bool:
        return self._inner.closed


def inject(transport, profile: FaultProfile) -> FaultyTransport:
    """Wrap a transport so its sends suffer the profile's faults."""
    return FaultyTransport(transport, profile)


@dataclass(frozen=True)
class GateResult:
    passed: bool
    reason: Optional[str] = None
    advice: tuple[str, ...] = ()


def stability_gate(report: NetReport) -> GateResult:
    """Node acceptance check: fail only the unusable; warn the degraded."""
    if report.verdict == "unusable":
        reason = "packet loss" if report.loss_fraction > UNUSABLE_LOSS else "latency"
        return GateResult(False, reason, REMEDIATION_ADVICE)
    if report.verdict == "degraded":
        return GateResult(True, "degraded connection", REMEDIATION_ADVICE)
    return GateResult(True)
