"""Interactive bead-spring ring polymer, the session's shared tangible object.

A closed loop of beads joined by harmonic bonds and harmonic bending
angles stands in for a flexible molecular thread. Participants attach
pinch-point springs to individual beads; the loop is integrated in real
time with a Langevin thermostat (BAOAB splitting) so it keeps gently
fluctuating even when nobody is touching it.

Units are reduced: meters, seconds, unit bead mass; stiffnesses chosen so
the thread feels loose at the default time step. With friction and
temperature both zero the integrator reduces to plain velocity Verlet and
is symplectic and deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .spatial import Vec3


class IntegrationBlowupError(RuntimeError):
    """The integrator produced a non-finite coordinate."""

    def __init__(self, bead: int, time: float):
        self.bead = bead
        self.time = time
        super().__init__(f"integration blew up: bead {bead} became non-finite at t={time:.6g}s")


@dataclass(frozen=True)
class RingTopology:
    """Closed loop of n beads: n bonds and n bending triples by cyclic indexing."""

    n_beads: int = 40
    rest_length: float = 0.15
    bond_stiffness: float = 500.0
    angle_stiffness: float = 5.0
    rest_angle: Optional[float] = None  # defaults to the regular-polygon interior angle
    bead_mass: float = 1.0

    def __post_init__(self) -> None:
        if self.n_beads < 3:
            raise ValueError(f"a ring needs at least 3 beads, got {self.n_beads}")
        if self.rest_length <= 0:
            raise ValueError("rest_length must be positive")
        if self.bond_stiffness <= 0:
            raise ValueError("bond_stiffness must be positive")
        if self.angle_stiffness < 0:
            raise ValueError("angle_stiffness must be non-negative")
        if self.bead_mass <= 0:
            raise ValueError("bead_mass must be positive")

    @property
    def theta0(self) -> float:
        if self.rest_angle is not None:
            return self.rest_angle
        return math.pi * (1.0 - 2.0 / self.n_beads)


@dataclass(frozen=True)
class SimState:
    """Positions/velocities of all beads plus sim clock and render scale.

    Value-semantics snapshot: arrays are never mutated in place, so a held
    reference stays valid while the owner steps the sim forward.
    """

    positions: np.ndarray  # (n, 3)
    velocities: np.ndarray  # (n, 3)
    time: float = 0.0
    scale: float = 1.0
    step_count: int = 0  # feeds the per-step thermostat RNG key

    def __post_init__(self) -> None:
        if self.positions.shape != self.velocities.shape or self.positions.ndim != 2:
            raise ValueError("positions and velocities must both be (n, 3)")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    @property
    def n_beads(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class InteractionForce:
    """One participant's pinch-spring pulling a bead toward an anchor point.

    The anchor lives in the shared (world) frame; it is mapped into sim
    coordinates by the current render scale when forces are evaluated. The
    spring is clamped to max_force so an enthusiastic tug cannot blow up
    the integrator.
    """

    owner: str
    target_bead: int
    anchor: Vec3
    stiffness: float = 50.0
    max_force: float = 20.0

    def __post_init__(self) -> None:
        if self.target_bead < 0:
            raise ValueError("target_bead must be non-negative")
        if self.stiffness < 0:
            raise ValueError("stiffness must be non-negative")
        if self.max_force <= 0:
            raise ValueError("max_force must be positive")


@dataclass(frozen=True)
class IntegratorParams:
    dt: float = 0.002
    friction: float = 5.0  # 1/s
    kT: float = 0.1  # 0 disables the thermostat
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.friction < 0:
            raise ValueError("friction must be non-negative")
        if self.kT < 0:
            raise ValueError("kT must be non-negative")


def build_ring(topo: RingTopology, radius_hint: Optional[float] = None) -> SimState:
    """Lay the beads out as a regular n-gon in the y=1 plane, at rest.

    The default radius r0 / (2 sin(pi/n)) is the energy minimum of the
    bond+angle potential (chords exactly rest_length, interior angles
    exactly the default rest angle), so the fresh ring starts relaxed.
    """
    n = topo.n_beads
    radius = radius_hint if radius_hint is not None else topo.rest_length / (2.0 * math.sin(math.pi / n))
    phis = 2.0 * math.pi * np.arange(n) / n
    positions = np.column_stack([radius * np.cos(phis), np.ones(n), radius * np.sin(phis)])
    return SimState(positions=positions, velocities=np.zeros((n, 3)), time=0.0, scale=1.0)


def _bond_terms(positions: np.ndarray, topo: RingTopology):
    """Per-bond vectors, lengths, and stretch for bonds (i, i+1 mod n)."""
    nxt = np.roll(positions, -1, axis=0)
    rvec = nxt - positions
    length = np.linalg.norm(rvec, axis=1)
    return rvec, length


def _angle_geometry(positions: np.ndarray):
    """Unit arms and angle at each bead i for the triple (i-1, i, i+1)."""
    prev = np.roll(positions, 1, axis=0)
    nxt = np.roll(positions, -1, axis=0)
    u = prev - positions
    v = nxt - positions
    lu = np.linalg.norm(u, axis=1)
    lv = np.linalg.norm(v, axis=1)
    uh = u / lu[:, None]
    vh = v / lv[:, None]
    cos_t = np.clip(np.einsum("ij,ij->i", uh, vh), -1.0, 1.0)
    theta = np.arccos(cos_t)
    return uh, vh, lu, lv, cos_t, theta


def forces(
    state: SimState,
    topo: RingTopology,
    interactions: Sequence[InteractionForce] = (),
) -> np.ndarray:
    """Total force on every bead: bond stretch + angle bending + pinch springs.

    Matches -grad of potential_energy for the same arguments (the clamped
    pinch spring switches to a constant-magnitude pull beyond the clamp
    radius, which is the gradient of its linearized tail).
    """
    pos = state.positions
    n = topo.n_beads
    f = np.zeros_like(pos)

    # Bonds: V = 1/2 k_b (|r| - r0)^2 per bond (i, i+1)
    rvec, length = _bond_terms(pos, topo)
    with np.errstate(invalid="ignore", divide="ignore"):
        rhat = np.where(length[:, None] > 0, rvec / np.where(length == 0, 1.0, length)[:, None], 0.0)
    stretch = topo.bond_stiffness * (length - topo.rest_length)
    pull = stretch[:, None] * rhat  # force on bead i toward bead i+1
    f += pull
    f -= np.roll(pull, 1, axis=0)  # reaction on bead i+1

    # Angles: V = 1/2 k_th (theta - theta0)^2 at each bead
    if topo.angle_stiffness > 0:
        uh, vh, lu, lv, cos_t, theta = _angle_geometry(pos)
        sin_t = np.sqrt(np.clip(1.0 - cos_t * cos_t, 0.0, None))
        ok = sin_t > 1e-8  # gradient direction undefined at exactly straight/folded
        coef = np.where(ok, -topo.angle_stiffness * (theta - topo.theta0), 0.0)
        inv_sin = np.where(ok, 1.0 / np.where(ok, sin_t, 1.0), 0.0)
        # dtheta/d(prev bead) and dtheta/d(next bead)
        grad_prev = (cos_t[:, None] * uh - vh) * (inv_sin / lu)[:, None]
        grad_next = (cos_t[:, None] * vh - uh) * (inv_sin / lv)[:, None]
        fp = coef[:, None] * grad_prev
        fn = coef[:, None] * grad_next
        f += np.roll(fp, -1, axis=0)  # angle i acts on bead i-1
        f += np.roll(fn, 1, axis=0)  # angle i acts on bead i+1
        f -= fp + fn  # center bead balances both arms

    # Pinch springs, anchors given in the shared frame
    for it in interactions:
        if it.target_bead >= n:
            raise ValueError(f"interaction targets bead {it.target_bead} of {n}")
        if it.stiffness == 0:
            continue
        anchor = np.array(it.anchor.as_tuple()) / state.scale
        pull_vec = it.stiffness * (anchor - pos[it.target_bead])
        mag = float(np.linalg.norm(pull_vec))
        if mag > it.max_force:
            pull_vec *= it.max_force / mag
        f[it.target_bead] += pull_vec

    return f


def potential_energy(
    state: SimState,
    topo: RingTopology,
    interactions: Sequence[InteractionForce] = (),
) -> float:
    """Potential whose negative gradient is forces(); used by energy checks."""
    pos = state.positions
    _, length = _bond_terms(pos, topo)
    v = 0.5 * topo.bond_stiffness * float(np.sum((length - topo.rest_length) ** 2))
    if topo.angle_stiffness > 0:
        *_, theta = _angle_geometry(pos)
        v += 0.5 * topo.angle_stiffness * float(np.sum((theta - topo.theta0) ** 2))
    for it in interactions:
        if it.stiffness == 0:
            continue
        anchor = np.array(it.anchor.as_tuple()) / state.scale
        d = float(np.linalg.norm(anchor - pos[it.target_bead]))
        clamp_d = it.max_force / it.stiffness
        if d <= clamp_d:
            v += 0.5 * it.stiffness * d * d
        else:
            # linear tail, continuous in value and slope at the clamp radius
            v += it.max_force * d - it.max_force * clamp_d / 2.0
    return v


def kinetic_energy(state: SimState, topo: RingTopology) -> float:
    return 0.5 * topo.bead_mass * float(np.sum(state.velocities**2))


def total_energy(state: SimState, topo: RingTopology) -> float:
    return potential_energy(state, topo) + kinetic_energy(state, topo)


def stable_dt_bound(topo: RingTopology) -> float:
    """Velocity-Verlet stability bound 2/omega_max for the stiffest bond mode."""
    omega_max = 2.0 * math.sqrt(topo.bond_stiffness / topo.bead_mass)
    return 2.0 / omega_max


def _thermostat_noise(seed: int, step_index: int, n: int) -> np.ndarray:
    """Noise for one O-step, keyed by (seed, step) so replay is schedule-free."""
    rng = np.random.default_rng((seed, step_index))
    return rng.standard_normal((n, 3))


def step(
    state: SimState,
    topo: RingTopology,
    interactions: Sequence[InteractionForce] = (),
    ip: IntegratorParams = IntegratorParams(),
) -> SimState:
    """One BAOAB Langevin step; plain velocity Verlet when friction=kT=0."""
    dt = ip.dt
    m = topo.bead_mass
    pos = state.positions
    vel = state.velocities

    with np.errstate(over="ignore", invalid="ignore"):  # blowups detected below
        f = forces(state, topo, interactions)
        vel = vel + (0.5 * dt / m) * f  # B
        pos = pos + (0.5 * dt) * vel  # A

        if ip.friction > 0 or ip.kT > 0:  # O
            c1 = math.exp(-ip.friction * dt)
            c2 = math.sqrt(ip.kT * (1.0 - c1 * c1) / m)
            if c2 > 0:
                noise = _thermostat_noise(ip.rng_seed, state.step_count, topo.n_beads)
                vel = c1 * vel + c2 * noise
            else:
                vel = c1 * vel

        pos = pos + (0.5 * dt) * vel  # A
        mid = SimState(pos, vel, state.time, state.scale, state.step_count)
        f = forces(mid, topo, interactions)
        vel = vel + (0.5 * dt / m) * f  # B

    if not np.isfinite(pos).all() or not np.isfinite(vel).all():
        bad = ~(np.isfinite(pos).all(axis=1) & np.isfinite(vel).all(axis=1))
        first_bad = int(np.argmax(bad))
        raise IntegrationBlowupError(first_bad, state.time + dt)

    return SimState(pos, vel, state.time + dt, state.scale, state.step_count + 1)


def pick_bead(state: SimState, point: Vec3, grab_radius: float) -> Optional[int]:
    """Nearest bead to a world-frame point, or None beyond grab_radius.

    Bead positions are compared at render scale. Near-exact ties (within
    1e-12) resolve to the lowest index.
    """
    if grab_radius <= 0:
        raise ValueError("grab_radius must be positive")
    world = state.positions * state.scale
    d = np.linalg.norm(world - np.array(point.as_tuple()), axis=1)
    dmin = float(d.min())
    if dmin > grab_radius:
        return None
    return int(np.flatnonzero(d <= dmin + 1e-12)[0])


def set_scale(state: SimState, s: float) -> SimState:
    """Change the render scale; sim coordinates are untouched."""
    if s <= 0:
        raise ValueError(f"scale must be positive, got {s}")
    return replace(state, scale=s)
