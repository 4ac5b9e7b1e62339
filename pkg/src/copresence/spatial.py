"""Geometry for composing N remote play spaces into one shared world.

Every node's room-scale space is overlaid on the same origin (centers
coincident) and rotated about the vertical axis so that node k faces its
neighbors at an angle of k * 360/n degrees. Bodies are modeled as
isotropic Gaussian luminosity kernels centered near the chest; light
output of the group grows with pairwise kernel overlap, so coalesced
bodies shine brighter than separated ones.

Conventions (fixed here because they matter for every downstream module):
right-handed coordinates, +y is up, and positive rotation about +y is
counterclockwise when viewed from above (looking down -y).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

#: How far below the head pose the body's luminous center sits (meters).
#: The tracked point is the head; the kernel is anchored near the chest.
BODY_CENTER_OFFSET_Y = -0.4

_QUAT_NORM_TOL = 1e-5  # loose enough to admit wire-quantized components


@dataclass(frozen=True)
class Vec3:
    """A point or displacement in meters. +y is up."""

    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)):
            raise ValueError(f"non-finite vector components: ({self.x}, {self.y}, {self.z})")

    def __add__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x - other.x, self.y - other.y, self.z - other.z)

    def scaled(self, s: float) -> "Vec3":
        return Vec3(self.x * s, self.y * s, self.z * s)

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def distance_to(self, other: "Vec3") -> float:
        return (self - other).norm()

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)


ZERO = Vec3(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Quat:
    """Unit quaternion (w, x, y, z), Hamilton convention."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        n = self.norm()
        if not math.isfinite(n) or abs(n - 1.0) > _QUAT_NORM_TOL:
            raise ValueError(f"quaternion norm {n!r} not unit within {_QUAT_NORM_TOL}")

    def norm(self) -> float:
        return math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)

    def conjugate(self) -> "Quat":
        return Quat(self.w, -self.x, -self.y, -self.z)

    def __mul__(self, o: "Quat") -> "Quat":
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = o.w, o.x, o.y, o.z
        q = (
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )
        n = math.sqrt(sum(c * c for c in q))
        return Quat(q[0] / n, q[1] / n, q[2] / n, q[3] / n)

    def rotate(self, v: Vec3) -> Vec3:
        """Rotate a vector by this quaternion (active rotation)."""
        w, x, y, z = self.w, self.x, self.y, self.z
        # Rotation matrix rows, expanded once instead of two quaternion products.
        rx = (1 - 2 * (y * y + z * z)) * v.x + 2 * (x * y - w * z) * v.y + 2 * (x * z + w * y) * v.z
        ry = 2 * (x * y + w * z) * v.x + (1 - 2 * (x * x + z * z)) * v.y + 2 * (y * z - w * x) * v.z
        rz = 2 * (x * z - w * y) * v.x + 2 * (y * z + w * x) * v.y + (1 - 2 * (x * x + y * y)) * v.z
        return Vec3(rx, ry, rz)

    @staticmethod
    def identity() -> "Quat":
        return Quat(1.0, 0.0, 0.0, 0.0)

    @staticmethod
    def about_y(angle_deg: float) -> "Quat":
        """Rotation about +y, counterclockwise seen from above."""
        half = math.radians(angle_deg) / 2.0
        return Quat(math.cos(half), 0.0, math.sin(half), 0.0)


IDENTITY_QUAT = Quat(1.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Pose:
    """Position plus orientation of a tracked point (head or hand)."""

    position: Vec3
    orientation: Quat = IDENTITY_QUAT


@dataclass(frozen=True)
class PlaySpace:
    """Room-scale floor rectangle; depth is the long axis."""

    width: float = 2.0
    depth: float = 3.0

    def __post_init__(self) -> None:
        if self.width <= 0 or self.depth <= 0:
            raise ValueError(f"play space dimensions must be positive, got {self.width}x{self.depth}")


@dataclass(frozen=True)
class RigidTransform:
    """Node-frame transform: a rotation about +y followed by a translation.

    Node transforms are restricted to yaw-only rotations (the floor stays a
    floor); the constructor rejects any x/z quaternion component.
    """

    rotation: Quat = IDENTITY_QUAT
    translation: Vec3 = ZERO

    def __post_init__(self) -> None:
        if abs(self.rotation.x) > 1e-9 or abs(self.rotation.z) > 1e-9:
            raise ValueError("node transforms must rotate about +y only")

    def apply(self, v: Vec3) -> Vec3:
        return self.rotation.rotate(v) + self.translation

    def inverse(self) -> "RigidTransform":
        inv_rot = self.rotation.conjugate()
        return RigidTransform(inv_rot, inv_rot.rotate(self.translation).scaled(-1.0))


@dataclass(frozen=True)
class BodyKernel:
    """Gaussian 'energetic body': radius, its own glow, and the pair bonus."""

    sigma: float = 0.35
    base_luminosity: float = 1.0
    pair_gain: float = 1.0

    def __post_init__(self) -> None:
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.base_luminosity <= 0:
            raise ValueError("base_luminosity must be positive")
        if self.pair_gain < 0:
            raise ValueError("pair_gain must be non-negative")


def radial_transform(node_index: int, n_participants: int) -> RigidTransform:
    """Transform placing node `node_index` of `n_participants` in the shared frame.

    All centers coincide (zero translation); node k is rotated by
    k * 360/n degrees about +y so consecutive nodes are equally spaced.
    """
    if n_participants < 1:
        raise ValueError(f"n_participants must be >= 1, got {n_participants}")
    if node_index < 0 or node_index >= n_participants:
        raise ValueError(f"node_index {node_index} out of range for {n_participants} participants")
    return RigidTransform(Quat.about_y(node_index * 360.0 / n_participants), ZERO)


def to_shared(local: Pose, t: RigidTransform) -> Pose:
    """Map a pose from a node's local frame into the shared frame."""
    return Pose(t.apply(local.position), t.rotation * local.orientation)


def body_center(head: Pose, offset_y: float = BODY_CENTER_OFFSET_Y) -> Vec3:
    """Luminous-kernel center for a tracked head pose (chest-height anchor)."""
    return head.position + Vec3(0.0, offset_y, 0.0)


def pair_overlap(a: Vec3, b: Vec3, kernel: BodyKernel) -> float:
    """Normalized cross-correlation of two Gaussian bodies: exp(-d^2 / 4 sigma^2).

    1.0 means fully coalesced, and the value decays smoothly toward 0 with
    distance; symmetric in its arguments.
    """
    d2 = (a.x - b.x) ** 2 + (a.y - b.y) ** 2 + (a.z - b.z) ** 2
    return math.exp(-d2 / (4.0 * kernel.sigma * kernel.sigma))


def group_luminosity(centers: Sequence[Vec3], kernel: BodyKernel) -> float:
    """Total light output of a group of bodies.

    L = n * base + pair_gain * sum over pairs of overlaps, so more bodies
    coalescing at the same spot always make more light than fewer.
    """
    n = len(centers)
    total = n * kernel.base_luminosity
    for i in range(n):
        for j in range(i + 1, n):
            total += kernel.pair_gain * pair_overlap(centers[i], centers[j], kernel)
    return total


def avatar_luminosities(centers: Sequence[Vec3], kernel: BodyKernel) -> list[float]:
    """Per-body luminosity, splitting each pair term evenly between its two bodies.

    Sums back to group_luminosity; a body near others glows brighter than
    one alone.
    """
    n = len(centers)
    lum = [kernel.base_luminosity] * n
    for i in range(n):
        for j in range(i + 1, n):
            half = 0.5 * kernel.pair_gain * pair_overlap(centers[i], centers[j], kernel)
            lum[i] += half
            lum[j] += half
    return lum
