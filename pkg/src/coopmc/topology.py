"""Geometry of the TX, the passive spherical receivers and the fusion center.

Coordinates and radii are stored in micrometres; channel code converts to SI.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

UM = 1e-6

# Receiver ring around the FC at x = 2 um, radius 0.6 um, in fill order.  The
# published table rounds 0.3*sqrt(3) to 0.5196; that rounding alone breaks the
# symmetry by ~1e-5, so the ring is built from the exact angles instead.
RING_RADIUS = 0.6
RING_ANGLES_DEG = (0, 120, 240, 180, 60, 300)
SYMMETRIC_RING = tuple(
    (2.0, RING_RADIUS * math.cos(math.radians(a)), RING_RADIUS * math.sin(math.radians(a))) for a in RING_ANGLES_DEG
)

# Asymmetric layout: RX1 and RX2 fixed, RX3 slides from the ring towards the TX.
ASYMMETRIC_FIXED = ((2.0, 0.0, 0.6), (2.0, 0.0, -0.6))
# The published first RX3 position reads (2, 6, 0); it has to be (2, 0.6, 0)
# for the sweep to start at the symmetric point (d_TX = 2.088 um).
ASYMMETRIC_RX3 = (
    (2.0, 0.6, 0.0),
    (1.6, 0.48, 0.0),
    (1.2, 0.36, 0.0),
    (0.8, 0.24, 0.0),
    (0.4, 0.12, 0.0),
)

TX_ORIGIN = (0.0, 0.0, 0.0)
FC_CENTER = (2.0, 0.0, 0.0)
DEFAULT_R_RX = 0.225
DEFAULT_R_FC = 0.225


@dataclass(frozen=True)
class Vec3:
    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValueError(f"non-finite coordinate in {self!r}")

    @classmethod
    def of(cls, xyz: Sequence[float]) -> "Vec3":
        if isinstance(xyz, Vec3):
            return xyz
        x, y, z = (float(v) for v in xyz)
        return cls(x, y, z)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def as_list(self) -> list:
        return [self.x, self.y, self.z]


@dataclass(frozen=True)
class SphericalObserver:
    center: Vec3
    radius: float

    def __post_init__(self):
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise ValueError(f"observer radius must be positive, got {self.radius}")

    @property
    def volume(self) -> float:
        """Volume in cubic micrometres."""
        return 4.0 / 3.0 * math.pi * self.radius**3


def distance(a, b) -> float:
    a, b = Vec3.of(a), Vec3.of(b)
    return math.sqrt((a.x - b.x) ** 2 + (a.y - b.y) ** 2 + (a.z - b.z) ** 2)


@dataclass(frozen=True)
class Topology:
    tx: Vec3
    receivers: tuple
    fc: SphericalObserver

    def __post_init__(self):
        object.__setattr__(self, "receivers", tuple(self.receivers))
        if len(self.receivers) < 1:
            raise ValueError("a topology needs at least one receiver")
        for k, rx in enumerate(self.receivers):
            if distance(rx.center, self.tx) <= 0:
                raise ValueError(f"receiver {k + 1} sits on the TX")
            if distance(rx.center, self.fc.center) <= 0:
                raise ValueError(f"receiver {k + 1} sits on the FC center")

    @property
    def K(self) -> int:
        return len(self.receivers)

    @property
    def d_tx(self) -> np.ndarray:
        """TX-to-receiver-center distances (um)."""
        return np.array([distance(rx.center, self.tx) for rx in self.receivers])

    @property
    def d_fc(self) -> np.ndarray:
        """Receiver-center-to-FC-center distances (um)."""
        return np.array([distance(rx.center, self.fc.center) for rx in self.receivers])

    @property
    def rx_radii(self) -> np.ndarray:
        return np.array([rx.radius for rx in self.receivers])

    def permuted(self, order: Sequence[int]) -> "Topology":
        return Topology(self.tx, tuple(self.receivers[i] for i in order), self.fc)

    def to_dict(self) -> dict:
        return {
            "tx": self.tx.as_list(),
            "receivers": [{"center": rx.center.as_list(), "radius": rx.radius} for rx in self.receivers],
            "fc": {"center": self.fc.center.as_list(), "radius": self.fc.radius},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Topology":
        receivers = tuple(
            SphericalObserver(Vec3.of(r["center"]), float(r["radius"])) for r in data["receivers"]
        )
        fc = SphericalObserver(Vec3.of(data["fc"]["center"]), float(data["fc"]["radius"]))
        return cls(Vec3.of(data["tx"]), receivers, fc)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def is_symmetric(topo: Topology, tol: float = 1e-9) -> bool:
    """True when all TX-RX distances agree and all RX-FC distances agree (relative ``tol``)."""
    if tol < 0:
        raise ValueError("tol must be non-negative")

    def _same(values):
        ref = values[0]
        return bool(np.all(np.abs(values - ref) <= tol * np.maximum(np.abs(values), abs(ref))))

    return _same(topo.d_tx) and _same(topo.d_fc)


def build_symmetric_ring(K: int, r_rx: float = DEFAULT_R_RX, r_fc: float = DEFAULT_R_FC) -> Topology:
    """First ``K`` receivers of the six-position ring around the FC."""
    if not 1 <= K <= len(SYMMETRIC_RING):
        raise ValueError(f"K must be in 1..{len(SYMMETRIC_RING)}, got {K}")
    receivers = tuple(SphericalObserver(Vec3.of(c), r_rx) for c in SYMMETRIC_RING[:K])
    return Topology(Vec3.of(TX_ORIGIN), receivers, SphericalObserver(Vec3.of(FC_CENTER), r_fc))


def build_asymmetric(position: int, r_rx: float = DEFAULT_R_RX, r_fc: float = DEFAULT_R_FC) -> Topology:
    """Three receivers: two fixed, the third at sweep position 1..5 (1 = symmetric point)."""
    if not 1 <= position <= len(ASYMMETRIC_RX3):
        raise ValueError(f"position must be in 1..{len(ASYMMETRIC_RX3)}, got {position}")
    if position == 1:
        logger.info("asymmetric position 1 uses (2, 0.6, 0); the printed (2, 6, 0) is a typo")
    centers = ASYMMETRIC_FIXED + (ASYMMETRIC_RX3[position - 1],)
    receivers = tuple(SphericalObserver(Vec3.of(c), r_rx) for c in centers)
    return Topology(Vec3.of(TX_ORIGIN), receivers, SphericalObserver(Vec3.of(FC_CENTER), r_fc))


def build_single_link(r_rx: float = DEFAULT_R_RX, r_fc: float = DEFAULT_R_FC) -> Topology:
    """TX at the origin and one receiver at (2, 0.6, 0); the FC is carried but unused."""
    return build_symmetric_ring(1, r_rx, r_fc)
