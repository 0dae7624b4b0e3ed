"""Compact base space (unit circle) and its rotation group.

The circle with a constant-speed rotation is the simplest compact metric
space carrying a genuine group of continuous mappings; the module boundary
(point, flow, metric, embedding norm) is the seam where richer base spaces
(tori, hulls of almost-periodic forcings) would plug in.
"""

import math
from dataclasses import dataclass

import numpy as np

from .core import TimeGrid
from .errors import DomainError
from .frac_kernel import FracParams, build_weights

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class BasePoint:
    """Point on the unit circle, stored as an angle canonicalized to [0, 2*pi)."""

    angle: float

    def __post_init__(self):
        object.__setattr__(self, "angle", float(self.angle) % TWO_PI)


@dataclass(frozen=True)
class DrivingSystem:
    """Rotation flow with angular speed omega.

    embed_norm is the norm value assigned to every base point through the
    unit-circle embedding into the plane; it is constant, which is what
    makes the kernel-weighted orbit integral trivially bounded.
    """

    omega: float
    embed_norm: float = 1.0

    def flow(self, t, p: BasePoint) -> BasePoint:
        """Rotate p by omega * t; the group law and invertibility
        flow(-t, flow(t, p)) = p hold exactly modulo 2*pi."""
        return BasePoint(p.angle + self.omega * float(t))

    def orbit_angles(self, p: BasePoint, times):
        return (p.angle + self.omega * np.asarray(times, dtype=float)) % TWO_PI


def dist(p: BasePoint, q: BasePoint) -> float:
    """Arc-length metric min(|d|, 2*pi - |d|); diameter pi."""
    d = abs(p.angle - q.angle)
    return min(d, TWO_PI - d)


DIAMETER = math.pi


def assumption2_bound(sys: DrivingSystem, p: FracParams, t, point: BasePoint, steps=512):
    """Kernel-weighted squared-norm integral along the orbit through point.

    Evaluates int_0^t a(t,s) ||orbit(s)||^2 ds with product-integration
    weights and the embedding norm sampled at cell left endpoints. With the
    constant circle embedding this reduces to embed_norm^2 * kernel_mass(t)
    and is bounded by embed_norm^2 * varrho^(-alpha) for every t.
    """
    t = float(t)
    if t < 0:
        raise DomainError("time must be nonnegative")
    if t == 0.0:
        return 0.0
    grid = TimeGrid(horizon=t, dt=t / steps)
    w = build_weights(p, grid)
    angles = sys.orbit_angles(point, grid.times[:-1])
    norms_sq = np.full_like(angles, sys.embed_norm**2)
    return float(np.dot(w.row(grid.n), norms_sq))


def assumption2_sup(sys: DrivingSystem, p: FracParams) -> float:
    """The constant M dominating the orbit integral: sup-norm^2 * varrho^(-alpha)."""
    return sys.embed_norm**2 * p.varrho ** (-p.alpha)
