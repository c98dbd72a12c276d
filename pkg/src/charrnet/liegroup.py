"""The Abelian Lie group of positive scalings and planar rotations.

Points are polar pairs (r, theta) with r > 0 and theta in [-pi, pi). The
group acts per point by scaling the radius and rotating the angle; means
are computed in closed form through the log/exp maps (geometric mean of
radii, circular resultant mean of angles), and distances come from the
flat line element on (log r, theta).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SizeError

__all__ = [
    "EPS_R",
    "EPS_RES",
    "ManifoldPoint",
    "TangentVector",
    "GroupElement",
    "ConvexWeights",
    "wrap_angle",
    "from_complex",
    "log_map",
    "exp_map",
    "act",
    "wfm",
    "distance",
]

# radial clamp: r = 0 is off-manifold, but transform bins can be exactly zero
EPS_R = 1e-12
# circular resultants below this magnitude have no usable mean direction
EPS_RES = 1e-9


def wrap_angle(theta):
    """Wrap angles into [-pi, pi); works on scalars and arrays."""
    return np.mod(theta + np.pi, 2.0 * np.pi) - np.pi


@dataclass(frozen=True)
class ManifoldPoint:
    """A group-manifold point; construction clamps the radius and wraps the angle.

    `degenerate` marks points produced by a mean whose circular resultant
    underflowed; such angles are conventionally zero and carry no direction
    information.
    """

    r: float
    theta: float
    degenerate: bool = False

    def __post_init__(self):
        r = float(self.r)
        theta = float(self.theta)
        if not (math.isfinite(r) and math.isfinite(theta)):
            raise ValueError("manifold point coordinates must be finite")
        object.__setattr__(self, "r", max(r, EPS_R))
        object.__setattr__(self, "theta", float(wrap_angle(theta)))


@dataclass(frozen=True)
class TangentVector:
    """Tangent-space coordinates (log r, theta)."""

    log_r: float
    theta: float

    def __post_init__(self):
        if not (math.isfinite(self.log_r) and math.isfinite(self.theta)):
            raise ValueError("tangent coordinates must be finite")


@dataclass(frozen=True)
class GroupElement:
    """A scaling rho and rotation phi acting on manifold points."""

    rho: float
    phi: float

    def __post_init__(self):
        if not (math.isfinite(self.rho) and math.isfinite(self.phi)):
            raise ValueError("group element must be finite")
        object.__setattr__(self, "rho", max(float(self.rho), EPS_R))

    def inverse(self) -> "GroupElement":
        return GroupElement(1.0 / self.rho, -self.phi)

    def compose(self, other: "GroupElement") -> "GroupElement":
        return GroupElement(self.rho * other.rho, self.phi + other.phi)


@dataclass(frozen=True)
class ConvexWeights:
    """Nonnegative weights summing to one."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise SizeError("weights must be a non-empty 1-D sequence")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1 within 1e-12")
        object.__setattr__(self, "w", w)

    def __len__(self) -> int:
        return self.w.size


def from_complex(z: complex) -> ManifoldPoint:
    """Polar coordinates of a complex sample, clamped away from the origin."""
    mag = abs(z)
    if mag < EPS_R:
        return ManifoldPoint(EPS_R, 0.0)
    return ManifoldPoint(mag, math.atan2(z.imag, z.real))


def log_map(p: ManifoldPoint) -> TangentVector:
    return TangentVector(math.log(p.r), p.theta)


def exp_map(v: TangentVector) -> ManifoldPoint:
    return ManifoldPoint(math.exp(v.log_r), v.theta)


def act(g: GroupElement, p: ManifoldPoint) -> ManifoldPoint:
    """Apply a scaling and rotation; identity element is (1, 0)."""
    return ManifoldPoint(g.rho * p.r, g.phi + p.theta)


def wfm(points, weights) -> ManifoldPoint:
    """Weighted mean on the manifold.

    Radial part is the weighted geometric mean (a plain mean in log space);
    angular part is the direction of the weighted resultant vector. A
    resultant below EPS_RES yields a degenerate-flagged point with angle 0
    rather than an error, so that batch processing stays total.
    """
    points = list(points)
    if not points:
        raise SizeError("wfm needs at least one point")
    w = weights if isinstance(weights, ConvexWeights) else ConvexWeights(np.asarray(weights))
    if len(w) != len(points):
        raise SizeError(f"{len(points)} points but {len(w)} weights")
    log_r = np.array([math.log(p.r) for p in points])
    theta = np.array([p.theta for p in points])
    mean_log_r = float(np.dot(w.w, log_r))
    s = float(np.dot(w.w, np.sin(theta)))
    c = float(np.dot(w.w, np.cos(theta)))
    if math.hypot(s, c) < EPS_RES:
        return ManifoldPoint(math.exp(mean_log_r), 0.0, degenerate=True)
    return ManifoldPoint(math.exp(mean_log_r), math.atan2(s, c))


def distance(p: ManifoldPoint, q: ManifoldPoint) -> float:
    """Manifold distance: sqrt(log-ratio^2 + geodesic angle difference^2).

    The angular term is the wrapped difference, which stays rotation
    invariant across the branch cut (the naive absolute difference of
    wrapped angles does not).
    """
    d_log = math.log(q.r / p.r)
    d_ang = float(wrap_angle(q.theta - p.theta))
    return math.hypot(d_log, d_ang)
