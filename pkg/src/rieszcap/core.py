"""Scalar primitives shared by the rest of the package."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

INF = math.inf


@dataclass(frozen=True)
class RieszParams:
    """Exponent ``p``, target dimension ``d`` and ambient dimension ``n``."""

    p: float
    d: float
    n: int

    def __post_init__(self):
        if not self.p > 0:
            raise ValueError(f"p must be positive, got {self.p}")
        if not self.d > 0:
            raise ValueError(f"d must be positive, got {self.d}")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if float(self.d).is_integer() and self.n < self.d:
            raise ValueError(f"integer d={self.d} exceeds ambient n={self.n}")

    @property
    def subcritical(self) -> bool:
        return self.p < self.d


def riesz_kernel(x, y, p: float) -> float:
    """|x - y|^(-p); coincident points give ``inf`` rather than an error."""
    if not p > 0:
        raise ValueError(f"p must be positive, got {p}")
    dist = float(np.linalg.norm(np.subtract(np.atleast_1d(x), np.atleast_1d(y), dtype=float)))
    if dist == 0.0:
        return INF
    return dist ** (-p)


def gamma(x: float) -> float:
    """Gamma function on the positive reals."""
    x = float(x)
    if not x > 0:
        raise ValueError(f"gamma is only defined here for x > 0, got {x}")
    return math.gamma(x)


def unit_sphere_area(d: float) -> float:
    """Surface area 2 pi^(d/2) / Gamma(d/2) of the unit sphere in R^d.

    Real ``d`` is accepted; ``unit_sphere_area(2) == 2*pi`` is the circle.
    """
    if not d > 0:
        raise ValueError(f"d must be positive, got {d}")
    return 2.0 * math.pi ** (d / 2.0) / gamma(d / 2.0)


def unit_ball_volume(d: float) -> float:
    """Volume pi^(d/2) / Gamma(d/2 + 1) of the unit ball in R^d."""
    if not d > 0:
        raise ValueError(f"d must be positive, got {d}")
    return math.pi ** (d / 2.0) / gamma(d / 2.0 + 1.0)
