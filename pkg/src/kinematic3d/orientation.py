"""Yaw encodings: axis/heading/offset decomposition and the bin baseline.

The axis flag ``theta_a`` is 1 when the object lies closer to the horizontal
(camera X) axis and 0 when it lies closer to the vertical (camera Z) axis.
``theta_h`` records whether the restricted-range angle was shifted by pi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import RangeError
from .geometry import TWO_PI, wrap_angle

PI = math.pi
HALF_PI = 0.5 * math.pi

# |sin| and |cos| at odd multiples of pi/4 differ by ~1e-16 in floating point;
# anything closer than this is treated as an exact tie (which goes to axis 0).
AXIS_TIE_TOL = 1e-12
HEADING_EQ_TOL = 1e-12

# restricted yaw range per axis flag, [low, high)
AXIS_RANGES = {0: (-PI, 0.0), 1: (-HALF_PI, HALF_PI)}
DEFAULT_ANCHOR_THETAS = (-HALF_PI, 0.0)


@dataclass(frozen=True)
class OrientationDecomp:
    theta_a: int
    theta_h: int
    theta_r: float

    def __post_init__(self):
        lo, hi = AXIS_RANGES[self.theta_a]
        if not (lo <= self.theta_r < hi):
            raise RangeError(f"theta_r={self.theta_r} outside [{lo}, {hi}) for axis {self.theta_a}")


@dataclass(frozen=True)
class BinDecomp:
    bin_index: int
    offset: float


def _check_range(theta: float) -> None:
    if not (-PI <= theta < PI):
        raise RangeError(f"yaw {theta} is outside [-pi, pi)")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def axis_of(theta: float) -> int:
    return 1 if abs(math.cos(theta)) - abs(math.sin(theta)) > AXIS_TIE_TOL else 0


def decompose(theta: float) -> OrientationDecomp:
    """Split a BEV yaw in ``[-pi, pi)`` into axis, heading and restricted yaw."""
    _check_range(theta)
    axis = axis_of(theta)
    lo, hi = AXIS_RANGES[axis]
    theta_r = theta
    while theta_r >= hi:
        theta_r -= PI
    while theta_r < lo:
        theta_r += PI
    heading = 0 if abs(theta - theta_r) <= HEADING_EQ_TOL else 1
    return OrientationDecomp(axis, heading, theta_r)


def encode_offset(decomp: OrientationDecomp, anchor_thetas=DEFAULT_ANCHOR_THETAS) -> float:
    return decomp.theta_r - anchor_thetas[decomp.theta_a]


def recompose(theta_a: float, theta_h: float, t_theta_r: float, anchor_thetas=DEFAULT_ANCHOR_THETAS) -> float:
    """Rebuild a yaw from (possibly soft) axis/heading scores and an offset.

    Both scores are rounded; the result is wrapped into ``[-pi, pi)``.
    """
    axis = min(1, max(0, round_half_up(theta_a)))
    flip = round_half_up(theta_h)
    return wrap_angle(anchor_thetas[axis] + flip * PI + t_theta_r)


def bin_centers(n_bins: int):
    return [TWO_PI * k / n_bins for k in range(n_bins)]


def bin_decompose(theta: float, n_bins: int) -> BinDecomp:
    """Nearest uniformly spaced bin over ``[0, 2pi)`` plus a wrapped offset."""
    if n_bins < 2:
        raise RangeError("n_bins must be at least 2")
    width = TWO_PI / n_bins
    k = round_half_up(wrap_angle(theta, 0.0) / width) % n_bins
    return BinDecomp(k, wrap_angle(theta - k * width))


def bin_recompose(decomp: BinDecomp, n_bins: int) -> float:
    return wrap_angle(TWO_PI * decomp.bin_index / n_bins + decomp.offset)


def measurement_theta_split(theta: float):
    """Map a yaw in ``[-pi, pi)`` to ``(tau_theta in [-pi/2, pi/2), heading flag)``."""
    _check_range(theta)
    if theta >= HALF_PI:
        return theta - PI, 1
    if theta < -HALF_PI:
        return theta + PI, 1
    return theta, 0


def measurement_theta_merge(tau_theta: float, theta_h: float) -> float:
    return wrap_angle(tau_theta + PI * round_half_up(theta_h))
