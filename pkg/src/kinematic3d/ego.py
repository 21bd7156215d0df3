"""Ego-motion pooling and its application to tracked boxes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import EgoMotion, wrap_angle

HALF_PI = 0.5 * math.pi


@dataclass
class EgoMaps:
    """Dense per-cell ego-motion predictions.

    ``gamma_maps`` and ``rho_maps`` have shape (3, w, h); ``conf_map`` holds
    the (w, h) pre-softmax confidence logits.
    """

    gamma_maps: np.ndarray
    rho_maps: np.ndarray
    conf_map: np.ndarray

    def __post_init__(self):
        self.gamma_maps = np.asarray(self.gamma_maps, dtype=float)
        self.rho_maps = np.asarray(self.rho_maps, dtype=float)
        self.conf_map = np.asarray(self.conf_map, dtype=float)
        shape = self.conf_map.shape
        if self.conf_map.size == 0:
            raise ValueError("ego maps are empty")
        if self.gamma_maps.shape != (3, *shape) or self.rho_maps.shape != (3, *shape):
            raise ValueError("translation/rotation maps must be (3, w, h) matching the confidence map")
        for arr in (self.gamma_maps, self.rho_maps, self.conf_map):
            if not np.all(np.isfinite(arr)):
                raise ValueError("ego maps contain non-finite values")


def spatial_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def pool_ego(maps: EgoMaps) -> EgoMotion:
    """Confidence-weighted sum of each translation/rotation channel."""
    weights = spatial_softmax(maps.conf_map)
    gamma = np.tensordot(maps.gamma_maps, weights, axes=([1, 2], [0, 1]))
    rho = np.tensordot(maps.rho_maps, weights, axes=([1, 2], [0, 1]))
    return EgoMotion(gamma, rho)


def wrap_half_turn(theta: float, heading: float):
    """Bring ``theta`` into ``[-pi/2, pi/2)``, toggling ``heading`` once per odd pi shift."""
    wrapped = wrap_angle(theta, -HALF_PI, math.pi)
    shifts = round((theta - wrapped) / math.pi)
    if shifts % 2:
        heading = 1.0 - heading
    return wrapped, heading, bool(shifts % 2)


def apply_ego_to_point(p, ego: EgoMotion) -> np.ndarray:
    return ego.rotation @ np.asarray(p, dtype=float).reshape(3) + ego.gamma


def apply_ego_to_track(track_center, track_theta: float, ego: EgoMotion, heading: float = 0.0):
    """Move a track into the next camera frame.

    Returns ``(center, theta, heading)`` where ``theta`` is re-wrapped into
    ``[-pi/2, pi/2)`` and ``heading`` is toggled if that needed an odd number
    of half turns. Only the yaw component of the rotation changes ``theta``.
    """
    center = apply_ego_to_point(track_center, ego)
    theta, heading, _ = wrap_half_turn(track_theta + ego.rho[1], heading)
    return center, theta, heading
