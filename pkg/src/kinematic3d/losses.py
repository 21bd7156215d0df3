"""Detection loss terms, the self-balancing confidence loss, and score fusion.

These are plain scalar functions used for verification and for scoring
externally produced detections. Nothing here is differentiated
automatically.
"""

from __future__ import annotations

import math
import warnings
from collections import deque

import numpy as np

from .errors import RangeError, ZeroIoUWarning
from .geometry import Box2D, iou_2d, wrap_angle

LOG_FLOOR = 1e-12
DEFAULT_LAMBDA_A = 0.35
DEFAULT_LAMBDA_R = 40.0
DEFAULT_N_L = 100


def _safe_log(x: float) -> float:
    return math.log(max(float(x), LOG_FLOOR))


def cross_entropy(class_probs, gt_class: int) -> float:
    """Negative log of the softmax probability assigned to ``gt_class``."""
    return -_safe_log(np.asarray(class_probs, dtype=float)[gt_class])


def binary_cross_entropy(p, target) -> float:
    """Summed BCE between probabilities ``p`` and binary targets."""
    p = np.clip(np.asarray(p, dtype=float), LOG_FLOOR, 1.0 - LOG_FLOOR)
    t = np.asarray(target, dtype=float)
    return float(-np.sum(t * np.log(p) + (1.0 - t) * np.log(1.0 - p)))


def loss_2d(pred: Box2D, gt: Box2D | None, class_probs, gt_class: int) -> float:
    """-log IoU for foreground boxes plus classification cross-entropy.

    ``gt_class == 0`` is background, which contributes cross-entropy only.
    A foreground box with zero overlap triggers :class:`ZeroIoUWarning` and
    its log term is clamped at ``LOG_FLOOR``.
    """
    ce = cross_entropy(class_probs, gt_class)
    if gt_class == 0:
        return ce
    ov = iou_2d(pred, gt)
    if ov <= 0.0:
        warnings.warn("foreground box has zero IoU; clamping log term", ZeroIoUWarning, stacklevel=2)
    return -_safe_log(ov) + ce


def loss_3d(t_pred, t_gt, lambda_a: float = DEFAULT_LAMBDA_A) -> float:
    """L1 over the seven 3D targets plus ``lambda_a`` times BCE over axis and heading.

    ``t_pred.theta_a``/``theta_h`` are probabilities (after the sigmoid).
    """
    l1 = float(np.sum(np.abs(np.asarray(t_pred.t3d) - np.asarray(t_gt.t3d))))
    bce = binary_cross_entropy([t_pred.theta_a, t_pred.theta_h], [t_gt.theta_a, t_gt.theta_h])
    return l1 + lambda_a * bce


def self_balancing_loss(l2d: float, l3d: float, omega: float, lambda_l: float) -> float:
    if not 0.0 <= omega <= 1.0:
        raise RangeError(f"omega={omega} outside [0, 1]")
    return l2d + omega * l3d + lambda_l * (1.0 - omega)


def self_balancing_grad_omega(l3d: float, lambda_l: float) -> float:
    """Closed-form derivative of :func:`self_balancing_loss` with respect to omega."""
    return l3d - lambda_l


def fuse_score(c: float, omega: float) -> float:
    """Fused box rating ``c * omega``."""
    for name, val in (("c", c), ("omega", omega)):
        if not 0.0 <= val <= 1.0:
            raise RangeError(f"{name}={val} outside [0, 1]")
    return c * omega


def ego_loss(gamma, rho, gamma_gt, rho_gt, lambda_r: float = DEFAULT_LAMBDA_R) -> float:
    """L1 translation error plus ``lambda_r`` times wrapped L1 rotation error."""
    t_err = np.sum(np.abs(np.asarray(gamma, dtype=float) - np.asarray(gamma_gt, dtype=float)))
    r_err = sum(abs(wrap_angle(a - b)) for a, b in zip(np.asarray(rho, dtype=float),
                                                        np.asarray(rho_gt, dtype=float)))
    return float(t_err + lambda_r * r_err)


class RollingMean:
    """Mean of the ``n_l`` most recent values pushed."""

    def __init__(self, n_l: int = DEFAULT_N_L):
        if n_l < 1:
            raise ValueError("window must hold at least one value")
        self.n_l = n_l
        self._window = deque(maxlen=n_l)

    def push(self, value: float) -> float:
        self._window.append(float(value))
        return self.mean

    @property
    def window(self):
        return tuple(self._window)

    @property
    def mean(self) -> float:
        if not self._window:
            return 0.0
        return float(np.mean(self._window))

    def __len__(self):
        return len(self._window)
