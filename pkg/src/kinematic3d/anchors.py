"""2D-3D anchor templates and regression-target encoding."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import orientation
from .errors import InsufficientData, NonPositiveDepth, ParseError
from .geometry import Box2D, CalibProjection, Cuboid3D, backproject, iou_2d, project_center

DEFAULT_FG_IOU = 0.5
DEFAULT_N_ANCHORS = 36
CLUSTER_ITERATIONS = 20


@dataclass(frozen=True)
class Anchor:
    w2: float
    h2: float
    z: float
    w3: float
    h3: float
    l3: float
    theta0: float = orientation.DEFAULT_ANCHOR_THETAS[0]
    theta1: float = orientation.DEFAULT_ANCHOR_THETAS[1]

    def __post_init__(self):
        if not (self.w2 > 0 and self.h2 > 0 and self.z > 0):
            raise ValueError("anchor 2D size and depth must be positive")
        if not (self.w3 > 0 and self.h3 > 0 and self.l3 > 0):
            raise ValueError("anchor 3D size must be positive")

    @property
    def thetas(self):
        return (self.theta0, self.theta1)


@dataclass(frozen=True)
class GroundTruthBox:
    """One labelled object; ``frame`` indexes the sequence it belongs to."""

    box2d: Box2D
    cuboid: Cuboid3D
    cls: str = "Car"
    occlusion: int = 0
    truncation: float = 0.0
    frame: int = 0
    track_id: int | None = None


@dataclass
class RegressionTargets:
    t2d: np.ndarray
    t3d: np.ndarray
    theta_a: float
    theta_h: float

    def __post_init__(self):
        self.t2d = np.asarray(self.t2d, dtype=float).reshape(4)
        self.t3d = np.asarray(self.t3d, dtype=float).reshape(7)


def encode_targets(gt: GroundTruthBox, anchor: Anchor, i: float, j: float,
                   calib: CalibProjection) -> RegressionTargets:
    """Regression targets of ``gt`` relative to ``anchor`` placed at pixel ``(i, j)``.

    The 2D offsets use the box centre; the projected 3D centre comes from
    ``calib``.
    """
    cx, cy = gt.box2d.center
    t2d = [
        (cx - i) / anchor.w2,
        (cy - j) / anchor.h2,
        math.log(gt.box2d.w2 / anchor.w2),
        math.log(gt.box2d.h2 / anchor.h2),
    ]
    u, v, z = project_center(gt.cuboid.center, calib)
    dec = orientation.decompose(gt.cuboid.theta)
    t3d = [
        (u - i) / anchor.w2,
        (v - j) / anchor.h2,
        z - anchor.z,
        math.log(gt.cuboid.w3 / anchor.w3),
        math.log(gt.cuboid.h3 / anchor.h3),
        math.log(gt.cuboid.l3 / anchor.l3),
        orientation.encode_offset(dec, anchor.thetas),
    ]
    return RegressionTargets(np.array(t2d), np.array(t3d), dec.theta_a, dec.theta_h)


def decode_targets(t: RegressionTargets, anchor: Anchor, i: float, j: float,
                   calib: CalibProjection):
    """Apply targets to an anchor; returns ``(Box2D, Cuboid3D)``."""
    tx, ty, tw, th = t.t2d
    w2 = anchor.w2 * math.exp(tw)
    h2 = anchor.h2 * math.exp(th)
    cx = i + tx * anchor.w2
    cy = j + ty * anchor.h2
    box = Box2D(cx - 0.5 * w2, cy - 0.5 * h2, w2, h2)

    tu, tv, tz, tw3, th3, tl3, t_theta = t.t3d
    z = tz + anchor.z
    if not z > 0:
        raise NonPositiveDepth(f"decoded depth {z} is not positive")
    u = i + tu * anchor.w2
    v = j + tv * anchor.h2
    center = backproject(u, v, z, calib)
    theta = orientation.recompose(t.theta_a, t.theta_h, t_theta, anchor.thetas)
    cuboid = Cuboid3D(
        *center,
        w3=anchor.w3 * math.exp(tw3),
        h3=anchor.h3 * math.exp(th3),
        l3=anchor.l3 * math.exp(tl3),
        theta=theta,
    )
    return box, cuboid


# ---------------------------------------------------------------------------
# clustering


def _size_iou(w_a, h_a, w_b, h_b):
    """IoU of two boxes sharing a centre (vectorised over the second pair)."""
    inter = np.minimum(w_a, w_b) * np.minimum(h_a, h_b)
    return inter / (w_a * h_a + w_b * h_b - inter)


def _assign(sizes, templates):
    ious = _size_iou(sizes[:, None, 0], sizes[:, None, 1], templates[None, :, 0], templates[None, :, 1])
    return np.argmax(ious, axis=1)


def cluster_anchors(gts, n_a: int = DEFAULT_N_ANCHORS, calib: CalibProjection | None = None,
                    iterations: int = CLUSTER_ITERATIONS):
    """Cluster ground truths by 2D size and average every anchor parameter per cluster.

    Templates start at 2D-size quantiles; assignment is by the largest
    centre-aligned 2D IoU. Projected depth uses ``calib`` when given,
    otherwise the camera-frame ``z``.
    """
    gts = list(gts)
    if len(gts) < n_a:
        raise InsufficientData(f"need at least {n_a} ground truths, got {len(gts)}")
    if n_a < 1:
        raise ValueError("n_a must be positive")

    sizes = np.array([[g.box2d.w2, g.box2d.h2] for g in gts])
    order = np.argsort(np.sqrt(sizes[:, 0] * sizes[:, 1]), kind="stable")
    picks = order[np.round(np.linspace(0, len(gts) - 1, n_a)).astype(int)]
    templates = sizes[picks].astype(float)

    labels = _assign(sizes, templates)
    for _ in range(iterations):
        new = templates.copy()
        for k in range(n_a):
            members = labels == k
            if members.any():
                new[k] = sizes[members].mean(axis=0)
        templates = new
        new_labels = _assign(sizes, templates)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels

    depths = np.array([
        project_center(g.cuboid.center, calib)[2] if calib is not None else g.cuboid.z for g in gts
    ])
    dims = np.array([[g.cuboid.w3, g.cuboid.h3, g.cuboid.l3] for g in gts])
    decs = [orientation.decompose(g.cuboid.theta) for g in gts]
    axes = np.array([d.theta_a for d in decs])
    restricted = np.array([d.theta_r for d in decs])

    anchors = []
    for k in range(n_a):
        members = labels == k
        if not members.any():
            # empty cluster keeps its template size and borrows global means
            members = np.ones(len(gts), dtype=bool)
            w2, h2 = templates[k]
        else:
            w2, h2 = sizes[members].mean(axis=0)
        thetas = []
        for axis in (0, 1):
            sel = members & (axes == axis)
            thetas.append(float(restricted[sel].mean()) if sel.any()
                          else orientation.DEFAULT_ANCHOR_THETAS[axis])
        w3, h3, l3 = dims[members].mean(axis=0)
        anchors.append(Anchor(float(w2), float(h2), float(depths[members].mean()),
                              float(w3), float(h3), float(l3), thetas[0], thetas[1]))
    return anchors


def match_foreground(pred: Box2D, gts, k: float = DEFAULT_FG_IOU):
    """Index of the best-overlapping ground truth if its IoU is at least ``k``, else ``None``."""
    best, best_iou = None, -1.0
    for idx, gt in enumerate(gts):
        box = gt.box2d if isinstance(gt, GroundTruthBox) else gt
        ov = iou_2d(pred, box)
        if ov > best_iou:
            best, best_iou = idx, ov
    if best is None or best_iou < k:
        return None
    return best


ANCHOR_FIELDS = ("w2", "h2", "z", "w3", "h3", "l3", "theta0", "theta1")


def format_anchor_table(anchors) -> str:
    lines = [" ".join(repr(float(getattr(a, f))) for f in ANCHOR_FIELDS) for a in anchors]
    return "\n".join(lines) + ("\n" if lines else "")


def parse_anchor_table(text: str):
    anchors = []
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != len(ANCHOR_FIELDS):
            raise ParseError(f"expected {len(ANCHOR_FIELDS)} fields, got {len(parts)}", line=n)
        try:
            values = [float(p) for p in parts]
        except ValueError as exc:
            raise ParseError(str(exc), line=n) from None
        try:
            anchors.append(Anchor(*values))
        except ValueError as exc:
            raise ParseError(str(exc), line=n) from None
    return anchors
