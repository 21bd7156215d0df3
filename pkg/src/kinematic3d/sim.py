"""Synthetic driving scenes with known ground truth.

Objects move ``v`` metres per frame along their heading, then the whole
scene is carried into the next camera frame by the ego-motion, using the
same conventions as the tracker. Detections are ground truth plus i.i.d.
Gaussian noise; the 3D confidence of each detection decays with the size
of the centre noise that was injected into it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .anchors import GroundTruthBox
from .ego import apply_ego_to_point
from .errors import BehindCamera
from .geometry import CalibProjection, Cuboid3D, EgoMotion, cuboid_corners, project_cuboid_to_box2d, wrap_angle
from .records import Detection, FrameRecord

# left colour camera of the KITTI rig
KITTI_P2 = np.array([
    [721.5377, 0.0, 609.5593, 44.85728],
    [0.0, 721.5377, 172.854, 0.2163791],
    [0.0, 0.0, 1.0, 0.002745884],
])


def kitti_calib() -> CalibProjection:
    return CalibProjection(KITTI_P2)


@dataclass
class ScenarioSpec:
    n_objects: int = 20
    n_frames: int = 40
    seed: int = 0
    sigma_center: float = 0.5
    sigma_dims: float = 0.0
    sigma_yaw: float = 0.0
    speed_range: tuple = (0.2, 1.5)
    x_range: tuple = (-15.0, 15.0)
    z_range: tuple = (15.0, 60.0)
    y_center: float = 0.8
    dims_mean: tuple = (1.6, 1.5, 3.9)
    dims_spread: float = 0.1
    # per-frame ego-motion; a single 3-vector is repeated for every frame
    ego_gamma: tuple = (0.0, 0.0, 0.0)
    ego_rho: tuple = (0.0, 0.0, 0.0)
    c_range: tuple = (0.5, 1.0)
    p_miss: float = 0.0
    min_depth: float = 1.0

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError("n_frames must be at least 1")
        if self.n_objects < 0:
            raise ValueError("n_objects must be non-negative")
        if self.sigma_center < 0 or self.sigma_dims < 0 or self.sigma_yaw < 0:
            raise ValueError("noise levels must be non-negative")

    def ego_for(self, t: int) -> EgoMotion:
        g = np.asarray(self.ego_gamma, dtype=float)
        r = np.asarray(self.ego_rho, dtype=float)
        if g.ndim == 2:
            g = g[min(t, len(g) - 1)]
        if r.ndim == 2:
            r = r[min(t, len(r) - 1)]
        return EgoMotion(g, r)


@dataclass
class Scenario:
    spec: ScenarioSpec
    calib: CalibProjection
    frames: list = field(default_factory=list)
    speeds: list = field(default_factory=list)

    @property
    def ground_truth(self):
        return [f.ground_truth for f in self.frames]

    @property
    def detections(self):
        return [f.detections for f in self.frames]

    def gt_velocity(self, gt: GroundTruthBox) -> np.ndarray:
        """True per-frame displacement of ``gt`` expressed in its own frame."""
        th = gt.cuboid.theta
        return self.speeds[gt.track_id] * np.array([math.cos(th), 0.0, -math.sin(th)])


@dataclass
class _Object:
    pos: np.ndarray
    dims: np.ndarray
    theta: float
    speed: float

    def heading(self):
        return np.array([math.cos(self.theta), 0.0, -math.sin(self.theta)])


def _visible(c: Cuboid3D, min_depth: float) -> bool:
    return bool(np.all(cuboid_corners(c)[:, 2] >= min_depth))


def confidence_from_noise(noise, sigma: float) -> float:
    """``exp(-(|noise| / sigma)^2 / 2)``; exactly 1 when there is no noise model."""
    if sigma <= 0:
        return 1.0
    r = float(np.linalg.norm(noise)) / sigma
    return math.exp(-0.5 * r * r)


def simulate(spec: ScenarioSpec, calib: CalibProjection | None = None) -> Scenario:
    """Generate ground truth and noisy detections for every frame of ``spec``."""
    calib = calib or kitti_calib()
    rng = np.random.default_rng(spec.seed)

    objects = []
    for _ in range(spec.n_objects):
        pos = np.array([rng.uniform(*spec.x_range), spec.y_center, rng.uniform(*spec.z_range)])
        dims = np.asarray(spec.dims_mean) * (1.0 + spec.dims_spread * rng.uniform(-1, 1, 3))
        theta = rng.uniform(-math.pi, math.pi)
        speed = rng.uniform(*spec.speed_range)
        objects.append(_Object(pos, dims, theta, speed))

    scenario = Scenario(spec, calib, speeds=[ob.speed for ob in objects])
    for t in range(spec.n_frames):
        ego = spec.ego_for(t) if t > 0 else EgoMotion.identity()
        if t > 0:
            for ob in objects:
                moved = ob.pos + ob.speed * ob.heading()
                ob.pos = apply_ego_to_point(moved, ego)
                ob.theta = wrap_angle(ob.theta + ego.rho[1])

        gts, dets = [], []
        for idx, ob in enumerate(objects):
            cub = Cuboid3D(*ob.pos, *ob.dims, theta=ob.theta)
            center_noise = rng.normal(0.0, 1.0, 3) * spec.sigma_center
            dim_noise = rng.normal(0.0, 1.0, 3) * spec.sigma_dims
            yaw_noise = rng.normal() * spec.sigma_yaw
            c = rng.uniform(*spec.c_range)
            missed = rng.uniform() < spec.p_miss
            if not _visible(cub, spec.min_depth):
                continue
            box = project_cuboid_to_box2d(cub, calib)
            gts.append(GroundTruthBox(box, cub, frame=t, track_id=idx))
            if missed:
                continue
            noisy = Cuboid3D(*(ob.pos + center_noise), *np.maximum(ob.dims + dim_noise, 0.1),
                             theta=ob.theta + yaw_noise)
            try:
                nbox = project_cuboid_to_box2d(noisy, calib)
            except BehindCamera:
                continue
            omega = confidence_from_noise(center_noise, spec.sigma_center)
            dets.append(Detection(noisy, nbox, c=c, omega=omega, frame=t, track_id=idx))
        scenario.frames.append(FrameRecord(t, dets, ego=ego, ego_gt=ego, ground_truth=gts))
    return scenario
