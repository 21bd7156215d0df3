"""Kinematic 3D Kalman tracker.

State vector order is ``[x, y, z, w, h, l, theta, theta_h, v]``: centre and
dimensions in metres, ``theta`` in ``[-pi/2, pi/2)``, a continuous heading
flag ``theta_h`` in ``[0, 1]`` and a scalar speed ``v`` in metres per frame
along the heading. Measurements observe the first eight entries.

Uncertainty is driven entirely by confidences: a new track starts with
covariance ``(1 - mu) * lambda_o * I``, the forecast adds ``(1 - mu_track) * I``
and a measurement contributes ``(1 - mu) * lambda_o * I``.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import orientation
from .ego import apply_ego_to_track, wrap_half_turn
from .errors import BehindCamera, SingularInnovation
from .geometry import CalibProjection, Cuboid3D, EgoMotion, iou_2d, project_cuboid_to_box2d, wrap_angle
from .records import Detection

STATE_DIM = 9
MEAS_DIM = 8
IX, IY, IZ, IW, IH, IL, ITHETA, IHEAD, IV = range(STATE_DIM)

H = np.eye(MEAS_DIM, STATE_DIM)
MPS_TO_MPH = 1.0 / 0.44704
MAX_CONDITION = 1e12
MIN_DIM = 1e-3


@dataclass
class TrackerConfig:
    lambda_o: float = 0.2
    k_d: float = 0.5
    k_u: float = 0.35
    k_p: float = 0.75
    k_m: float = 0.05
    frame_rate: float = 10.0

    def __post_init__(self):
        if not self.lambda_o > 0:
            raise ValueError("lambda_o must be positive")
        if not self.k_d >= 0:
            raise ValueError("k_d must be non-negative")
        for name in ("k_u", "k_p", "k_m"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not self.frame_rate > 0:
            raise ValueError("frame_rate must be positive")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class Measurement:
    b: np.ndarray
    mu: float
    box2d: object = None
    detection: Detection | None = None

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float).reshape(MEAS_DIM)

    @classmethod
    def from_detection(cls, det: Detection) -> "Measurement":
        c = det.cuboid
        tau, head = orientation.measurement_theta_split(c.theta)
        b = [c.x, c.y, c.z, c.w3, c.h3, c.l3, tau, float(head)]
        return cls(np.array(b), det.mu, det.box2d, det)


@dataclass
class TrackState:
    state: np.ndarray
    cov: np.ndarray
    mu: float
    id: int
    age: int = 0
    hits: int = 1
    coasting: bool = False
    history: list = field(default_factory=list)
    cls: str = "Car"
    # detection fused into this track in the latest frame (None while coasting)
    last_detection: Detection | None = None

    @property
    def center(self) -> np.ndarray:
        return self.state[:3].copy()

    @property
    def velocity(self) -> float:
        return float(self.state[IV])

    @property
    def yaw(self) -> float:
        """Full BEV yaw in ``[-pi, pi)`` recovered from the half-range angle and heading."""
        return orientation.measurement_theta_merge(self.state[ITHETA], self.state[IHEAD])

    def velocity_vector(self) -> np.ndarray:
        """Per-frame displacement implied by the motion model."""
        return build_F(self.state)[:3, IV] * self.state[IV]

    def cuboid(self) -> Cuboid3D:
        s = self.state
        return Cuboid3D(s[IX], s[IY], s[IZ], max(s[IW], MIN_DIM), max(s[IH], MIN_DIM),
                        max(s[IL], MIN_DIM), self.yaw)

    def to_detection(self, frame: int = 0, calib: CalibProjection | None = None) -> Detection:
        cub = self.cuboid()
        box = None
        if calib is not None:
            try:
                box = project_cuboid_to_box2d(cub, calib)
            except BehindCamera:
                box = None
        mu = min(1.0, max(0.0, self.mu))
        return Detection(cub, box, c=mu, omega=1.0, cls=self.cls, frame=frame,
                         track_id=self.id, coasting=self.coasting)

    def copy(self) -> "TrackState":
        out = copy.copy(self)
        out.state = self.state.copy()
        out.cov = self.cov.copy()
        out.history = list(self.history)
        return out


# ---------------------------------------------------------------------------
# Kalman pieces


def heading_angle(state) -> float:
    return state[ITHETA] + math.pi * orientation.round_half_up(state[IHEAD])


def build_F(state) -> np.ndarray:
    """Transition matrix: identity plus displacement ``v`` along the heading."""
    f = np.eye(STATE_DIM)
    ang = heading_angle(state)
    f[IX, IV] = math.cos(ang)
    f[IZ, IV] = -math.sin(ang)
    return f


def _symmetrize(p):
    return 0.5 * (p + p.T)


def _flip_heading_cov(p):
    # theta_h -> 1 - theta_h negates every covariance term involving theta_h
    j = np.ones(STATE_DIM)
    j[IHEAD] = -1.0
    return p * np.outer(j, j)


def initial_covariance(mu: float, cfg: TrackerConfig) -> np.ndarray:
    return np.eye(STATE_DIM) * (1.0 - mu) * cfg.lambda_o


def new_track(m: Measurement, track_id: int, cfg: TrackerConfig) -> TrackState:
    state = np.append(m.b, 0.0)
    cls = m.detection.cls if m.detection is not None else "Car"
    return TrackState(state, initial_covariance(m.mu, cfg), float(m.mu), track_id,
                      history=[state.copy()], cls=cls, last_detection=m.detection)


def forecast(track: TrackState, ego: EgoMotion | None = None) -> TrackState:
    """Advance one frame with the motion model, then move into the new camera frame."""
    out = track.copy()
    f = build_F(track.state)
    s = f @ track.state
    p = f @ track.cov @ f.T + np.eye(STATE_DIM) * (1.0 - track.mu)
    if ego is not None:
        center, theta, head = apply_ego_to_track(s[:3], s[ITHETA], ego, s[IHEAD])
        if head != s[IHEAD]:
            p = _flip_heading_cov(p)
        s[:3] = center
        s[ITHETA] = theta
        s[IHEAD] = head
    else:
        s[ITHETA], s[IHEAD], flipped = wrap_half_turn(s[ITHETA], s[IHEAD])
        if flipped:
            p = _flip_heading_cov(p)
    out.state = s
    out.cov = _symmetrize(p)
    return out


def innovation(track: TrackState, m: Measurement):
    """Residual ``b - H x`` with the yaw brought onto the track's branch."""
    r = m.b - H @ track.state
    wrapped = wrap_angle(r[ITHETA], -0.5 * math.pi, math.pi)
    shifts = round((r[ITHETA] - wrapped) / math.pi)
    head_meas = m.b[IHEAD]
    if shifts % 2:
        # the same physical yaw expressed on the other half turn has the opposite heading
        head_meas = 1.0 - head_meas
    r[ITHETA] = wrapped
    r[IHEAD] = head_meas - track.state[IHEAD]
    return r


def kalman_gain(track: TrackState, m: Measurement, cfg: TrackerConfig) -> np.ndarray:
    s = H @ track.cov @ H.T + np.eye(MEAS_DIM) * (1.0 - m.mu) * cfg.lambda_o
    if not np.all(np.isfinite(s)) or np.linalg.cond(s) > MAX_CONDITION:
        raise SingularInnovation("innovation covariance is numerically singular")
    # K = P H^T S^-1, solved as S^T K^T = H P^T
    return np.linalg.solve(s.T, H @ track.cov.T).T


def update(track: TrackState, m: Measurement, cfg: TrackerConfig) -> TrackState:
    """Fuse one associated measurement into a forecast track."""
    out = track.copy()
    k = kalman_gain(track, m, cfg)
    s = track.state + k @ innovation(track, m)
    p = (np.eye(STATE_DIM) - k @ H) @ track.cov
    s[ITHETA], s[IHEAD], flipped = wrap_half_turn(s[ITHETA], s[IHEAD])
    if flipped:
        p = _flip_heading_cov(p)
    s[IHEAD] = min(1.0, max(0.0, s[IHEAD]))
    s[IW:IL + 1] = np.maximum(s[IW:IL + 1], MIN_DIM)
    out.state = s
    out.cov = _symmetrize(p)
    out.mu = 0.5 * (track.mu + m.mu)
    return out


# ---------------------------------------------------------------------------
# association


def _greedy(candidates):
    """Pair off ``(key, track_idx, meas_idx)`` candidates in ascending key order."""
    used_t, used_m, pairs = set(), set(), []
    for _, ti, mi in sorted(candidates):
        if ti in used_t or mi in used_m:
            continue
        used_t.add(ti)
        used_m.add(mi)
        pairs.append((ti, mi))
    return pairs


def associate(tracks, measurements, cfg: TrackerConfig, calib: CalibProjection | None = None):
    """Two-stage greedy association.

    Stage one pairs by smallest 3D centre distance (at most ``k_d``); stage
    two pairs the leftovers by largest IoU between the track's projected box
    and the measured 2D box (at least ``k_u``). Ties go to the lower track id,
    then the lower measurement index.

    Returns ``(pairs, new_measurement_indices, unmatched_track_indices)``
    where pairs are ``(track_index, measurement_index)``.
    """
    cand = []
    if tracks and measurements:
        tc = np.array([t.state[:3] for t in tracks])
        mc = np.array([m.b[:3] for m in measurements])
        dist = np.sqrt(((tc[:, None, :] - mc[None, :, :]) ** 2).sum(axis=2))
        for ti, mi in zip(*np.nonzero(dist <= cfg.k_d)):
            cand.append(((float(dist[ti, mi]), tracks[ti].id, int(mi)), int(ti), int(mi)))
    pairs = _greedy(cand)

    left_t = [ti for ti in range(len(tracks)) if ti not in {p[0] for p in pairs}]
    left_m = [mi for mi in range(len(measurements)) if mi not in {p[1] for p in pairs}]
    if calib is not None and left_t and left_m:
        cand = []
        for ti in left_t:
            try:
                tbox = project_cuboid_to_box2d(tracks[ti].cuboid(), calib)
            except BehindCamera:
                continue
            for mi in left_m:
                mbox = measurements[mi].box2d
                if mbox is None:
                    continue
                ov = iou_2d(tbox, mbox)
                if ov >= cfg.k_u and ov > 0.0:
                    cand.append(((-ov, tracks[ti].id, mi), ti, mi))
        pairs += _greedy(cand)

    matched_t = {p[0] for p in pairs}
    matched_m = {p[1] for p in pairs}
    new = [mi for mi in range(len(measurements)) if mi not in matched_m]
    unmatched = [ti for ti in range(len(tracks)) if ti not in matched_t]
    return pairs, new, unmatched


# ---------------------------------------------------------------------------
# lifecycle


def _as_measurements(items):
    return [m if isinstance(m, Measurement) else Measurement.from_detection(m) for m in items]


def step(tracks, measurements, ego, cfg: TrackerConfig, next_id: int = 0,
         calib: CalibProjection | None = None):
    """One frame of forecast, association, update, birth and pruning.

    ``measurements`` may be :class:`Measurement` or :class:`Detection`
    objects. Returns ``(tracks, next_id)``.
    """
    meas = _as_measurements(measurements)
    forecasted = [forecast(t, ego) for t in tracks]
    pairs, new, unmatched = associate(forecasted, meas, cfg, calib)

    out = []
    for ti, mi in pairs:
        t = update(forecasted[ti], meas[mi], cfg)
        t.coasting = False
        t.hits += 1
        t.last_detection = meas[mi].detection
        if meas[mi].detection is not None:
            t.cls = meas[mi].detection.cls
        out.append(t)
    for ti in unmatched:
        t = forecasted[ti]
        t.mu *= cfg.k_p
        t.coasting = True
        t.last_detection = None
        out.append(t)
    for t in out:
        t.age += 1
        t.history.append(t.state.copy())
    for mi in new:
        out.append(new_track(meas[mi], next_id, cfg))
        next_id += 1
    out = [t for t in out if t.mu > cfg.k_m]
    out.sort(key=lambda t: t.id)
    return out, next_id


def forecast_n(tracks, n_f: int, ego: EgoMotion | None = None):
    """Forecast every track ``n_f`` frames ahead holding ``ego`` fixed; no updates."""
    if n_f < 0:
        raise ValueError("n_f must be non-negative")
    out = [t.copy() for t in tracks]
    for _ in range(n_f):
        out = [forecast(t, ego) for t in out]
    return out


def velocity_to_mph(v: float, frame_rate: float) -> float:
    """Convert metres per frame to miles per hour."""
    if not frame_rate > 0:
        raise ValueError("frame_rate must be positive")
    return v * frame_rate * MPS_TO_MPH


class Tracker:
    """Stateful wrapper that owns the tracks of one sequence."""

    def __init__(self, config: TrackerConfig | None = None, calib: CalibProjection | None = None):
        self.config = config or TrackerConfig()
        self.calib = calib
        self.tracks = []
        self.next_id = 0
        self.last_ego = None
        self.frames_seen = 0

    def step(self, measurements, ego: EgoMotion | None = None):
        self.tracks, self.next_id = step(self.tracks, measurements, ego, self.config,
                                         self.next_id, self.calib)
        if ego is not None:
            self.last_ego = ego
        self.frames_seen += 1
        return self.tracks

    def forecast_n(self, n_f: int, hold_ego: bool = True):
        return forecast_n(self.tracks, n_f, self.last_ego if hold_ego else None)

    def outputs(self, frame: int = 0, include_coasting: bool = False):
        return [t.to_detection(frame, self.calib) for t in self.tracks
                if include_coasting or not t.coasting]
