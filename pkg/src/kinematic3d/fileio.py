"""Text formats: KITTI labels/calib/oxts, detection and ego files, track dumps, config.

Every reader either returns parsed values or raises :class:`ParseError`
(:class:`UnitError` for non-finite numbers, :class:`RangeError` for scores
outside ``[0, 1]``). Line and column numbers in errors are 1-based.

Detection lines::

    frame class c [omega] left top right bottom h w l x y z ry

A 2D box of ``-1 -1 -1 -1`` means "not available". Ego lines::

    frame gx gy gz rx ry rz

where the motion at ``frame`` carries camera ``frame - 1`` coordinates into
camera ``frame``. Track dump lines::

    frame id x y z w h l theta theta_h v mu mph coasting
"""

from __future__ import annotations

import dataclasses
import math
import os
from pathlib import Path

import numpy as np

from .anchors import GroundTruthBox
from .errors import ParseError, RangeError, UnitError
from .geometry import Box2D, CalibProjection, Cuboid3D, EgoMotion, rot_x, rot_y, rot_z, wrap_angle
from .records import Detection, FrameRecord

EARTH_RADIUS = 6378137.0
OXTS_FIELDS = 30
LABEL_FIELDS = (15, 16)
NO_BOX = (-1.0, -1.0, -1.0, -1.0)
# nominal IMU (x fwd, y left, z up) to camera (x right, y down, z fwd) rotation
IMU_TO_CAM_NOMINAL = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])


# ---------------------------------------------------------------------------
# field helpers


def _float(tok: str, line=None, column=None, path=None) -> float:
    try:
        val = float(tok)
    except ValueError:
        raise ParseError(f"expected a number, got {tok[:40]!r}", line, column, path) from None
    if not math.isfinite(val):
        raise UnitError(f"non-finite value {tok[:40]!r}", line, column, path)
    return val


def _int(tok: str, line=None, column=None, path=None) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"expected an integer, got {tok[:40]!r}", line, column, path) from None


def _floats(tokens, line=None, first_column=1, path=None):
    return [_float(t, line, first_column + k, path) for k, t in enumerate(tokens)]


def _read_text(path) -> str:
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"not UTF-8 text ({exc.reason})", path=path) from None


def _lines(text: str):
    for n, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped and not stripped.startswith("#"):
            yield n, stripped.split()


# ---------------------------------------------------------------------------
# KITTI labels


def parse_kitti_label_line(line: str, frame: int = 0, lineno=None, path=None):
    """One object label, or ``None`` for ``DontCare`` regions.

    ``location`` is taken as the cuboid centre unchanged.
    """
    parts = line.split()
    if len(parts) not in LABEL_FIELDS:
        raise ParseError(f"expected 15 or 16 fields, got {len(parts)}", lineno, None, path)
    cls = parts[0]
    if cls == "DontCare":
        return None
    trunc = _float(parts[1], lineno, 2, path)
    occ = _int(parts[2], lineno, 3, path)
    left, top, right, bottom = _floats(parts[4:8], lineno, 5, path)
    h, w, l = _floats(parts[8:11], lineno, 9, path)
    x, y, z = _floats(parts[11:14], lineno, 12, path)
    ry = _float(parts[14], lineno, 15, path)
    _float(parts[3], lineno, 4, path)
    if len(parts) == 16:
        _float(parts[15], lineno, 16, path)
    try:
        box = Box2D.from_corners(left, top, right, bottom)
        cub = Cuboid3D(x, y, z, w, h, l, ry)
    except ValueError as exc:
        raise ParseError(str(exc), lineno, None, path) from None
    return GroundTruthBox(box, cub, cls=cls, occlusion=occ, truncation=trunc, frame=frame)


def parse_kitti_labels(text: str, frame: int = 0, path=None):
    out = []
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        gt = parse_kitti_label_line(line, frame, n, path)
        if gt is not None:
            out.append(gt)
    return out


def read_kitti_labels(path, frame: int | None = None):
    """Labels of one KITTI label file; ``frame`` defaults to the numeric file stem."""
    if frame is None:
        stem = Path(path).stem
        frame = int(stem) if stem.isdigit() else 0
    return parse_kitti_labels(_read_text(path), frame, path)


def format_kitti_label(gt: GroundTruthBox) -> str:
    c, b = gt.cuboid, gt.box2d
    alpha = wrap_angle(c.theta - math.atan2(c.x, c.z))
    vals = [gt.truncation, gt.occlusion, alpha, b.x, b.y, b.right, b.bottom,
            c.h3, c.w3, c.l3, c.x, c.y, c.z, c.theta]
    return " ".join([gt.cls, f"{vals[0]:.2f}", str(int(vals[1]))] + [f"{v:.6f}" for v in vals[2:]])


def read_label_dir(path):
    """All labels of a directory of per-frame ``NNNNNN.txt`` files."""
    out = []
    for name in sorted(os.listdir(path)):
        if name.endswith(".txt") and name[:-4].isdigit():
            out += read_kitti_labels(Path(path) / name)
    return out


# ---------------------------------------------------------------------------
# KITTI calibration


def parse_kitti_calib(text: str, path=None) -> dict:
    """Named matrices of a calibration file (3x4 for 12 values, 3x3 for 9)."""
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        key, sep, rest = line.partition(":")
        key = key.strip()
        if not sep or not key:
            raise ParseError("expected 'name: values'", n, None, path)
        if key == "calib_time":
            continue
        vals = _floats(rest.split(), n, 2, path)
        if len(vals) == 12:
            out[key] = np.array(vals).reshape(3, 4)
        elif len(vals) == 9:
            out[key] = np.array(vals).reshape(3, 3)
        else:
            out[key] = np.array(vals)
    return out


def read_kitti_calib_matrices(path) -> dict:
    return parse_kitti_calib(_read_text(path), path)


def calib_from_matrices(mats: dict, key: str = "P2", path=None) -> CalibProjection:
    if key not in mats:
        raise ParseError(f"calibration has no {key!r} entry", path=path)
    try:
        return CalibProjection(np.asarray(mats[key]).reshape(3, 4))
    except ValueError as exc:
        raise ParseError(f"{key}: {exc}", path=path) from None


def read_kitti_calib(path, key: str = "P2") -> CalibProjection:
    return calib_from_matrices(read_kitti_calib_matrices(path), key, path)


def format_kitti_calib(calib: CalibProjection, key: str = "P2") -> str:
    return f"{key}: " + " ".join(f"{v:.12e}" for v in calib.upsilon.reshape(-1)) + "\n"


def _homogeneous(m) -> np.ndarray:
    out = np.eye(4)
    m = np.asarray(m, dtype=float)
    out[: m.shape[0], : m.shape[1]] = m
    return out


def imu_to_cam_from_matrices(mats: dict) -> np.ndarray:
    """4x4 IMU-to-rectified-camera transform chained from ``Tr_imu_to_velo``,
    ``Tr_velo_to_cam`` and ``R0_rect``; missing links fall back to the
    nominal axis permutation."""
    if "Tr_imu_to_velo" in mats and "Tr_velo_to_cam" in mats:
        t = _homogeneous(mats["Tr_velo_to_cam"]) @ _homogeneous(mats["Tr_imu_to_velo"])
        if "R0_rect" in mats:
            t = _homogeneous(mats["R0_rect"]) @ t
        return t
    return _homogeneous(IMU_TO_CAM_NOMINAL)


# ---------------------------------------------------------------------------
# KITTI oxts


@dataclasses.dataclass(frozen=True)
class OxtsRecord:
    """One GPS/IMU packet; angles in radians, position in degrees and metres."""

    lat: float
    lon: float
    alt: float
    roll: float
    pitch: float
    yaw: float
    rest: tuple = ()


def parse_oxts_line(line: str, lineno=None, path=None) -> OxtsRecord:
    parts = line.split()
    if len(parts) != OXTS_FIELDS:
        raise ParseError(f"expected {OXTS_FIELDS} fields, got {len(parts)}", lineno, None, path)
    vals = _floats(parts, lineno, 1, path)
    if not (-90.0 < vals[0] < 90.0):
        raise UnitError(f"latitude {vals[0]} outside (-90, 90)", lineno, 1, path)
    return OxtsRecord(*vals[:6], rest=tuple(vals[6:]))


def parse_oxts(text: str, path=None):
    return [parse_oxts_line(line, n, path)
            for n, line in enumerate(text.splitlines(), start=1) if line.strip()]


def read_oxts_file(path):
    return parse_oxts(_read_text(path), path)


def mercator_scale(lat_deg: float) -> float:
    return math.cos(math.radians(lat_deg))


def oxts_pose(rec: OxtsRecord, scale: float) -> np.ndarray:
    """4x4 IMU-to-world pose with Mercator position and ``Rz(yaw) Ry(pitch) Rx(roll)``."""
    tx = scale * EARTH_RADIUS * math.radians(rec.lon)
    ty = scale * EARTH_RADIUS * math.log(math.tan(math.radians(90.0 + rec.lat) / 2.0))
    out = np.eye(4)
    out[:3, :3] = rot_z(rec.yaw) @ rot_y(rec.pitch) @ rot_x(rec.roll)
    out[:3, 3] = (tx, ty, rec.alt)
    return out


def read_kitti_oxts(pair, imu_to_cam=None, scale: float | None = None) -> EgoMotion:
    """Camera motion from the first pose of ``pair`` to the second.

    ``pair`` holds two :class:`OxtsRecord` or two oxts text lines. The
    Mercator scale defaults to the first record's latitude.
    """
    if len(pair) != 2:
        raise ValueError("need exactly two oxts records")
    recs = [r if isinstance(r, OxtsRecord) else parse_oxts_line(r) for r in pair]
    scale = mercator_scale(recs[0].lat) if scale is None else scale
    cam = _homogeneous(IMU_TO_CAM_NOMINAL) if imu_to_cam is None else _homogeneous(imu_to_cam)
    prev, cur = (oxts_pose(r, scale) for r in recs)
    # camera(t-1) -> imu(t-1) -> world -> imu(t) -> camera(t)
    rel = cam @ np.linalg.solve(cur, prev) @ np.linalg.inv(cam)
    return EgoMotion.from_matrix(rel)


def egos_from_oxts(records, imu_to_cam=None):
    """Per-frame ego-motion; frame 0 gets the identity."""
    if not records:
        return []
    scale = mercator_scale(records[0].lat)
    out = [EgoMotion.identity()]
    for a, b in zip(records[:-1], records[1:]):
        out.append(read_kitti_oxts((a, b), imu_to_cam, scale))
    return out


# ---------------------------------------------------------------------------
# detections


def parse_detections(text: str, path=None):
    """Detection records grouped per frame in ascending order.

    Records of a frame that appears more than once are merged in file order.
    """
    by_frame = {}
    for n, parts in _lines(text):
        if len(parts) not in (14, 15):
            raise ParseError(f"expected 14 or 15 fields, got {len(parts)}", n, None, path)
        frame = _int(parts[0], n, 1, path)
        if frame < 0:
            raise ParseError(f"negative frame {frame}", n, 1, path)
        cls = parts[1]
        vals = _floats(parts[2:], n, 3, path)
        if len(vals) == 13:
            c, omega, rest = vals[0], vals[1], vals[2:]
        else:
            c, omega, rest = vals[0], 1.0, vals[1:]
        for name, v in (("c", c), ("omega", omega)):
            if not 0.0 <= v <= 1.0:
                raise RangeError(f"line {n}: {name}={v} outside [0, 1]")
        left, top, right, bottom, h, w, l, x, y, z, ry = rest
        try:
            box = None if (left, top, right, bottom) == NO_BOX else Box2D.from_corners(left, top, right, bottom)
            cub = Cuboid3D(x, y, z, w, h, l, ry)
        except ValueError as exc:
            raise ParseError(str(exc), n, None, path) from None
        by_frame.setdefault(frame, []).append(Detection(cub, box, c=c, omega=omega, cls=cls, frame=frame))
    return [FrameRecord(f, by_frame[f]) for f in sorted(by_frame)]


def read_detections(path):
    return parse_detections(_read_text(path), path)


def format_detection(det: Detection) -> str:
    c, b = det.cuboid, det.box2d
    box = NO_BOX if b is None else (b.x, b.y, b.right, b.bottom)
    vals = (det.c, det.omega, *box, c.h3, c.w3, c.l3, c.x, c.y, c.z, c.theta)
    return f"{det.frame} {det.cls} " + " ".join(f"{v:.6f}" for v in vals)


def write_detections(records, path=None) -> str:
    """Canonical text of ``records`` (FrameRecords or a flat list of Detections)."""
    lines = []
    for rec in records:
        dets = rec.detections if isinstance(rec, FrameRecord) else [rec]
        lines += [format_detection(d) for d in dets]
    text = "".join(line + "\n" for line in lines)
    if path is not None:
        Path(path).write_text(text)
    return text


# ---------------------------------------------------------------------------
# ego-motion files


def parse_ego(text: str, path=None) -> dict:
    out = {}
    for n, parts in _lines(text):
        if len(parts) != 7:
            raise ParseError(f"expected 7 fields, got {len(parts)}", n, None, path)
        frame = _int(parts[0], n, 1, path)
        vals = _floats(parts[1:], n, 2, path)
        if frame in out:
            raise ParseError(f"duplicate ego-motion for frame {frame}", n, 1, path)
        out[frame] = EgoMotion(vals[:3], vals[3:])
    return out


def read_ego(path) -> dict:
    return parse_ego(_read_text(path), path)


def write_ego(egos: dict, path=None) -> str:
    lines = [f"{f} " + " ".join(f"{v:.9f}" for v in (*e.gamma, *e.rho))
             for f, e in sorted(egos.items())]
    text = "".join(line + "\n" for line in lines)
    if path is not None:
        Path(path).write_text(text)
    return text


# ---------------------------------------------------------------------------
# track dumps


TRACK_COLUMNS = ("frame", "id", "x", "y", "z", "w", "h", "l", "theta", "theta_h", "v",
                 "mu", "mph", "coasting")


def format_track(frame: int, track, frame_rate: float) -> str:
    from .tracker import velocity_to_mph

    s = track.state
    vals = list(s[:8]) + [s[8], track.mu, velocity_to_mph(s[8], frame_rate)]
    return f"{frame} {track.id} " + " ".join(f"{v:.6f}" for v in vals) + f" {int(track.coasting)}"


def parse_tracks(text: str, calib: CalibProjection | None = None, path=None):
    """Track dump lines as :class:`Detection` boxes scored by the track confidence.

    The stored yaw and heading flag are merged back into a full-circle yaw.
    """
    from .orientation import measurement_theta_merge

    out = []
    for n, parts in _lines(text):
        if len(parts) != len(TRACK_COLUMNS):
            raise ParseError(f"expected {len(TRACK_COLUMNS)} fields, got {len(parts)}", n, None, path)
        frame = _int(parts[0], n, 1, path)
        tid = _int(parts[1], n, 2, path)
        x, y, z, w, h, l, theta, theta_h, _v, mu, _mph = _floats(parts[2:13], n, 3, path)
        coasting = _int(parts[13], n, 14, path)
        if coasting not in (0, 1):
            raise ParseError("coasting flag must be 0 or 1", n, 14, path)
        if not 0.0 <= mu <= 1.0:
            raise RangeError(f"line {n}: mu={mu} outside [0, 1]")
        yaw = measurement_theta_merge(theta, int(math.floor(min(max(theta_h, 0.0), 1.0) + 0.5)))
        try:
            cub = Cuboid3D(x, y, z, w, h, l, yaw)
        except ValueError as exc:
            raise ParseError(str(exc), n, None, path) from None
        box = None
        if calib is not None:
            from .errors import BehindCamera
            from .geometry import project_cuboid_to_box2d

            try:
                box = project_cuboid_to_box2d(cub, calib)
            except BehindCamera:
                box = None
        out.append(Detection(cub, box, c=mu, omega=1.0, frame=frame, track_id=tid,
                             coasting=bool(coasting)))
    return out


def read_tracks(path, calib: CalibProjection | None = None):
    return parse_tracks(_read_text(path), calib, path)


# ---------------------------------------------------------------------------
# config files


def parse_config(text: str, path=None) -> dict:
    """Flat ``key = value`` pairs; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ParseError("expected 'key = value'", n, None, path)
        out[key] = value
    return out


def read_config(path) -> dict:
    return parse_config(_read_text(path), path)


def _coerce(value, kind, key):
    if kind in (bool, "bool"):
        low = str(value).lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ParseError(f"{key}: expected a boolean, got {value!r}")
    if kind in (int, "int"):
        return _int(str(value), column=None) if not isinstance(value, int) else value
    if kind in (float, "float"):
        return _float(str(value)) if not isinstance(value, float) else value
    if kind in (tuple, "tuple") or str(kind).startswith("tuple"):
        if isinstance(value, (tuple, list)):
            return tuple(float(v) for v in value)
        return tuple(_float(v) for v in str(value).replace(",", " ").split())
    return value


def config_from_mapping(cls, mapping: dict, strict: bool = True):
    """Instance of dataclass ``cls`` built from string ``mapping`` values.

    Unknown keys raise :class:`ParseError` when ``strict``.
    """
    fields = {f.name: f for f in dataclasses.fields(cls) if f.init}
    kwargs = {}
    for key, value in mapping.items():
        if key not in fields:
            if strict:
                raise ParseError(f"unknown configuration key {key!r}")
            continue
        kind = fields[key].type
        if isinstance(kind, str):
            kind = kind.split("|")[0].strip()
        kwargs[key] = _coerce(value, kind, key)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(str(exc)) from None


# ---------------------------------------------------------------------------
# sequence directories


def write_sequence(scenario, path):
    """Lay ``scenario`` out as ``calib.txt``, ``detections.txt``, ``ego.txt`` and ``label/``."""
    root = Path(path)
    (root / "label").mkdir(parents=True, exist_ok=True)
    (root / "calib.txt").write_text(format_kitti_calib(scenario.calib))
    write_detections(scenario.frames, root / "detections.txt")
    write_ego({f.frame: f.ego for f in scenario.frames if f.ego is not None}, root / "ego.txt")
    for f in scenario.frames:
        text = "".join(format_kitti_label(g) + "\n" for g in f.ground_truth or ())
        (root / "label" / f"{f.frame:06d}.txt").write_text(text)


@dataclasses.dataclass
class Sequence:
    """Frames read back from disk; mirrors the simulator's scenario layout."""

    calib: CalibProjection
    frames: list
    spec: object = None


def frames_from(records, egos: dict, labels=None):
    """Dense per-frame records covering every frame mentioned by any input."""
    dets = {r.frame: r.detections for r in records}
    gts = {}
    for g in labels or ():
        gts.setdefault(g.frame, []).append(g)
    known = set(dets) | set(egos) | set(gts)
    if not known:
        return []
    out = []
    for f in range(max(known) + 1):
        out.append(FrameRecord(f, dets.get(f, []), ego=egos.get(f), ego_gt=egos.get(f),
                               ground_truth=gts.get(f, [])))
    return out


def read_sequence(path) -> Sequence:
    root = Path(path)
    calib = read_kitti_calib(root / "calib.txt")
    records = read_detections(root / "detections.txt")
    egos = read_ego(root / "ego.txt") if (root / "ego.txt").exists() else {}
    labels = read_label_dir(root / "label") if (root / "label").is_dir() else []
    return Sequence(calib, frames_from(records, egos, labels))
