import math

import numpy as np
import pytest

from kinematic3d import fileio
from kinematic3d.anchors import parse_anchor_table
from kinematic3d.geometry import Cuboid3D
from kinematic3d.sim import kitti_calib
from kinematic3d.tracker import TrackerConfig


def mc_iou(a: Cuboid3D, b: Cuboid3D, n: int, rng, bev: bool) -> float:
    """Monte-Carlo IoU by uniform sampling of the joint bounding region.

    Written against the box definition directly (local-frame half-extent
    tests), sharing no code with the polygon clipper.
    """
    def inside(c, pts):
        d = pts[:, [0, 2]] - np.array([c.x, c.z])
        heading = np.array([math.cos(c.theta), -math.sin(c.theta)])
        side = np.array([math.sin(c.theta), math.cos(c.theta)])
        ok = (np.abs(d @ heading) <= c.l3 / 2) & (np.abs(d @ side) <= c.w3 / 2)
        if not bev:
            ok &= np.abs(pts[:, 1] - c.y) <= c.h3 / 2
        return ok

    ra = 0.5 * math.hypot(a.l3, a.w3)
    rb = 0.5 * math.hypot(b.l3, b.w3)
    lo = np.array([min(a.x - ra, b.x - rb), min(a.y - a.h3 / 2, b.y - b.h3 / 2), min(a.z - ra, b.z - rb)])
    hi = np.array([max(a.x + ra, b.x + rb), max(a.y + a.h3 / 2, b.y + b.h3 / 2), max(a.z + ra, b.z + rb)])
    pts = rng.uniform(lo, hi, size=(n, 3))
    ia, ib = inside(a, pts), inside(b, pts)
    either = np.count_nonzero(ia | ib)
    return np.count_nonzero(ia & ib) / either if either else 0.0


def random_overlapping_pair(rng):
    """Two rotated boxes whose centres are close enough to usually overlap."""
    a = Cuboid3D(rng.uniform(-5, 5), rng.uniform(0, 2), rng.uniform(10, 40),
                 rng.uniform(1.0, 2.5), rng.uniform(1.0, 2.0), rng.uniform(2.0, 5.0),
                 rng.uniform(-math.pi, math.pi))
    b = Cuboid3D(a.x + rng.uniform(-2, 2), a.y + rng.uniform(-0.8, 0.8), a.z + rng.uniform(-2, 2),
                 rng.uniform(1.0, 2.5), rng.uniform(1.0, 2.0), rng.uniform(2.0, 5.0),
                 rng.uniform(-math.pi, math.pi))
    return a, b


# --- reader fuzzing --------------------------------------------------------

SEED_LINES = {
    "label": "Car 0.00 0 -1.57 100 100 200 200 1.5 1.6 3.9 0.0 1.0 10.0 -1.57",
    "calib": "P2: 721.5 0 609.6 44.9 0 721.5 172.9 0.2 0 0 1 0.003",
    "oxts": " ".join(["49.01", "8.42", "112.8"] + ["0.0"] * 27),
    "detections": "3 Car 0.8 0.5 100 100 200 200 1.5 1.6 3.9 0.0 1.0 10.0 -1.57",
    "ego": "2 0.0 0.0 -1.0 0.0 0.01 0.0",
    "tracks": "4 7 0.0 1.0 10.0 1.6 1.5 3.9 0.2 0.0 0.5 0.7 11.18 0",
    "anchors": "80 60 25 1.6 1.5 3.9 -1.57 0.0",
    "config": "k_d = 0.5",
}
WEIRD_TOKENS = ["nan", "inf", "-inf", "1e400", "-1", "0", "abc", "", "1.5.2", "-0", "+3", "1_0",
                "\x00", "é", "9" * 400, "DontCare", ":", "=", "#"]


def fuzz_line(rng) -> tuple[str, str]:
    """A (reader kind, line) pair: mutated valid lines or random printable/binary noise."""
    kind = str(rng.choice(list(SEED_LINES)))
    mode = rng.integers(4)
    if mode == 0:
        raw = rng.integers(0, 256, rng.integers(0, 80)).astype(np.uint8).tobytes()
        return kind, raw.decode("latin-1")
    toks = SEED_LINES[kind].split(" ")
    for _ in range(int(rng.integers(1, 4))):
        op = rng.integers(4)
        pos = int(rng.integers(len(toks))) if toks else 0
        if op == 0 and toks:
            toks[pos] = str(rng.choice(WEIRD_TOKENS))
        elif op == 1 and toks:
            del toks[pos]
        elif op == 2:
            toks.insert(pos, str(rng.choice(WEIRD_TOKENS)))
        else:
            toks.insert(pos, repr(float(rng.normal() * 10.0 ** rng.integers(-5, 6))))
    return kind, " ".join(toks)


READERS = {
    "label": fileio.parse_kitti_labels,
    "calib": lambda t: fileio.calib_from_matrices(fileio.parse_kitti_calib(t)),
    "oxts": fileio.parse_oxts,
    "detections": fileio.parse_detections,
    "ego": fileio.parse_ego,
    "tracks": lambda t: fileio.parse_tracks(t, kitti_calib()),
    "anchors": parse_anchor_table,
    "config": lambda t: fileio.config_from_mapping(TrackerConfig, fileio.parse_config(t)),
}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
