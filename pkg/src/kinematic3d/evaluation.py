"""KITTI-style evaluation: AP40, depth-stratified AP, and motion diagnostics."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVariance, EmptyMatchSet, InsufficientFrames
from .geometry import angle_diff, cuboid_corners, iou_2d, iou_3d, iou_bev
from .tracker import Tracker, TrackerConfig, forecast_n, velocity_to_mph

# min 2D height (px), max occlusion level, max truncation
DIFFICULTIES = {
    "easy": (40.0, 0, 0.15),
    "moderate": (25.0, 1, 0.30),
    "hard": (25.0, 2, 0.50),
}
N_RECALL_POINTS = 40


@dataclass
class EvalConfig:
    iou_thresholds: tuple = (0.7, 0.5, 0.3)
    difficulties: tuple = ("easy", "moderate", "hard")
    depth_bins: tuple = (15.0, 30.0, math.inf)
    n_recall_points: int = N_RECALL_POINTS
    angle_match_iou: float = 0.5
    include_coasting: bool = False

    def __post_init__(self):
        if any(not 0.0 < t <= 1.0 for t in self.iou_thresholds):
            raise ValueError("IoU thresholds must lie in (0, 1]")
        if list(self.depth_bins) != sorted(self.depth_bins):
            raise ValueError("depth bins must be ascending")
        for d in self.difficulties:
            if d not in DIFFICULTIES:
                raise ValueError(f"unknown difficulty {d!r}")
        if self.n_recall_points < 1:
            raise ValueError("n_recall_points must be positive")


@dataclass
class PRCurve:
    """Ranked outcomes and the precision/recall points at each distinct score."""

    scores: np.ndarray
    outcomes: np.ndarray  # 1 true positive, 0 false positive (ignored boxes dropped)
    precision: np.ndarray
    recall: np.ndarray
    n_gt: int
    ap: float | None = None


IOU_KINDS = {
    "3d": lambda det, gt: iou_3d(det.cuboid, gt.cuboid),
    "bev": lambda det, gt: iou_bev(det.cuboid, gt.cuboid),
    "2d": lambda det, gt: iou_2d(det.box2d, gt.box2d) if det.box2d is not None else 0.0,
}


def resolve_iou(iou_fn):
    if callable(iou_fn):
        return iou_fn
    try:
        return IOU_KINDS[iou_fn]
    except KeyError:
        raise ValueError(f"unknown IoU kind {iou_fn!r}") from None


def gt_is_valid(gt, difficulty: str | None, max_depth: float | None = None) -> bool:
    if max_depth is not None and not gt.cuboid.z < max_depth:
        return False
    if difficulty is None:
        return True
    min_h, max_occ, max_trunc = DIFFICULTIES[difficulty]
    return gt.box2d.h2 >= min_h and gt.occlusion <= max_occ and gt.truncation <= max_trunc


def det_is_ignored(det, difficulty: str | None, max_depth: float | None = None) -> bool:
    if max_depth is not None and not det.cuboid.z < max_depth:
        return True
    if difficulty is not None and det.box2d is not None:
        return det.box2d.h2 < DIFFICULTIES[difficulty][0]
    return False


def _by_frame(items):
    out = {}
    for it in items:
        out.setdefault(it.frame, []).append(it)
    return out


def rank_detections(detections):
    """Indices in descending score order; ties keep input order."""
    scores = np.array([d.score for d in detections], dtype=float)
    return np.argsort(-scores, kind="stable")


def match_outcomes(detections, ground_truths, iou_fn="3d", threshold=0.7,
                   difficulty=None, max_depth=None, order=None):
    """Greedy score-ordered matching.

    Returns ``(outcomes, n_valid_gt)`` where ``outcomes[i]`` is 1 (TP), 0 (FP)
    or -1 (ignored) for ``detections[i]``. Each ground truth absorbs at most one
    detection; a detection overlapping only an out-of-scope ground truth is
    ignored rather than counted as a false positive.
    """
    iou = resolve_iou(iou_fn)
    gts_by_frame = _by_frame(ground_truths)
    valid = {id(g): gt_is_valid(g, difficulty, max_depth) for g in ground_truths}
    n_valid = sum(valid.values())
    taken = set()
    outcomes = np.full(len(detections), -1, dtype=int)
    if order is None:
        order = rank_detections(detections)
    for i in order:
        det = detections[i]
        best, best_iou, hits_ignored = None, -1.0, False
        for g in gts_by_frame.get(det.frame, ()):
            ov = iou(det, g)
            if ov < threshold:
                continue
            if not valid[id(g)]:
                hits_ignored = True
            elif id(g) not in taken and ov > best_iou:
                best, best_iou = g, ov
        if best is not None:
            taken.add(id(best))
            outcomes[i] = 1
        elif hits_ignored or det_is_ignored(det, difficulty, max_depth):
            outcomes[i] = -1
        else:
            outcomes[i] = 0
    return outcomes, n_valid


def interpolated_ap(precision, recall, n_points=N_RECALL_POINTS) -> float:
    """Mean interpolated precision at recalls ``1/n, 2/n, ..., 1`` (recall 0 skipped)."""
    precision = np.asarray(precision, dtype=float)
    recall = np.asarray(recall, dtype=float)
    vals = []
    for k in range(1, n_points + 1):
        r = k / n_points
        mask = recall >= r
        vals.append(float(precision[mask].max()) if mask.any() else 0.0)
    return math.fsum(vals) / n_points


def pr_curve(detections, ground_truths, iou_fn="3d", threshold=0.7, difficulty=None,
             max_depth=None, n_points=N_RECALL_POINTS) -> PRCurve:
    detections = list(detections)
    order = rank_detections(detections)
    outcomes, n_gt = match_outcomes(detections, ground_truths, iou_fn, threshold,
                                    difficulty, max_depth, order)
    ranked = [i for i in order if outcomes[i] >= 0]
    scores = np.array([detections[i].score for i in ranked], dtype=float)
    res = np.array([outcomes[i] for i in ranked], dtype=int)

    precision, recall = [], []
    tp = fp = 0
    for k, o in enumerate(res):
        tp += int(o == 1)
        fp += int(o == 0)
        # emit a point only once every detection sharing this score is counted
        if k + 1 == len(res) or scores[k + 1] != scores[k]:
            precision.append(tp / (tp + fp))
            recall.append(tp / n_gt if n_gt else 0.0)
    curve = PRCurve(scores, res, np.array(precision), np.array(recall), n_gt)
    curve.ap = interpolated_ap(curve.precision, curve.recall, n_points) if n_gt else None
    return curve


def ap40(detections, ground_truths, iou_fn="3d", threshold=0.7, difficulty=None,
         max_depth=None, n_points=N_RECALL_POINTS):
    """AP over 40 recall points; ``None`` when no ground truth is in scope."""
    return pr_curve(detections, ground_truths, iou_fn, threshold, difficulty,
                    max_depth, n_points).ap


def ap_by_depth(detections, ground_truths, iou_fn="3d", threshold=0.7,
                depth_bins=(15.0, 30.0, math.inf), difficulty=None):
    """AP for ground truths nearer than each depth limit; absent bins map to ``None``."""
    return {b: ap40(detections, ground_truths, iou_fn, threshold, difficulty, b)
            for b in depth_bins}


# ---------------------------------------------------------------------------
# orientation and motion diagnostics


def match_pairs(detections, ground_truths, iou_fn="bev", threshold=0.5):
    """Greedy score-ordered one-to-one matches as ``(detection, gt, iou)`` triples."""
    iou = resolve_iou(iou_fn)
    detections = list(detections)
    gts_by_frame = _by_frame(ground_truths)
    taken, pairs = set(), []
    for i in rank_detections(detections):
        det = detections[i]
        best, best_iou = None, -1.0
        for g in gts_by_frame.get(det.frame, ()):
            if id(g) in taken:
                continue
            ov = iou(det, g)
            if ov >= threshold and ov > best_iou:
                best, best_iou = g, ov
        if best is not None:
            taken.add(id(best))
            pairs.append((det, best, best_iou))
    return pairs


def mean_angle_error(pairs) -> float:
    """Mean absolute wrapped yaw error in degrees over ``(pred, gt)`` angle pairs."""
    pairs = list(pairs)
    if not pairs:
        raise EmptyMatchSet("no matched orientation pairs")
    errs = [abs(angle_diff(p, g)) for p, g in pairs]
    return math.degrees(math.fsum(errs) / len(errs))


def mean_angle_error_boxes(detections, ground_truths, threshold=0.5) -> float:
    pairs = match_pairs(detections, ground_truths, "bev", threshold)
    return mean_angle_error((d.cuboid.theta, g.cuboid.theta) for d, g, _ in pairs)


def _speeds(values):
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 2:
        return np.linalg.norm(arr, axis=1)
    return np.abs(arr)


def speed_mae_mph(pred, truth, frame_rate: float) -> float:
    """Mean absolute speed error in MPH; inputs are per-frame speeds or displacement vectors."""
    p, t = _speeds(pred), _speeds(truth)
    if p.size == 0:
        raise EmptyMatchSet("no matched velocities")
    if p.shape != t.shape:
        raise ValueError("prediction and truth lengths differ")
    return float(np.mean(np.abs(velocity_to_mph(p, frame_rate) - velocity_to_mph(t, frame_rate))))


def motion_errors(pred_velocities, gt_velocities, pred_egos=None, gt_egos=None,
                  frame_rate: float = 10.0):
    """``(object speed MAE, ego speed MAE)`` in MPH.

    Ego terms compare translation magnitudes; the second value is ``None``
    when no ego-motion pairs are supplied.
    """
    vel = speed_mae_mph(pred_velocities, gt_velocities, frame_rate)
    ego = None
    if pred_egos is not None and gt_egos is not None and len(pred_egos):
        ego = speed_mae_mph([e.speed() for e in pred_egos], [e.speed() for e in gt_egos], frame_rate)
    return vel, ego


def stabilize_positions(positions, egos):
    """Express per-frame camera-frame points in the first frame's coordinates.

    ``egos[t]`` maps frame ``t - 1`` into frame ``t``; ``egos[0]`` is unused.
    """
    out = []
    to_first = np.eye(4)
    for t, p in enumerate(positions):
        if t > 0:
            to_first = to_first @ np.linalg.inv(egos[t].matrix())
        out.append((to_first @ np.append(np.asarray(p, dtype=float), 1.0))[:3])
    return np.array(out)


def central_difference_speeds(positions):
    """Per-frame speeds from central differences (one-sided at the ends)."""
    pos = np.asarray(positions, dtype=float)
    if len(pos) < 2:
        raise EmptyMatchSet("need at least two positions")
    vel = np.gradient(pos, axis=0)
    return np.linalg.norm(vel, axis=1)


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise DegenerateVariance("need at least two pairs")
    xs, ys = x - x.mean(), y - y.mean()
    den = math.sqrt(float(np.dot(xs, xs)) * float(np.dot(ys, ys)))
    if den == 0.0:
        raise DegenerateVariance("a variable has zero variance")
    return float(np.dot(xs, ys) / den)


SCORE_SELECTORS = {
    "c": lambda d: d.c,
    "mu": lambda d: d.mu,
    "omega": lambda d: d.omega,
}


def score_iou_correlation(detections, ground_truths, score_selector="mu", iou_fn="3d") -> float:
    """Pearson correlation between a detection score and its best 3D IoU.

    Every detection is paired with the highest-IoU ground truth in its frame;
    detections overlapping nothing are left out.
    """
    select = SCORE_SELECTORS[score_selector] if isinstance(score_selector, str) else score_selector
    iou = resolve_iou(iou_fn)
    gts_by_frame = _by_frame(ground_truths)
    xs, ys = [], []
    for det in detections:
        best = max((iou(det, g) for g in gts_by_frame.get(det.frame, ())), default=0.0)
        if best > 0.0:
            xs.append(select(det))
            ys.append(best)
    return pearson(xs, ys)


# ---------------------------------------------------------------------------
# forecasting protocol


MIN_TRACK_FRAMES = 4


def _with_frame(items, frame):
    return [dataclasses.replace(it, frame=frame) for it in items]


def _forecast_window(n_frames: int, n_f: int, history: int | None):
    end = n_frames - 1 - n_f
    start = 0 if history is None else end - history + 1
    if n_f < 0 or start < 0 or end - start + 1 < MIN_TRACK_FRAMES:
        raise InsufficientFrames(
            f"forecasting {n_f} frames with history {history} needs more than {n_frames} frames")
    return start, end


def _labelled_forecasts(scenario, tracks, n_f, ego, include_coasting):
    frames = scenario.frames
    tracks = [t for t in tracks if include_coasting or not t.coasting]
    if n_f:
        tracks = forecast_n(tracks, n_f, ego)
    out = [t.to_detection(frames[-1].frame, scenario.calib) for t in tracks]
    # forecasts that left the labelled region cannot be matched by anything
    min_depth = getattr(getattr(scenario, "spec", None), "min_depth", 0.0)
    return [d for d in out
            if d.box2d is not None and cuboid_corners(d.cuboid)[:, 2].min() >= min_depth]


def forecast_outputs(scenario, n_f: int, config: TrackerConfig | None = None,
                     history: int | None = None, include_coasting: bool = False):
    """Track up to ``n_f`` frames before the last frame, then forecast ``n_f`` frames.

    ``history`` limits tracking to that many frames before the forecast
    point (``None`` uses every available frame). Unknown ego-motion is held
    at the last observed value. Forecasts with a corner closer than the
    scenario's labelling depth are dropped.
    """
    return forecast_sweep(scenario, [n_f], config, history, include_coasting)[n_f]


def forecast_sweep(scenario, n_fs, config: TrackerConfig | None = None,
                   history: int | None = None, include_coasting: bool = False):
    """``{n_f: forecast_outputs(scenario, n_f, ...)}`` for every ``n_f`` in ``n_fs``.

    With unlimited history the tracker runs once and is snapshotted at each
    forecast origin.
    """
    frames = scenario.frames
    windows = {n_f: _forecast_window(len(frames), n_f, history) for n_f in n_fs}
    out = {}
    if history is None:
        origins = {end: n_f for n_f, (_, end) in windows.items()}
        tracker = Tracker(config, scenario.calib)
        for t in range(max(origins) + 1):
            tracker.step(frames[t].detections, frames[t].ego if t else None)
            if t in origins:
                out[origins[t]] = _labelled_forecasts(
                    scenario, tracker.tracks, origins[t], tracker.last_ego, include_coasting)
        return {n_f: out[n_f] for n_f in n_fs}
    for n_f, (start, end) in windows.items():
        tracker = Tracker(config, scenario.calib)
        for t in range(start, end + 1):
            tracker.step(frames[t].detections, frames[t].ego if t > start else None)
        out[n_f] = _labelled_forecasts(scenario, tracker.tracks, n_f, tracker.last_ego,
                                       include_coasting)
    return out


def forecast_eval(scenarios, n_f, config: TrackerConfig | None = None,
                  eval_config: EvalConfig | None = None, kinds=("3d", "bev"),
                  history: int | None = None, difficulty=None):
    """AP40 of ``n_f``-frame forecasts against each scenario's last-frame labels.

    Returns ``{(kind, threshold): ap}`` pooled over all scenarios. A sequence
    of horizons returns ``{n_f: table}`` instead.
    """
    eval_config = eval_config or EvalConfig()
    horizons = [n_f] if np.isscalar(n_f) else list(n_f)
    dets = {h: [] for h in horizons}
    gts = []
    for k, sc in enumerate(scenarios):
        for h, boxes in forecast_sweep(sc, horizons, config, history).items():
            dets[h] += _with_frame(boxes, k)
        gts += _with_frame(sc.frames[-1].ground_truth, k)
    tables = {h: {(kind, thr): ap40(dets[h], gts, kind, thr, difficulty)
                  for kind in kinds for thr in eval_config.iou_thresholds}
              for h in horizons}
    return tables[n_f] if np.isscalar(n_f) else tables


def tracker_outputs(scenario, config: TrackerConfig | None = None, include_coasting=False):
    """Run the tracker over a scenario and collect per-frame output boxes."""
    tracker = Tracker(config, scenario.calib)
    out = []
    for i, fr in enumerate(scenario.frames):
        tracker.step(fr.detections, fr.ego if i else None)
        out += tracker.outputs(fr.frame, include_coasting)
    return out


def evaluate(detections, ground_truths, eval_config: EvalConfig | None = None, kinds=("3d", "bev")):
    """Full AP table: ``{(kind, difficulty, threshold): ap}``."""
    cfg = eval_config or EvalConfig()
    if not cfg.include_coasting:
        detections = [d for d in detections if not d.coasting]
    return {(kind, diff, thr): ap40(detections, ground_truths, kind, thr, diff)
            for kind in kinds for diff in cfg.difficulties for thr in cfg.iou_thresholds}
