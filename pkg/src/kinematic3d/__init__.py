"""Kinematic monocular 3D box tracking: codecs, losses, Kalman fusion and evaluation."""

from .anchors import Anchor, GroundTruthBox, cluster_anchors, decode_targets, encode_targets
from .errors import (
    BehindCamera,
    DegenerateVariance,
    EmptyMatchSet,
    InsufficientData,
    InsufficientFrames,
    Kinematic3DError,
    NonPositiveDepth,
    ParseError,
    RangeError,
    SingularCalibration,
    SingularInnovation,
    UnitError,
    ZeroIoUWarning,
)
from .evaluation import EvalConfig, ap40, evaluate, forecast_eval
from .geometry import Box2D, CalibProjection, Cuboid3D, EgoMotion, iou_3d, iou_bev
from .orientation import decompose, recompose
from .records import Detection, FrameRecord
from .sim import ScenarioSpec, simulate
from .tracker import Tracker, TrackerConfig, TrackState

__version__ = "0.1.0"

__all__ = [
    "Anchor", "GroundTruthBox", "cluster_anchors", "decode_targets", "encode_targets",
    "BehindCamera", "DegenerateVariance", "EmptyMatchSet", "InsufficientData",
    "InsufficientFrames", "Kinematic3DError", "NonPositiveDepth", "ParseError", "RangeError",
    "SingularCalibration", "SingularInnovation", "UnitError", "ZeroIoUWarning",
    "EvalConfig", "ap40", "evaluate", "forecast_eval",
    "Box2D", "CalibProjection", "Cuboid3D", "EgoMotion", "iou_3d", "iou_bev",
    "decompose", "recompose", "Detection", "FrameRecord", "ScenarioSpec", "simulate",
    "Tracker", "TrackerConfig", "TrackState",
]
