"""Per-frame detection records shared by the tracker, evaluator and readers."""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import RangeError
from .geometry import Box2D, Cuboid3D, EgoMotion


@dataclass
class Detection:
    """One measured box with its class score ``c`` and 3D confidence ``omega``.

    ``mu`` is always ``c * omega``. ``coasting`` marks boxes emitted by a
    track that had no measurement in this frame.
    """

    cuboid: Cuboid3D
    box2d: Box2D | None = None
    c: float = 1.0
    omega: float = 1.0
    cls: str = "Car"
    frame: int = 0
    track_id: int | None = None
    coasting: bool = False
    mu: float = field(init=False)

    def __post_init__(self):
        for name in ("c", "omega"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise RangeError(f"{name}={val} outside [0, 1]")
        self.mu = self.c * self.omega

    @property
    def score(self) -> float:
        return self.mu


@dataclass
class FrameRecord:
    frame: int
    detections: list = field(default_factory=list)
    ego: EgoMotion | None = None
    ego_gt: EgoMotion | None = None
    ground_truth: list | None = None
