"""Low-level track lifecycle: predict, associate, update, spawn, delete.

Each tracklet couples a constant-acceleration Kalman filter with ring
buffers of observed pixel positions and absolute headings, ordered
most-recent-first. Detections isolated from every existing track spawn a
confirmed tracklet immediately (greedy initialization); detections close to
an existing track start out tentative and must be matched on consecutive
frames before they count (lazy initialization). Unmatched tracklets coast
on predictions and are only dropped after a configurable number of missed
frames (lazy deletion), which is what carries identities through occlusion.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Sequence

from . import kalman
from .assignment import build_association_cost, gated_pairs, hungarian_solve
from .geometry import (
    BoundingBox,
    CameraModel,
    ImagePoint,
    bearing_from_pixel,
    class_center,
    relative_to_absolute_heading,
)
from .kalman import KalmanParams, KalmanState


class NonMonotonicFrame(ValueError):
    """Frame inputs must arrive with strictly increasing frame indices."""


class TrackStatus(Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"


@dataclass
class Detection:
    """One detector output: box, refined foot point, quantized heading."""

    box: BoundingBox
    center: ImagePoint
    foot: ImagePoint
    heading_class: int
    heading_confidence: float = 1.0

    @classmethod
    def from_box(
        cls,
        box: BoundingBox,
        foot: ImagePoint,
        heading_class: int,
        heading_confidence: float = 1.0,
    ) -> "Detection":
        return cls(box=box, center=box.center(), foot=foot,
                   heading_class=heading_class, heading_confidence=heading_confidence)


@dataclass
class FrameInput:
    frame: int
    detections: list[Detection]
    observer_heading: float = 0.0


@dataclass(frozen=True)
class TrackerConfig:
    camera: CameraModel
    kalman: KalmanParams
    d_max: float
    vicinity_radius: float
    confirm_hits: int = 3
    delete_after: int = 30
    buffer_capacity: int = 60

    def __post_init__(self) -> None:
        if self.vicinity_radius > self.d_max:
            raise ValueError("vicinity_radius must not exceed d_max")
        if min(self.d_max, self.vicinity_radius) <= 0:
            raise ValueError("gating radii must be positive")
        if min(self.confirm_hits, self.delete_after, self.buffer_capacity) < 1:
            raise ValueError("counts must be at least 1")

    @classmethod
    def defaults(cls, camera: CameraModel, fps: float, **overrides) -> "TrackerConfig":
        # 100 px gate on a 640x480 stream, scaled with the image diagonal
        d_max = overrides.pop("d_max", 100.0 * camera.image_diag / 800.0)
        vicinity = overrides.pop("vicinity_radius", 0.5 * d_max)
        kparams = overrides.pop("kalman", KalmanParams.defaults(dt=1.0 / fps))
        return cls(camera=camera, kalman=kparams, d_max=d_max, vicinity_radius=vicinity, **overrides)


class Tracklet:
    """Mutable per-track state; owned and advanced solely by the Tracker."""

    __slots__ = ("id", "kf", "t_pos", "t_rot", "misses", "hits", "status", "last_foot")

    def __init__(self, tid: int, kf: KalmanState, capacity: int, status: TrackStatus):
        self.id = tid
        self.kf = kf
        # index 0 = newest entry
        self.t_pos: deque[ImagePoint] = deque(maxlen=capacity)
        self.t_rot: deque[float] = deque(maxlen=capacity)
        self.misses = 0
        self.hits = 0
        self.status = status
        self.last_foot: ImagePoint | None = None


class TrackView(NamedTuple):
    id: int
    status: TrackStatus
    position: ImagePoint
    last_pos: ImagePoint | None
    last_heading: float | None
    misses: int


@dataclass
class StepEvents:
    created: list[int] = field(default_factory=list)
    confirmed: list[int] = field(default_factory=list)
    deleted: list[int] = field(default_factory=list)


class Tracker:
    """Frame-synchronous multi-target tracker over one detection stream.

    Strictly sequential per instance; snapshots are immutable copies.
    """

    def __init__(self, config: TrackerConfig):
        self.config = config
        self.tracklets: list[Tracklet] = []
        self._next_id = 1
        self._last_frame: int | None = None

    def step(self, frame_input: FrameInput) -> StepEvents:
        cfg = self.config
        if self._last_frame is not None and frame_input.frame <= self._last_frame:
            raise NonMonotonicFrame(
                f"frame {frame_input.frame} after frame {self._last_frame}")
        self._last_frame = frame_input.frame
        events = StepEvents()

        for t in self.tracklets:
            t.kf = kalman.kf_predict(t.kf, cfg.kalman)
        predictions = [kalman.kf_position(t.kf) for t in self.tracklets]

        detections = frame_input.detections
        if self.tracklets and detections:
            cost = build_association_cost(
                predictions, [d.center for d in detections], cfg.d_max, cfg.camera.image_diag)
            matched, unmatched_rows, unmatched_cols = gated_pairs(
                hungarian_solve(cost), cost, cfg.camera.image_diag)
        else:
            matched = []
            unmatched_rows = list(range(len(self.tracklets)))
            unmatched_cols = list(range(len(detections)))

        for row, col in matched:
            self._apply_match(self.tracklets[row], detections[col],
                              frame_input.observer_heading, events)
        for row in unmatched_rows:
            t = self.tracklets[row]
            t.misses += 1
            t.hits = 0

        for col in unmatched_cols:
            self._spawn(detections[col], predictions, frame_input.observer_heading, events)

        survivors = []
        for t in self.tracklets:
            if t.misses > cfg.delete_after:
                events.deleted.append(t.id)
            else:
                survivors.append(t)
        self.tracklets = survivors
        return events

    def _apply_match(self, t: Tracklet, det: Detection, observer_heading: float,
                     events: StepEvents) -> None:
        cfg = self.config
        t.kf = kalman.kf_update(t.kf, det.center, cfg.kalman)
        t.t_pos.appendleft(det.center)
        t.t_rot.appendleft(self._absolute_heading(det, observer_heading))
        t.last_foot = det.foot
        t.misses = 0
        t.hits += 1
        if t.status is TrackStatus.TENTATIVE and t.hits >= cfg.confirm_hits:
            t.status = TrackStatus.CONFIRMED
            events.confirmed.append(t.id)

    def _spawn(self, det: Detection, predictions: Sequence[ImagePoint],
               observer_heading: float, events: StepEvents) -> None:
        cfg = self.config
        isolated = all(
            math.hypot(p[0] - det.center[0], p[1] - det.center[1]) > cfg.vicinity_radius
            for p in predictions
        )
        status = TrackStatus.CONFIRMED if isolated else TrackStatus.TENTATIVE
        t = Tracklet(self._next_id, kalman.kf_init(det.center, cfg.kalman),
                     cfg.buffer_capacity, status)
        self._next_id += 1
        t.t_pos.appendleft(det.center)
        t.t_rot.appendleft(self._absolute_heading(det, observer_heading))
        t.last_foot = det.foot
        t.hits = 1
        self.tracklets.append(t)
        events.created.append(t.id)
        if status is TrackStatus.CONFIRMED:
            events.confirmed.append(t.id)

    def _absolute_heading(self, det: Detection, observer_heading: float) -> float:
        bearing = bearing_from_pixel(det.foot, self.config.camera)
        return relative_to_absolute_heading(
            class_center(det.heading_class), observer_heading, bearing)

    def confirmed(self) -> list[Tracklet]:
        return [t for t in self.tracklets if t.status is TrackStatus.CONFIRMED]

    def snapshot(self) -> list[TrackView]:
        views = [
            TrackView(
                id=t.id,
                status=t.status,
                position=kalman.kf_position(t.kf),
                last_pos=t.t_pos[0] if t.t_pos else None,
                last_heading=t.t_rot[0] if t.t_rot else None,
                misses=t.misses,
            )
            for t in self.tracklets
        ]
        return sorted(views, key=lambda v: v.id)
