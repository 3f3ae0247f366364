"""Angle arithmetic, heading classes, pinhole ground projection, and
scanline foot-point refinement.

Conventions used throughout the package:

* Angles are plain floats in radians, kept in ``[0, 2*pi)`` by
  :func:`wrap_angle`. Heading 0 points along the observer's forward axis,
  headings grow counterclockwise (toward the observer's left).
* Image coordinates ``(h, v)`` are pixels, origin at the top-left corner,
  ``h`` growing rightward and ``v`` growing downward.
* Ground coordinates ``(x, y)`` are meters in the observer's egocentric
  frame: ``x`` forward, ``y`` to the left. The ground is the plane z = 0.
* The camera sits at ``(0, 0, height)``, pitched downward by ``pitch_rad``
  (positive) and turned left by ``yaw_rad``. Zero roll, zero distortion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

TWO_PI = 2.0 * math.pi

NUM_HEADING_CLASSES = 10
HEADING_CLASS_WIDTH = TWO_PI / NUM_HEADING_CLASSES  # 36 degrees


class HorizonError(ValueError):
    """A back-projected pixel ray points at or above the horizon."""


class ImagePoint(NamedTuple):
    h: float
    v: float


class GroundPoint(NamedTuple):
    x: float
    y: float


class BoundingBox(NamedTuple):
    left: float
    top: float
    width: float
    height: float

    def center(self) -> ImagePoint:
        return ImagePoint(self.left + 0.5 * self.width, self.top + 0.5 * self.height)

    def bottom_center(self) -> ImagePoint:
        return ImagePoint(self.left + 0.5 * self.width, self.top + self.height)


def wrap_angle(theta: float) -> float:
    """Normalize an angle in radians to ``[0, 2*pi)``."""
    theta = math.fmod(theta, TWO_PI)
    if theta < 0.0:
        theta += TWO_PI
    # fmod can return exactly 2*pi after the correction of a tiny negative
    if theta >= TWO_PI:
        theta -= TWO_PI
    return theta


def circ_diff(a: float, b: float) -> float:
    """Circular distance between two angles, in ``[0, pi]``.

    Symmetric, satisfies the triangle inequality, and is zero exactly when
    the angles agree modulo ``2*pi``.
    """
    d = abs(wrap_angle(a) - wrap_angle(b))
    return d if d <= math.pi else TWO_PI - d


def quantize_heading(theta: float) -> int:
    """Map a heading onto one of the ten 36-degree classes.

    Class ``k`` covers ``[k*36 - 18, k*36 + 18)`` degrees, so class centers
    sit on multiples of 36 degrees and boundary angles resolve to the
    larger class index.
    """
    return int((wrap_angle(theta) + 0.5 * HEADING_CLASS_WIDTH) // HEADING_CLASS_WIDTH) % NUM_HEADING_CLASSES


def class_center(k: int) -> float:
    """Center angle of heading class ``k``."""
    if not 0 <= k < NUM_HEADING_CLASSES:
        raise ValueError(f"heading class index out of range: {k}")
    return k * HEADING_CLASS_WIDTH


def relative_to_absolute_heading(rel: float, observer_heading: float, bearing_to_target: float) -> float:
    """Convert a camera-relative heading estimate into the shared absolute frame.

    The target's absolute heading is the observer's own heading, plus the
    bearing at which the target is seen, plus the heading observed relative
    to that viewing ray.
    """
    return wrap_angle(observer_heading + bearing_to_target + rel)


def absolute_to_relative_heading(absolute: float, observer_heading: float, bearing_to_target: float) -> float:
    """Inverse of :func:`relative_to_absolute_heading`."""
    return wrap_angle(absolute - observer_heading - bearing_to_target)


def bearing_to(point: GroundPoint) -> float:
    """Bearing of a ground point from the observer, in ``[0, 2*pi)``.

    Zero is straight ahead; bearings grow toward the observer's left.
    """
    return wrap_angle(math.atan2(point.y, point.x))


@dataclass(frozen=True)
class CameraModel:
    """Ideal pinhole camera posed by height, downward pitch, and yaw.

    ``fx, fy`` are focal lengths and ``cx, cy`` the principal point, all in
    pixels. ``height_m`` is the optical center's height above the ground
    plane. No roll and no lens distortion.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    height_m: float
    pitch_rad: float
    yaw_rad: float = 0.0
    width_px: int = 640
    height_px: int = 480

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.height_m <= 0:
            raise ValueError("camera height must be positive")
        if not 0.0 < self.pitch_rad < 0.5 * math.pi:
            raise ValueError("pitch must lie in (0, pi/2) to see the ground ahead")

    @property
    def image_diag(self) -> float:
        return math.hypot(self.width_px, self.height_px)

    @cached_property
    def _basis(self) -> tuple[tuple[float, float, float], ...]:
        # Camera axes expressed in the observer frame: x_cam right, y_cam
        # down, z_cam along the optical axis.
        sy, cy_ = math.sin(self.yaw_rad), math.cos(self.yaw_rad)
        sp, cp = math.sin(self.pitch_rad), math.cos(self.pitch_rad)
        x_cam = (sy, -cy_, 0.0)
        y_cam = (-cy_ * sp, -sy * sp, -cp)
        z_cam = (cy_ * cp, sy * cp, -sp)
        return x_cam, y_cam, z_cam

    def depth_of(self, x: float, y: float, z: float) -> float:
        """Distance of a world point along the optical axis (may be <= 0)."""
        _, _, zc = self._basis
        dz = z - self.height_m
        return x * zc[0] + y * zc[1] + dz * zc[2]

    def project_point(self, x: float, y: float, z: float) -> ImagePoint:
        """Forward-project a 3-D point in the observer frame onto the image.

        Raises ValueError for points at or behind the camera plane.
        """
        xc, yc, zc = self._basis
        dx, dy, dz = x, y, z - self.height_m
        depth = dx * zc[0] + dy * zc[1] + dz * zc[2]
        if depth <= 0.0:
            raise ValueError("point is behind the camera")
        u = dx * xc[0] + dy * xc[1] + dz * xc[2]
        v = dx * yc[0] + dy * yc[1] + dz * yc[2]
        return ImagePoint(self.fx * u / depth + self.cx, self.fy * v / depth + self.cy)

    def project_ground_point(self, point: GroundPoint) -> ImagePoint:
        return self.project_point(point.x, point.y, 0.0)


def project_to_ground(p: ImagePoint, cam: CameraModel) -> GroundPoint:
    """Intersect the back-projected ray through pixel ``p`` with the ground.

    Raises:
        HorizonError: the ray through ``p`` points at or above the horizon,
            so it never meets the ground in front of the camera.
    """
    xc, yc, zc = cam._basis
    a = (p.h - cam.cx) / cam.fx
    b = (p.v - cam.cy) / cam.fy
    dx = a * xc[0] + b * yc[0] + zc[0]
    dy = a * xc[1] + b * yc[1] + zc[1]
    dz = a * xc[2] + b * yc[2] + zc[2]
    if dz >= 0.0:
        raise HorizonError(f"pixel ({p.h:.1f}, {p.v:.1f}) does not hit the ground")
    t = -cam.height_m / dz
    return GroundPoint(t * dx, t * dy)


def bearing_from_pixel(p: ImagePoint, cam: CameraModel) -> float:
    """Bearing of the target seen at pixel ``p``.

    Uses the ground projection of ``p``; for pixels on or above the horizon
    falls back to the horizontal ray angle, which is the bearing's limit as
    the target recedes.
    """
    try:
        return bearing_to(project_to_ground(p, cam))
    except HorizonError:
        return wrap_angle(cam.yaw_rad + math.atan2(cam.cx - p.h, cam.fx))


def refine_foot_point(
    mask: np.ndarray,
    box: BoundingBox,
    expand: int = 4,
    min_row_count: int = 3,
) -> ImagePoint:
    """Locate the lowest supported foreground row inside an expanded box.

    ``mask`` is a boolean (rows, cols) array where True marks non-background
    pixels. The region of interest is ``box`` grown by ``expand`` pixels on
    every side and clamped to the mask. Rows are scanned bottom-up; the
    first row holding at least ``min_row_count`` foreground pixels wins and
    the returned point is that row's foreground column centroid. If no row
    qualifies, the bounding box bottom-center is returned unchanged.
    """
    rows, cols = mask.shape
    left = max(0, int(math.floor(box.left)) - expand)
    top = max(0, int(math.floor(box.top)) - expand)
    right = min(cols, int(math.ceil(box.left + box.width)) + expand)
    bottom = min(rows, int(math.ceil(box.top + box.height)) + expand)
    if left >= right or top >= bottom:
        return box.bottom_center()

    roi = mask[top:bottom, left:right]
    counts = roi.sum(axis=1)
    qualifying = np.flatnonzero(counts >= min_row_count)
    if qualifying.size == 0:
        return box.bottom_center()

    row = int(qualifying[-1])
    cols_in_row = np.flatnonzero(roi[row])
    return ImagePoint(left + float(cols_in_row.mean()), float(top + row))
