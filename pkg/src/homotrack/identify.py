"""Robot-to-tracklet identification from heading buffers and broadcasts.

Each broadcasting robot owns a receiver channel holding its most recent
self-reported absolute headings (``r_rot``) and the pixel positions it was
previously assigned (``r_pos``), both most-recent-first and pushed once per
processed frame. Identification builds a cost matrix whose heading term
averages the index-wise circular differences between a tracklet's observed
headings and a robot's broadcast headings, blended against a normalized
pixel-distance term by the separation factor gamma, and solves it with the
same Hungarian machinery used for frame-to-frame association.

Broadcast reception may happen on a different thread of control than frame
processing: packets go into a per-robot mailbox via
:meth:`ChannelBank.receive` and the frame step drains them atomically with
:meth:`ChannelBank.advance_frame` before any cost is built.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import kalman
from .assignment import gated_pairs, hungarian_solve
from .geometry import GroundPoint, HorizonError, CameraModel, ImagePoint, TWO_PI, project_to_ground, wrap_angle
from .tracklets import Tracklet

PI = math.pi


@dataclass(frozen=True)
class IdentityConfig:
    """Identification constants.

    ``tau`` is the minimum overlapping buffer length before a pairing is
    considered at all; shorter overlaps cost the ``unassigned_cost``
    sentinel. ``gamma_floor_single`` is the heading/position blend used when
    fewer than two robots are broadcasting.
    """

    tau: int = 10
    gamma_floor_single: float = 0.5
    unassigned_cost: float = 2.0
    lowpass_alpha: float = 0.2
    staleness_timeout_s: float = 2.0
    buffer_capacity: int = 60
    ema_reset_after: int = 30

    def __post_init__(self) -> None:
        if self.tau < 1:
            raise ValueError("tau must be at least 1")
        if not 0.0 < self.lowpass_alpha <= 1.0:
            raise ValueError("lowpass_alpha must lie in (0, 1]")


class RobotChannel:
    """Receiver-side state for one broadcasting robot."""

    __slots__ = ("robot_id", "r_rot", "r_pos", "last_rx", "stale", "late_drops", "_retained")

    def __init__(self, robot_id: int, capacity: int):
        self.robot_id = robot_id
        # index 0 = newest entry
        self.r_rot: deque[float] = deque(maxlen=capacity)
        self.r_pos: deque[ImagePoint] = deque(maxlen=capacity)
        self.last_rx: float | None = None
        self.stale = False
        self.late_drops = 0
        self._retained: tuple[int, float] | None = None  # (stamp_us, heading)


class ChannelBank:
    """All robot channels known to the observer, keyed by robot id."""

    def __init__(self, config: IdentityConfig):
        self.config = config
        self._channels: dict[int, RobotChannel] = {}

    def receive(self, robot_id: int, heading_rad: float, stamp_us: int, rx_time: float) -> None:
        """Mailbox a broadcast packet; duplicates and late arrivals are safe.

        The retained heading is the one with the newest sender timestamp;
        strictly older packets only bump the drop diagnostics.
        """
        ch = self._channels.get(robot_id)
        if ch is None:
            ch = RobotChannel(robot_id, self.config.buffer_capacity)
            self._channels[robot_id] = ch
        heading = wrap_angle(heading_rad)
        if ch._retained is None or stamp_us > ch._retained[0]:
            ch._retained = (stamp_us, heading)
        elif stamp_us < ch._retained[0]:
            ch.late_drops += 1
        if ch.last_rx is None or rx_time > ch.last_rx:
            ch.last_rx = rx_time

    def advance_frame(self, now: float) -> None:
        """Push the retained heading of every channel once per processed frame.

        Channels hold their last value across lost packets; the stale flag
        trips once nothing has been received for the staleness timeout.
        """
        timeout = self.config.staleness_timeout_s
        for ch in self._channels.values():
            if ch._retained is not None:
                ch.r_rot.appendleft(ch._retained[1])
            ch.stale = ch.last_rx is not None and (now - ch.last_rx) > timeout

    def channels(self) -> list[RobotChannel]:
        return [self._channels[rid] for rid in sorted(self._channels)]

    def get(self, robot_id: int) -> RobotChannel | None:
        return self._channels.get(robot_id)


def compute_gamma(channels: Sequence[RobotChannel], config: IdentityConfig) -> float:
    """Blend factor between the heading and position cost terms.

    With at least two live (non-stale, non-empty) channels, gamma grows
    with the minimum pairwise separation of the most recent broadcast
    headings, clamped to [0, 1]; otherwise headings carry no discriminating
    power and a fixed 0.5 blend applies.
    """
    heads = [ch.r_rot[0] for ch in channels if ch.r_rot and not ch.stale]
    r = len(heads)
    if r < 2:
        return config.gamma_floor_single
    min_sep = PI
    for a in range(r - 1):
        ha = heads[a]
        for b in range(a + 1, r):
            d = abs(ha - heads[b])
            if d > PI:
                d = TWO_PI - d
            if d < min_sep:
                min_sep = d
    gamma = r * min_sep / TWO_PI
    return min(max(gamma, 0.0), 1.0)


def build_identity_cost(
    tracklets: Sequence[Tracklet],
    channels: Sequence[RobotChannel],
    gamma: float,
    config: IdentityConfig,
    image_diag: float,
) -> np.ndarray:
    """Cost of pairing each tracklet (row) with each robot channel (column).

    For an overlapping buffer length ``D = min(|t_rot|, |r_rot|) >= tau``
    the cost is the gamma-weighted mean circular heading difference over
    the D most recent entries (normalized by pi) plus the (1 - gamma)
    weighted pixel distance between the newest tracklet position and the
    robot's last assigned position (normalized by the image diagonal, and
    capped there so real costs stay below the sentinel). Pairs with too
    little overlap cost the sentinel; robots never assigned before carry a
    zero position term.
    """
    n, r = len(tracklets), len(channels)
    g = np.empty((n, r))
    sentinel = config.unassigned_cost
    for i, t in enumerate(tracklets):
        t_rot = t.t_rot
        t_len = len(t_rot)
        newest_pos = t.t_pos[0] if t.t_pos else None
        for j, ch in enumerate(channels):
            d_i = min(t_len, len(ch.r_rot))
            if d_i < config.tau or newest_pos is None:
                g[i, j] = sentinel
                continue
            total = 0.0
            for ta, ra in zip(t_rot, ch.r_rot):
                d = abs(ta - ra)
                if d > PI:
                    d = TWO_PI - d
                total += d
            heading_term = gamma * total / (PI * d_i)
            if ch.r_pos:
                rp = ch.r_pos[0]
                dist = math.hypot(newest_pos[0] - rp[0], newest_pos[1] - rp[1])
                pos_term = (1.0 - gamma) * min(dist, image_diag) / image_diag
            else:
                pos_term = 0.0
            g[i, j] = heading_term + pos_term
    return g


class IdentityMatch(NamedTuple):
    tracklet_id: int
    robot_id: int
    cost: float


def identify(
    tracklets: Sequence[Tracklet],
    channels: Sequence[RobotChannel],
    config: IdentityConfig,
    image_diag: float,
) -> list[IdentityMatch]:
    """Optimal robot-to-tracklet assignment for the current frame.

    Recomputed from scratch every frame with no hysteresis; pairs that hit
    the unassigned sentinel dissolve into an unidentified tracklet and an
    unseen robot. Rows are ordered by tracklet id and columns by robot id,
    so the result is deterministic.
    """
    tracklets = sorted(tracklets, key=lambda t: t.id)
    channels = sorted(channels, key=lambda c: c.robot_id)
    if not tracklets or not channels:
        return []
    gamma = compute_gamma(channels, config)
    g = build_identity_cost(tracklets, channels, gamma, config, image_diag)
    matched, _, _ = gated_pairs(hungarian_solve(g), g, config.unassigned_cost)
    return [
        IdentityMatch(tracklets[i].id, channels[j].robot_id, float(g[i, j]))
        for i, j in matched
    ]


@dataclass
class RobotEstimate:
    """Final per-robot output: filtered egocentric position and heading."""

    robot_id: int
    tracklet_id: int
    ground: GroundPoint
    heading: float
    confidence: float


class EmaBank:
    """Per-robot exponential moving average over emitted world coordinates."""

    def __init__(self, config: IdentityConfig):
        self.config = config
        self._state: dict[int, tuple[float, float]] = {}
        self._idle: dict[int, int] = {}

    def update(self, robot_id: int, raw: GroundPoint) -> GroundPoint:
        alpha = self.config.lowpass_alpha
        prev = self._state.get(robot_id)
        if prev is None:
            filtered = (raw.x, raw.y)
        else:
            filtered = (
                alpha * raw.x + (1.0 - alpha) * prev[0],
                alpha * raw.y + (1.0 - alpha) * prev[1],
            )
        self._state[robot_id] = filtered
        self._idle[robot_id] = 0
        return GroundPoint(*filtered)

    def tick_unassigned(self, robot_id: int) -> None:
        count = self._idle.get(robot_id, 0) + 1
        self._idle[robot_id] = count
        if count > self.config.ema_reset_after:
            self._state.pop(robot_id, None)


def emit_estimates(
    matches: Iterable[IdentityMatch],
    tracklets_by_id: dict[int, Tracklet],
    channels: ChannelBank,
    camera: CameraModel,
    config: IdentityConfig,
    ema: EmaBank,
) -> list[RobotEstimate]:
    """Turn the frame's identity assignment into filtered world estimates.

    The latest matched detection's foot point projects to the ground and
    feeds the per-robot low-pass filter; the robot's channel records the
    tracklet's current pixel position for the next frame's position term.
    A foot point on or above the horizon invalidates only that robot's
    estimate for this frame and leaves its filter untouched.
    """
    estimates: list[RobotEstimate] = []
    assigned: set[int] = set()
    for match in sorted(matches, key=lambda m: m.robot_id):
        t = tracklets_by_id[match.tracklet_id]
        ch = channels.get(match.robot_id)
        assigned.add(match.robot_id)
        if ch is not None:
            ch.r_pos.appendleft(kalman.kf_position(t.kf))
        if t.last_foot is None:
            continue
        try:
            raw = project_to_ground(t.last_foot, camera)
        except HorizonError:
            continue
        filtered = ema.update(match.robot_id, raw)
        estimates.append(
            RobotEstimate(
                robot_id=match.robot_id,
                tracklet_id=match.tracklet_id,
                ground=filtered,
                heading=t.t_rot[0],
                confidence=max(0.0, 1.0 - min(match.cost, 1.0)),
            )
        )
    for ch in channels.channels():
        if ch.robot_id not in assigned:
            ema.tick_unassigned(ch.robot_id)
    return estimates


class HeadingReport(NamedTuple):
    """Decoded broadcast datagram."""

    robot_id: int
    heading_rad: float
    stamp_us: int


def encode_heading_report(robot_id: int, heading_rad: float, stamp_us: int) -> bytes:
    """Serialize one broadcast datagram.

    The wire format is a single ASCII JSON object with exactly the keys
    ``robot_id`` (integer), ``heading_rad`` (float, shortest round-trip
    decimal form), and ``stamp_us`` (integer), in that order, separated by
    ", " with ": " after each key and no trailing newline.
    """
    return (
        f'{{"robot_id": {int(robot_id)}, "heading_rad": {float(heading_rad)!r}, '
        f'"stamp_us": {int(stamp_us)}}}'
    ).encode("ascii")


def decode_heading_report(data: bytes | str) -> HeadingReport:
    """Parse one broadcast datagram; raises ValueError on malformed input."""
    if isinstance(data, bytes):
        data = data.decode("ascii")
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as err:
        raise ValueError(f"malformed heading report: {err}") from err
    if not isinstance(obj, dict):
        raise ValueError("heading report must be a JSON object")
    try:
        robot_id = obj["robot_id"]
        heading = obj["heading_rad"]
        stamp = obj["stamp_us"]
    except KeyError as err:
        raise ValueError(f"heading report missing field {err.args[0]!r}") from err
    if not isinstance(robot_id, int) or isinstance(robot_id, bool):
        raise ValueError("robot_id must be an integer")
    if not isinstance(heading, (int, float)) or isinstance(heading, bool):
        raise ValueError("heading_rad must be a number")
    if not isinstance(stamp, int) or isinstance(stamp, bool):
        raise ValueError("stamp_us must be an integer")
    return HeadingReport(robot_id, float(heading), stamp)
