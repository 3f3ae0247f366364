"""Shared scenario builders for the test suite."""

import math

from homotrack.geometry import CameraModel
from homotrack.simworld import (
    ChannelModel,
    DetectorModel,
    FallEvent,
    OutageWindow,
    RobotSpec,
    Scenario,
    Waypoint,
    calibrated_noise_from_table1,
)


def nominal_camera() -> CameraModel:
    """640x480 pinhole, ~60 degree horizontal FOV, chest-height mount."""
    return CameraModel(fx=554.0, fy=554.0, cx=320.0, cy=240.0,
                       height_m=0.8, pitch_rad=math.radians(25.0),
                       width_px=640, height_px=480)


# Standing spots that are comfortably inside the camera frustum, paired
# with well-separated headings (72 degrees apart).
PARKED_SPOTS = [
    (2.0, -0.8, math.radians(0.0)),
    (2.4, 0.7, math.radians(72.0)),
    (1.6, 0.2, math.radians(144.0)),
    (3.0, -0.2, math.radians(216.0)),
    (2.8, 1.0, math.radians(288.0)),
]


def parked_scenario(n_robots: int, duration: int, seed: int = 0,
                    detector: DetectorModel | None = None,
                    channel: ChannelModel | None = None,
                    heading_noise_rad: float = 0.0,
                    falls: dict[int, list[FallEvent]] | None = None) -> Scenario:
    """Robots standing still at distinct spots with distinct headings."""
    robots = []
    for i in range(n_robots):
        x, y, heading = PARKED_SPOTS[i]
        robots.append(RobotSpec(
            robot_id=i + 1,
            waypoints=(Waypoint(x, y, heading),),
            fall_events=tuple((falls or {}).get(i + 1, ())),
        ))
    return Scenario(
        seed=seed, duration=duration, fps=20.0, camera=nominal_camera(),
        robots=tuple(robots),
        detector=detector or DetectorModel(center_jitter_px=0.0),
        channel=channel or ChannelModel(delay_mean_ms=0.0, delay_std_ms=0.0),
        heading_noise_rad=heading_noise_rad,
    )


def patrol_scenario(duration: int, seed: int = 0,
                    detector: DetectorModel | None = None,
                    channel: ChannelModel | None = None,
                    heading_noise_rad: float = 0.0,
                    falls: dict[int, list[FallEvent]] | None = None) -> Scenario:
    """Two robots pacing opposite lanes with mostly distinct headings."""
    r1 = RobotSpec(
        robot_id=1,
        waypoints=(
            Waypoint(1.6, -0.9, math.radians(30.0), dwell_frames=20),
            Waypoint(3.0, -0.5, math.radians(60.0), dwell_frames=20),
            Waypoint(2.2, -1.0, math.radians(0.0), dwell_frames=20),
        ),
        walk_speed=0.3, turn_rate=1.0,
        fall_events=tuple((falls or {}).get(1, ())),
    )
    r2 = RobotSpec(
        robot_id=2,
        waypoints=(
            Waypoint(2.8, 0.9, math.radians(170.0), dwell_frames=20),
            Waypoint(1.7, 0.5, math.radians(210.0), dwell_frames=20),
            Waypoint(2.4, 1.1, math.radians(150.0), dwell_frames=20),
        ),
        walk_speed=0.3, turn_rate=1.0,
        fall_events=tuple((falls or {}).get(2, ())),
    )
    return Scenario(
        seed=seed, duration=duration, fps=20.0, camera=nominal_camera(),
        robots=(r1, r2),
        detector=detector or DetectorModel(center_jitter_px=0.0),
        channel=channel or ChannelModel(delay_mean_ms=0.0, delay_std_ms=0.0),
        heading_noise_rad=heading_noise_rad,
    )


def table1_detector() -> DetectorModel:
    noise = calibrated_noise_from_table1()
    return DetectorModel(center_jitter_px=3.0, miss_rate=noise.miss_rate,
                         false_positive_rate=noise.false_positive_rate,
                         occlusion=True)


def table1_scenario(duration: int = 932, seed: int = 0,
                    channel: ChannelModel | None = None,
                    falls: dict[int, list[FallEvent]] | None = None) -> Scenario:
    """Two-robot patrol with all noise rates calibrated from the reported
    real-image detector/heading success rates."""
    noise = calibrated_noise_from_table1()
    return patrol_scenario(
        duration=duration, seed=seed,
        detector=table1_detector(),
        channel=channel or ChannelModel(delay_mean_ms=50.0, delay_std_ms=30.0,
                                        magnetometer_noise_rad=math.radians(2.0)),
        heading_noise_rad=noise.heading_sigma_rad,
        falls=falls,
    )
