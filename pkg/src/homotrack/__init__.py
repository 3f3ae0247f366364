"""Tracking and identification of a team of visually identical robots.

Detections of indistinguishable targets are tracked in image space with
per-tracklet constant-acceleration Kalman filters and Hungarian data
association; identities come from matching each tracklet's observed heading
history against the absolute headings the robots broadcast over a lossy
channel. A deterministic simulator stands in for the vision stack and the
radio link so the whole loop can be exercised and measured offline.
"""

from .assignment import Assignment, build_association_cost, gated_pairs, hungarian_solve
from .geometry import (
    BoundingBox,
    CameraModel,
    GroundPoint,
    HorizonError,
    ImagePoint,
    bearing_from_pixel,
    bearing_to,
    circ_diff,
    class_center,
    project_to_ground,
    quantize_heading,
    refine_foot_point,
    relative_to_absolute_heading,
    wrap_angle,
)
from .identify import (
    ChannelBank,
    EmaBank,
    IdentityConfig,
    IdentityMatch,
    RobotChannel,
    RobotEstimate,
    build_identity_cost,
    compute_gamma,
    decode_heading_report,
    emit_estimates,
    encode_heading_report,
    identify,
)
from .kalman import (
    GainSingular,
    KalmanParams,
    KalmanState,
    kf_init,
    kf_position,
    kf_predict,
    kf_update,
)
from .pipeline import Pipeline, PipelineConfig, resolve_config, run_scenario, run_stream
from .simworld import (
    BroadcastEvent,
    CalibratedNoise,
    ChannelModel,
    DetectorModel,
    FallEvent,
    GroundTruthRecord,
    OutageWindow,
    RobotSpec,
    Scenario,
    ScenarioError,
    Waypoint,
    World,
    calibrated_noise_from_table1,
    scenario_from_dict,
    scenario_to_dict,
)
from .tracklets import (
    Detection,
    FrameInput,
    NonMonotonicFrame,
    TrackStatus,
    Tracker,
    TrackerConfig,
    Tracklet,
)

__version__ = "0.1.0"
