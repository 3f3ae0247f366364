"""End-to-end driver: tracker plus identification over a frame stream.

The same code path serves live simulation and log replay, which is what
makes replayed reports byte-identical: given identical frame inputs and
broadcast deliveries, every downstream value is recomputed bit-for-bit.
Only wall-clock step latencies differ, and those never enter the report
proper.
"""

from __future__ import annotations

import heapq
import json
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Iterable, Iterator

from .geometry import CameraModel
from .identify import ChannelBank, EmaBank, IdentityConfig, RobotEstimate, emit_estimates, identify
from .kalman import KalmanParams
from .simworld import BroadcastEvent, GroundTruthRecord, Scenario, World
from .tracklets import FrameInput, StepEvents, Tracker, TrackerConfig


def load_defaults() -> dict[str, Any]:
    with resources.files("homotrack").joinpath("defaults.json").open("rb") as fh:
        return json.load(fh)


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


@dataclass(frozen=True)
class PipelineConfig:
    """Fully resolved pipeline parameters plus their plain-dict form.

    ``resolved`` is embedded verbatim into run summaries so every report
    records exactly the configuration that produced it.
    """

    camera: CameraModel
    fps: float
    tracker: TrackerConfig
    identity: IdentityConfig
    correct_gate_m: float
    resolved: dict[str, Any] = field(repr=False)


def resolve_config(camera: CameraModel, fps: float,
                   overrides: dict[str, Any] | None = None) -> PipelineConfig:
    """Layer overrides onto the packaged defaults and bind them to a camera.

    Null gate radii in the defaults scale with the camera diagonal
    (100 px and 50 px on a 640x480 stream).
    """
    merged = _merge(load_defaults(), overrides or {})
    trk = merged["tracker"]
    diag = camera.image_diag
    d_max = trk["d_max_px"] if trk["d_max_px"] is not None else 100.0 * diag / 800.0
    vicinity = (trk["vicinity_radius_px"] if trk["vicinity_radius_px"] is not None
                else 0.5 * d_max)
    kal = trk["kalman"]
    kparams = KalmanParams.defaults(
        dt=1.0 / fps,
        sigma_accel=kal["sigma_accel"],
        meas_std=kal["meas_std"],
        pos_var=kal["pos_var"],
        deriv_var=kal["deriv_var"],
    )
    tracker_cfg = TrackerConfig(
        camera=camera,
        kalman=kparams,
        d_max=d_max,
        vicinity_radius=vicinity,
        confirm_hits=trk["confirm_hits"],
        delete_after=trk["delete_after"],
        buffer_capacity=trk["buffer_capacity"],
    )
    ident = merged["identity"]
    identity_cfg = IdentityConfig(
        tau=ident["tau"],
        gamma_floor_single=ident["gamma_floor_single"],
        unassigned_cost=ident["unassigned_cost"],
        lowpass_alpha=ident["lowpass_alpha"],
        staleness_timeout_s=ident["staleness_timeout_s"],
        buffer_capacity=trk["buffer_capacity"],
        ema_reset_after=ident["ema_reset_after"],
    )

    resolved = {
        "fps": fps,
        "camera": {
            "fx": camera.fx, "fy": camera.fy, "cx": camera.cx, "cy": camera.cy,
            "height_m": camera.height_m, "pitch_rad": camera.pitch_rad,
            "yaw_rad": camera.yaw_rad, "width_px": camera.width_px,
            "height_px": camera.height_px,
        },
        "tracker": {
            "d_max_px": d_max,
            "vicinity_radius_px": vicinity,
            "confirm_hits": trk["confirm_hits"],
            "delete_after": trk["delete_after"],
            "buffer_capacity": trk["buffer_capacity"],
            "kalman": dict(kal),
        },
        "identity": dict(ident),
        "report": dict(merged["report"]),
    }
    return PipelineConfig(
        camera=camera,
        fps=fps,
        tracker=tracker_cfg,
        identity=identity_cfg,
        correct_gate_m=merged["report"]["correct_gate_m"],
        resolved=resolved,
    )


def config_from_resolved(resolved: dict[str, Any]) -> PipelineConfig:
    """Rebuild a pipeline configuration from a previously written resolved dict."""
    cam = resolved["camera"]
    camera = CameraModel(
        fx=cam["fx"], fy=cam["fy"], cx=cam["cx"], cy=cam["cy"],
        height_m=cam["height_m"], pitch_rad=cam["pitch_rad"],
        yaw_rad=cam.get("yaw_rad", 0.0),
        width_px=cam["width_px"], height_px=cam["height_px"],
    )
    overrides = {
        "tracker": resolved["tracker"],
        "identity": resolved["identity"],
        "report": resolved.get("report", {}),
    }
    return resolve_config(camera, resolved["fps"], overrides)


@dataclass
class FrameResult:
    frame: int
    estimates: list[RobotEstimate]
    events: StepEvents
    truth: list[GroundTruthRecord] | None
    latency_s: float


class Pipeline:
    """Sequential per-frame processing state shared by simulate and replay."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.tracker = Tracker(config.tracker)
        self.channels = ChannelBank(config.identity)
        self.ema = EmaBank(config.identity)

    def process_frame(self, frame_input: FrameInput,
                      deliveries: Iterable[BroadcastEvent]) -> tuple[list[RobotEstimate], StepEvents, float]:
        cfg = self.config
        now = frame_input.frame / cfg.fps
        start = time.perf_counter()
        for ev in deliveries:
            self.channels.receive(ev.robot_id, ev.heading_rad, ev.stamp_us, ev.delivery_s)
        events = self.tracker.step(frame_input)
        self.channels.advance_frame(now)
        confirmed = self.tracker.confirmed()
        matches = identify(confirmed, self.channels.channels(), cfg.identity,
                           cfg.camera.image_diag)
        estimates = emit_estimates(
            matches, {t.id: t for t in confirmed}, self.channels,
            cfg.camera, cfg.identity, self.ema,
        )
        latency = time.perf_counter() - start
        return estimates, events, latency


class DeliveryQueue:
    """Orders broadcast events by delivery time, deterministically."""

    def __init__(self) -> None:
        self._heap: list[BroadcastEvent] = []

    def push(self, events: Iterable[BroadcastEvent]) -> None:
        for ev in events:
            heapq.heappush(self._heap, ev)

    def due(self, now: float) -> list[BroadcastEvent]:
        out = []
        while self._heap and self._heap[0].delivery_s <= now:
            out.append(heapq.heappop(self._heap))
        return out


def run_stream(
    config: PipelineConfig,
    frames: Iterable[tuple[FrameInput, list[BroadcastEvent], list[GroundTruthRecord] | None]],
) -> Iterator[FrameResult]:
    """Drive the pipeline over (frame, new broadcasts, truth) triples.

    Broadcasts are queued by delivery time and drained at the start of the
    frame in which they become due, simulating receive-side asynchrony
    without threads.
    """
    pipeline = Pipeline(config)
    queue = DeliveryQueue()
    for frame_input, broadcasts, truth in frames:
        queue.push(broadcasts)
        now = frame_input.frame / config.fps
        estimates, events, latency = pipeline.process_frame(frame_input, queue.due(now))
        yield FrameResult(frame=frame_input.frame, estimates=estimates,
                          events=events, truth=truth, latency_s=latency)


def scenario_frames(world: World) -> Iterator[tuple[FrameInput, list[BroadcastEvent], list[GroundTruthRecord]]]:
    for frame in range(world.scenario.duration):
        yield world.simulate_frame(frame)


def run_scenario(scenario: Scenario, overrides: dict[str, Any] | None = None,
                 seed: int | None = None) -> list[FrameResult]:
    """Convenience wrapper: simulate a scenario end to end, in memory."""
    config = resolve_config(scenario.camera, scenario.fps, overrides)
    world = World(scenario, seed=seed)
    return list(run_stream(config, scenario_frames(world)))
