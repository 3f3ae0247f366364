"""Command-line entry point: simulate scenarios, replay recorded logs,
evaluate reports.

Exit codes: 0 success, 1 configuration error, 2 runtime/data error,
3 acceptance-threshold failure. The HOMOTRACK_LOG environment variable sets
the log level (DEBUG, INFO, WARNING, ERROR).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Iterator

from .geometry import BoundingBox, ImagePoint
from .pipeline import (
    PipelineConfig,
    config_from_resolved,
    resolve_config,
    run_stream,
    scenario_frames,
)
from .reports import ReportFormatError, RunReport, build_report, evaluate_report, write_report
from .simworld import BroadcastEvent, GroundTruthRecord, Scenario, ScenarioError, World, scenario_from_dict
from .tracklets import Detection, FrameInput, NonMonotonicFrame

log = logging.getLogger("homotrack")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_THRESHOLD = 3


class LogFormatError(ValueError):
    """A jsonl log line failed to parse; message carries file:line."""


# --------------------------------------------------------------------------
# jsonl log formats

def _detection_to_dict(d: Detection) -> dict[str, Any]:
    return {
        "box": [d.box.left, d.box.top, d.box.width, d.box.height],
        "center": [d.center.h, d.center.v],
        "foot": [d.foot.h, d.foot.v],
        "heading_class": d.heading_class,
        "confidence": d.heading_confidence,
    }


def _detection_from_dict(obj: dict[str, Any]) -> Detection:
    box = obj["box"]
    return Detection(
        box=BoundingBox(float(box[0]), float(box[1]), float(box[2]), float(box[3])),
        center=ImagePoint(float(obj["center"][0]), float(obj["center"][1])),
        foot=ImagePoint(float(obj["foot"][0]), float(obj["foot"][1])),
        heading_class=int(obj["heading_class"]),
        heading_confidence=float(obj.get("confidence", 1.0)),
    )


def frame_input_to_json(fi: FrameInput) -> str:
    return json.dumps({
        "frame": fi.frame,
        "observer_heading_rad": fi.observer_heading,
        "detections": [_detection_to_dict(d) for d in fi.detections],
    })


def broadcast_to_json(ev: BroadcastEvent) -> str:
    return json.dumps({
        "delivery_s": ev.delivery_s,
        "robot_id": ev.robot_id,
        "heading_rad": ev.heading_rad,
        "stamp_us": ev.stamp_us,
    })


def truth_to_json(rec: GroundTruthRecord) -> str:
    return json.dumps({
        "frame": rec.frame,
        "robot_id": rec.robot_id,
        "x": rec.x,
        "y": rec.y,
        "heading_rad": rec.heading_rad,
        "visible": rec.visible,
    })


def _parse_jsonl(path: Path) -> Iterator[tuple[int, dict[str, Any]]]:
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise LogFormatError(f"{path}:{lineno}: {err}") from err
            if not isinstance(obj, dict):
                raise LogFormatError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def read_detection_log(path: Path) -> list[FrameInput]:
    frames: list[FrameInput] = []
    last = None
    for lineno, obj in _parse_jsonl(path):
        try:
            fi = FrameInput(
                frame=int(obj["frame"]),
                observer_heading=float(obj.get("observer_heading_rad", 0.0)),
                detections=[_detection_from_dict(d) for d in obj["detections"]],
            )
        except (KeyError, TypeError, ValueError, IndexError) as err:
            raise LogFormatError(f"{path}:{lineno}: malformed record ({err})") from err
        if last is not None and fi.frame <= last:
            raise LogFormatError(
                f"{path}:{lineno}: non-monotonic frame index {fi.frame} after {last}")
        last = fi.frame
        frames.append(fi)
    return frames


def read_broadcast_log(path: Path) -> list[BroadcastEvent]:
    events = []
    for lineno, obj in _parse_jsonl(path):
        try:
            events.append(BroadcastEvent(
                delivery_s=float(obj["delivery_s"]),
                robot_id=int(obj["robot_id"]),
                heading_rad=float(obj["heading_rad"]),
                stamp_us=int(obj["stamp_us"]),
            ))
        except (KeyError, TypeError, ValueError) as err:
            raise LogFormatError(f"{path}:{lineno}: malformed record ({err})") from err
    return events


def read_truth_log(path: Path) -> dict[int, list[GroundTruthRecord]]:
    truth: dict[int, list[GroundTruthRecord]] = {}
    for lineno, obj in _parse_jsonl(path):
        try:
            rec = GroundTruthRecord(
                frame=int(obj["frame"]),
                robot_id=int(obj["robot_id"]),
                x=float(obj["x"]),
                y=float(obj["y"]),
                heading_rad=float(obj["heading_rad"]),
                visible=bool(obj["visible"]),
            )
        except (KeyError, TypeError, ValueError) as err:
            raise LogFormatError(f"{path}:{lineno}: malformed record ({err})") from err
        truth.setdefault(rec.frame, []).append(rec)
    return truth


# --------------------------------------------------------------------------
# commands

def cmd_simulate(scenario_path: Path, out_dir: Path, seed: int | None = None,
                 min_accuracy: float | None = None) -> tuple[RunReport, int]:
    try:
        with Path(scenario_path).open() as fh:
            data = json.load(fh)
        scenario = scenario_from_dict(data)
    except FileNotFoundError as err:
        raise ScenarioError(f"{scenario_path}: {err.strerror}") from err
    except json.JSONDecodeError as err:
        raise ScenarioError(
            f"{scenario_path}: line {err.lineno} column {err.colno}: {err.msg}") from err

    config = resolve_config(scenario.camera, scenario.fps, data.get("pipeline"))
    world = World(scenario, seed=seed)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    with (out_dir / "detections.jsonl").open("w") as det_fh, \
            (out_dir / "broadcasts.jsonl").open("w") as bc_fh, \
            (out_dir / "groundtruth.jsonl").open("w") as gt_fh:

        def stream():
            for frame_input, broadcasts, truth in scenario_frames(world):
                det_fh.write(frame_input_to_json(frame_input) + "\n")
                for ev in broadcasts:
                    bc_fh.write(broadcast_to_json(ev) + "\n")
                for rec in truth:
                    gt_fh.write(truth_to_json(rec) + "\n")
                yield frame_input, broadcasts, truth

        results = list(run_stream(config, stream()))

    report = build_report(results, config.resolved, config.correct_gate_m)
    write_report(out_dir, report)
    with (out_dir / "config_resolved.json").open("w") as fh:
        json.dump(config.resolved, fh, indent=2, sort_keys=True)
        fh.write("\n")

    status = EXIT_OK
    accuracy = report.summary["identification_accuracy"]
    if min_accuracy is not None and (accuracy is None or accuracy < min_accuracy):
        status = EXIT_THRESHOLD
    return report, status


def cmd_replay(detections_path: Path, broadcasts_path: Path, config_path: Path,
               groundtruth_path: Path | None = None,
               out_dir: Path | None = None) -> RunReport:
    with Path(config_path).open() as fh:
        resolved = json.load(fh)
    config = config_from_resolved(resolved)

    frames = read_detection_log(detections_path)
    events = read_broadcast_log(broadcasts_path)
    truth_by_frame = read_truth_log(groundtruth_path) if groundtruth_path else None

    def stream():
        pending = events  # the delivery queue orders them; push everything up front
        first = True
        for fi in frames:
            truth = truth_by_frame.get(fi.frame) if truth_by_frame is not None else None
            yield fi, (pending if first else []), truth
            first = False

    results = list(run_stream(config, stream()))
    report = build_report(results, config.resolved, config.correct_gate_m)
    if out_dir is not None:
        write_report(Path(out_dir), report)
        with (Path(out_dir) / "config_resolved.json").open("w") as fh:
            json.dump(config.resolved, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return report


def cmd_eval(report_path: Path, as_json: bool = False,
             min_accuracy: float | None = None) -> tuple[dict[str, Any], int]:
    summary = evaluate_report(Path(report_path))
    eval_path = Path(report_path).parent / "eval.json"
    with eval_path.open("w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

    if as_json:
        print(json.dumps(summary, indent=2, sort_keys=True))
    else:
        _print_summary_table(summary)

    status = EXIT_OK
    accuracy = summary.get("identification_accuracy")
    if min_accuracy is not None and (accuracy is None or accuracy < min_accuracy):
        status = EXIT_THRESHOLD
    return summary, status


def _fmt(value, pattern="{:.3f}") -> str:
    return "-" if value is None else pattern.format(value)


def _print_summary_table(summary: dict[str, Any]) -> None:
    acc = summary.get("identification_accuracy")
    print(f"frames                {summary.get('frames', '-')}")
    print(f"frames with visible   {summary.get('frames_with_visible', '-')}")
    print(f"identification acc.   {_fmt(None if acc is None else 100.0 * acc, '{:.1f}%')}")
    print(f"position RMSE [m]     {_fmt(summary.get('position_rmse_m'))}")
    latency = summary.get("latency") or {}
    if latency:
        print(f"step latency mean     {_fmt(latency.get('mean_us'), '{:.0f} us')}")
        print(f"step latency p95      {_fmt(latency.get('p95_us'), '{:.0f} us')}")


def _print_run_summary(report: RunReport) -> None:
    acc = report.summary["identification_accuracy"]
    rmse = report.summary["position_rmse_m"]
    print(f"frames={report.summary['frames']} "
          f"accuracy={_fmt(None if acc is None else 100.0 * acc, '{:.1f}%')} "
          f"rmse={_fmt(rmse)}m "
          f"tracklets(created/confirmed/deleted)="
          f"{report.summary['tracklets_created']}/"
          f"{report.summary['tracklets_confirmed']}/"
          f"{report.summary['tracklets_deleted']}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="homotrack",
        description="Track and identify a team of identical robots in simulation or from logs.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a scenario end to end")
    sim.add_argument("--scenario", required=True, type=Path)
    sim.add_argument("--out", required=True, type=Path)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--min-accuracy", type=float, default=None)

    rep = sub.add_parser("replay", help="reprocess recorded detection/broadcast logs")
    rep.add_argument("--detections", required=True, type=Path)
    rep.add_argument("--broadcasts", required=True, type=Path)
    rep.add_argument("--config", required=True, type=Path)
    rep.add_argument("--groundtruth", type=Path, default=None)
    rep.add_argument("--out", type=Path, default=None)

    ev = sub.add_parser("eval", help="summarize a report CSV")
    ev.add_argument("--report", required=True, type=Path)
    ev.add_argument("--json", action="store_true")
    ev.add_argument("--min-accuracy", type=float, default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("HOMOTRACK_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    args = build_parser().parse_args(argv)

    try:
        if args.command == "simulate":
            report, status = cmd_simulate(args.scenario, args.out, seed=args.seed,
                                          min_accuracy=args.min_accuracy)
            _print_run_summary(report)
            return status
        if args.command == "replay":
            report = cmd_replay(args.detections, args.broadcasts, args.config,
                                groundtruth_path=args.groundtruth, out_dir=args.out)
            _print_run_summary(report)
            return EXIT_OK
        if args.command == "eval":
            _, status = cmd_eval(args.report, as_json=args.json,
                                 min_accuracy=args.min_accuracy)
            return status
    except ScenarioError as err:
        print(f"scenario error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (LogFormatError, NonMonotonicFrame, ReportFormatError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    except (json.JSONDecodeError, KeyError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    raise AssertionError(args.command)


if __name__ == "__main__":
    sys.exit(main())
