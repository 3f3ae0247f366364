"""Run reports: per-frame records, summary metrics, and their file forms.

A run writes three files: ``report.csv`` (one row per robot per frame),
``summary.json`` (aggregate metrics plus the resolved configuration), and
``timing.json`` (wall-clock step latencies). The first two are fully
deterministic for a given input stream; latencies are measurements and live
in their own sidecar so that replaying a recorded run reproduces the report
byte for byte.

A frame counts as correctly identified when every visible robot has an
estimate whose position is closer to that robot's true position than to any
other robot's, within the gate distance. Identification accuracy is the
fraction of such frames among frames with at least one visible robot.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

from .pipeline import FrameResult

REPORT_COLUMNS = [
    "frame", "robot_id", "tracklet_id",
    "est_x_m", "est_y_m", "est_heading_rad", "confidence",
    "true_x_m", "true_y_m", "true_heading_rad", "visible", "correct",
]


@dataclass
class ReportRow:
    frame: int
    robot_id: int
    tracklet_id: int | None = None
    est_x_m: float | None = None
    est_y_m: float | None = None
    est_heading_rad: float | None = None
    confidence: float | None = None
    true_x_m: float | None = None
    true_y_m: float | None = None
    true_heading_rad: float | None = None
    visible: bool | None = None
    correct: bool | None = None


@dataclass
class RunReport:
    rows: list[ReportRow]
    summary: dict[str, Any]
    latencies_us: list[float]


def _row_correct(row: ReportRow, truth_positions: dict[int, tuple[float, float]],
                 gate_m: float) -> bool:
    if row.est_x_m is None or row.true_x_m is None:
        return False
    dist_own = math.hypot(row.est_x_m - row.true_x_m, row.est_y_m - row.true_y_m)
    if dist_own > gate_m:
        return False
    for rid, (tx, ty) in truth_positions.items():
        if rid == row.robot_id:
            continue
        if math.hypot(row.est_x_m - tx, row.est_y_m - ty) < dist_own:
            return False
    return True


def build_report(results: Iterable[FrameResult], resolved_config: dict[str, Any],
                 gate_m: float) -> RunReport:
    rows: list[ReportRow] = []
    latencies_us: list[float] = []
    frames = 0
    frames_with_visible = 0
    correct_frames = 0
    created = confirmed = deleted = 0
    sq_err_sum = 0.0
    sq_err_count = 0

    for result in results:
        frames += 1
        latencies_us.append(result.latency_s * 1e6)
        created += len(result.events.created)
        confirmed += len(result.events.confirmed)
        deleted += len(result.events.deleted)

        est_by_robot = {e.robot_id: e for e in result.estimates}
        truth = result.truth
        if truth is None:
            for est in sorted(result.estimates, key=lambda e: e.robot_id):
                rows.append(ReportRow(
                    frame=result.frame, robot_id=est.robot_id,
                    tracklet_id=est.tracklet_id,
                    est_x_m=est.ground.x, est_y_m=est.ground.y,
                    est_heading_rad=est.heading, confidence=est.confidence,
                ))
            continue

        truth_positions = {t.robot_id: (t.x, t.y) for t in truth}
        frame_rows: list[ReportRow] = []
        for t in sorted(truth, key=lambda t: t.robot_id):
            est = est_by_robot.get(t.robot_id)
            row = ReportRow(
                frame=result.frame, robot_id=t.robot_id,
                true_x_m=t.x, true_y_m=t.y, true_heading_rad=t.heading_rad,
                visible=t.visible,
            )
            if est is not None:
                row.tracklet_id = est.tracklet_id
                row.est_x_m = est.ground.x
                row.est_y_m = est.ground.y
                row.est_heading_rad = est.heading
                row.confidence = est.confidence
            if t.visible:
                row.correct = _row_correct(row, truth_positions, gate_m)
                if est is not None:
                    sq_err_sum += (est.ground.x - t.x) ** 2 + (est.ground.y - t.y) ** 2
                    sq_err_count += 1
            frame_rows.append(row)
        # estimates claiming robots absent from ground truth still get rows
        for est in sorted(result.estimates, key=lambda e: e.robot_id):
            if est.robot_id not in truth_positions:
                frame_rows.append(ReportRow(
                    frame=result.frame, robot_id=est.robot_id,
                    tracklet_id=est.tracklet_id,
                    est_x_m=est.ground.x, est_y_m=est.ground.y,
                    est_heading_rad=est.heading, confidence=est.confidence,
                ))
        rows.extend(frame_rows)

        visible_rows = [r for r in frame_rows if r.visible]
        if visible_rows:
            frames_with_visible += 1
            if all(r.correct for r in visible_rows):
                correct_frames += 1

    accuracy = correct_frames / frames_with_visible if frames_with_visible else None
    rmse = math.sqrt(sq_err_sum / sq_err_count) if sq_err_count else None
    summary = {
        "frames": frames,
        "frames_with_visible": frames_with_visible,
        "correct_frames": correct_frames,
        "identification_accuracy": accuracy,
        "position_rmse_m": rmse,
        "tracklets_created": created,
        "tracklets_confirmed": confirmed,
        "tracklets_deleted": deleted,
        "config": resolved_config,
    }
    return RunReport(rows=rows, summary=summary, latencies_us=latencies_us)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(float(value))  # plain-float repr even for numpy scalars
    return str(value)


def write_report(outdir: Path, report: RunReport) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    with (outdir / "report.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for row in report.rows:
            writer.writerow([
                _cell(row.frame), _cell(row.robot_id), _cell(row.tracklet_id),
                _cell(row.est_x_m), _cell(row.est_y_m), _cell(row.est_heading_rad),
                _cell(row.confidence), _cell(row.true_x_m), _cell(row.true_y_m),
                _cell(row.true_heading_rad), _cell(row.visible), _cell(row.correct),
            ])
    with (outdir / "summary.json").open("w") as fh:
        json.dump(report.summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_timing(outdir, report.latencies_us)


def latency_stats(latencies_us: list[float]) -> dict[str, float | None]:
    if not latencies_us:
        return {"mean_us": None, "p50_us": None, "p95_us": None, "max_us": None}
    ordered = sorted(latencies_us)
    n = len(ordered)
    return {
        "mean_us": sum(ordered) / n,
        "p50_us": ordered[n // 2],
        "p95_us": ordered[min(n - 1, int(0.95 * n))],
        "max_us": ordered[-1],
    }


def write_timing(outdir: Path, latencies_us: list[float]) -> None:
    payload = dict(latency_stats(latencies_us))
    payload["per_frame_us"] = latencies_us
    with (Path(outdir) / "timing.json").open("w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


class ReportFormatError(ValueError):
    """A report CSV is missing required columns or has malformed cells."""


def _parse_cell(value: str, kind):
    if value == "":
        return None
    if kind is bool:
        return value == "1"
    return kind(value)


def read_report_rows(report_csv: Path) -> list[ReportRow]:
    with Path(report_csv).open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in REPORT_COLUMNS if c not in header]
        if missing:
            raise ReportFormatError(f"report is missing columns: {', '.join(missing)}")
        rows = []
        for rec in reader:
            rows.append(ReportRow(
                frame=int(rec["frame"]),
                robot_id=int(rec["robot_id"]),
                tracklet_id=_parse_cell(rec["tracklet_id"], int),
                est_x_m=_parse_cell(rec["est_x_m"], float),
                est_y_m=_parse_cell(rec["est_y_m"], float),
                est_heading_rad=_parse_cell(rec["est_heading_rad"], float),
                confidence=_parse_cell(rec["confidence"], float),
                true_x_m=_parse_cell(rec["true_x_m"], float),
                true_y_m=_parse_cell(rec["true_y_m"], float),
                true_heading_rad=_parse_cell(rec["true_heading_rad"], float),
                visible=_parse_cell(rec["visible"], bool),
                correct=_parse_cell(rec["correct"], bool),
            ))
    return rows


def evaluate_report(report_csv: Path) -> dict[str, Any]:
    """Recompute summary metrics from a report CSV's recorded flags.

    Uses the per-row correctness already in the file, so it works on
    reports produced elsewhere as long as the columns match.
    """
    rows = read_report_rows(report_csv)
    by_frame: dict[int, list[ReportRow]] = {}
    for row in rows:
        by_frame.setdefault(row.frame, []).append(row)

    frames_with_visible = 0
    correct_frames = 0
    sq_err_sum = 0.0
    sq_err_count = 0
    for frame_rows in by_frame.values():
        visible = [r for r in frame_rows if r.visible]
        if not visible:
            continue
        frames_with_visible += 1
        if all(r.correct for r in visible):
            correct_frames += 1
        for r in visible:
            if r.est_x_m is not None and r.true_x_m is not None:
                sq_err_sum += (r.est_x_m - r.true_x_m) ** 2 + (r.est_y_m - r.true_y_m) ** 2
                sq_err_count += 1

    accuracy = correct_frames / frames_with_visible if frames_with_visible else None
    rmse = math.sqrt(sq_err_sum / sq_err_count) if sq_err_count else None
    summary: dict[str, Any] = {
        "frames": len(by_frame),
        "frames_with_visible": frames_with_visible,
        "correct_frames": correct_frames,
        "identification_accuracy": accuracy,
        "position_rmse_m": rmse,
    }
    timing_path = Path(report_csv).parent / "timing.json"
    if timing_path.exists():
        with timing_path.open() as fh:
            timing = json.load(fh)
        summary["latency"] = {k: timing.get(k) for k in ("mean_us", "p50_us", "p95_us", "max_us")}
    return summary
