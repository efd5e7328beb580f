"""Offline demonstration-quality analysis of finalized sessions.

Collision and speed-mismatch tick counts come from the recorded event
annotations; scene visibility is recomputed from the stored headset poses
against the session's camera model and watch points, so the analyzer does
not depend on what the engine flagged live.
"""

from __future__ import annotations

from .errors import StateError
from .recording import STATUS_FINALIZED, DemoSession
from .scene import EventKind, check_visibility


def analyze_session(
    session: DemoSession,
    visibility_threshold: float | None = None,
    speed_tick_tolerance: int = 0,
) -> dict:
    """Quality report with the replayability verdict for one session."""
    if session.status != STATUS_FINALIZED:
        raise StateError(f"cannot analyze a {session.status} session")
    config = session.engine_config()
    threshold = visibility_threshold if visibility_threshold is not None else config.visibility_threshold
    watch = config.effective_watch_points()

    collision_ticks = 0
    speed_ticks = 0
    visibility_loss_ticks = 0
    fractions = []
    for frame in session.frames:
        if EventKind.COLLISION in frame.events:
            collision_ticks += 1
        if EventKind.SPEED_LIMIT in frame.events:
            speed_ticks += 1
        camera_pose = frame.headset_pose() * config.camera.mount_offset
        fraction, lost = check_visibility(camera_pose, config.camera, watch, threshold)
        fractions.append(fraction)
        if lost:
            visibility_loss_ticks += 1

    min_fraction = min(fractions) if fractions else 1.0
    mean_fraction = sum(fractions) / len(fractions) if fractions else 1.0
    replayable = (
        collision_ticks == 0
        and speed_ticks <= speed_tick_tolerance
        and min_fraction >= threshold
    )
    return {
        "session_id": session.session_id,
        "frame_count": len(session.frames),
        "collision_ticks": collision_ticks,
        "speed_mismatch_ticks": speed_ticks,
        "visibility_loss_ticks": visibility_loss_ticks,
        "min_visible_fraction": min_fraction,
        "mean_visible_fraction": mean_fraction,
        "visibility_threshold": threshold,
        "speed_tick_tolerance": speed_tick_tolerance,
        "replayable": replayable,
    }


def summary_line(report: dict) -> str:
    verdict = "REPLAYABLE" if report["replayable"] else "NOT REPLAYABLE"
    return (
        f"session {report['session_id']}: {verdict} | "
        f"{report['frame_count']} frames, "
        f"{report['collision_ticks']} collision ticks, "
        f"{report['speed_mismatch_ticks']} speed-mismatch ticks, "
        f"min visibility {report['min_visible_fraction']:.3f} "
        f"(threshold {report['visibility_threshold']:.2f})"
    )
