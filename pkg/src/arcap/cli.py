"""Command-line entry points.

Exit codes: 0 success, 2 usage error, 3 data integrity error, 4 protocol
error. The default port is 8765, overridable with --port or ARCAP_PORT.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .analyze import analyze_session, summary_line
from .engine import default_config, load_config
from .errors import ContractViolation, IntegrityError, ProtocolError, StateError
from .geometry import Pose
from .protocol import DEFAULT_PORT, PORT_ENV_VAR, EngineClient, replay_source
from .recording import export_hdf5, postprocess_session, read_session
from .scene import load_point_cloud, save_point_cloud
from .simulate import SCENARIOS, scenario_scene, simulate_to_file

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INTEGRITY = 3
EXIT_PROTOCOL = 4


def _default_port() -> int:
    return int(os.environ.get(PORT_ENV_VAR, DEFAULT_PORT))


def _load_engine_config(args):
    if getattr(args, "config", None):
        config = load_config(args.config)
    else:
        config = default_config(getattr(args, "embodiment", None) or "parallel_gripper")
    if getattr(args, "model", None):
        from .engine import resolve_model
        import dataclasses

        model = resolve_model(args.model)
        config = dataclasses.replace(config, model=model, model_ref=args.model,
                                     embodiment=model.embodiment)
    return config


def _parse_pose(text: str) -> Pose:
    vals = [float(v) for v in text.split(",")]
    if len(vals) == 3:
        return Pose(np.array(vals))
    if len(vals) == 7:
        return Pose(np.array(vals[:3]), np.array(vals[3:]))
    raise ContractViolation("pose must be 'x,y,z' or 'x,y,z,qw,qx,qy,qz'")


def cmd_serve(args) -> int:
    from .server import EngineServer

    config = _load_engine_config(args)
    scene = load_point_cloud(args.scene) if args.scene else None
    console_dir = None
    if args.console:
        console_dir = Path(args.console_dir) if args.console_dir else Path(__file__).resolve().parents[2] / "frontend" / "dist"
        if not console_dir.is_dir():
            print(f"console assets not found at {console_dir}; build frontend/ first", file=sys.stderr)
            return EXIT_USAGE
    server = EngineServer(config, host=args.host, port=args.port, scene=scene,
                          sessions_dir=args.sessions_dir, console_dir=console_dir)
    where = f"{args.host}:{server.port}"
    print(f"serving {config.embodiment} engine on {where}"
          + (f", console at http://{where}/" if console_dir else ""))
    server.serve_forever()
    return EXIT_OK


def cmd_simulate(args) -> int:
    config = load_config(args.config) if args.config else default_config(args.embodiment)
    out = Path(args.output or f"{args.scenario}-{args.seed}.handstream")
    n = simulate_to_file(args.scenario, args.seed, out, config, include_clouds=not args.no_clouds)
    print(f"wrote {n} frames to {out}")
    if args.scene_output:
        save_point_cloud(args.scene_output, scenario_scene(args.scenario, config))
        print(f"wrote scenario scene to {args.scene_output}")
    return EXIT_OK


def cmd_replay(args) -> int:
    frames = list(replay_source(args.input, speed=args.speed))
    client = EngineClient(host=args.host, port=args.port, client_kind="replay")
    try:
        if args.scene:
            client.upload_scene(load_point_cloud(args.scene))
        if args.place:
            client.place_robot(_parse_pose(args.place))
        session_id = None
        if args.record:
            session_id = client.record_start(args.session_id)
        sent = 0
        events = 0
        t_start = time.monotonic()
        first_ts = frames[0][0].timestamp if frames else 0.0
        for frame, cloud in frames:
            if args.realtime:
                deadline = t_start + (frame.timestamp - first_ts)
                delay = deadline - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
            reply = client.step(frame, cloud)
            if reply["type"] == "engine_output":
                events += len(reply["output"]["events"])
            sent += 1
        if args.record:
            client.record_stop("discard" if args.discard else "finalize")
            print(f"recorded session {session_id}")
        print(f"replayed {sent} frames, {events} feedback events")
    finally:
        client.close()
    return EXIT_OK


def _model_override(args):
    if getattr(args, "model", None):
        from .engine import resolve_model

        return resolve_model(args.model)
    return None


def cmd_postprocess(args) -> int:
    session = read_session(args.session)
    processed = postprocess_session(session, model=_model_override(args),
                                    samples_per_sphere=args.samples_per_sphere)
    total_points = sum(len(p.points) for p in processed)
    robot_points = sum(int(np.count_nonzero(p.labels)) for p in processed)
    print(f"processed {len(processed)} frames: {total_points} points "
          f"({robot_points} robot-labeled)")
    if args.output:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        from .scene import ColoredPointCloud

        for i, p in enumerate(processed):
            save_point_cloud(out / f"frame-{i:06d}.pcd", ColoredPointCloud(p.points, p.colors))
        labels = {f"{i:06d}": p.labels.tolist() for i, p in enumerate(processed)}
        (out / "labels.json").write_text(json.dumps(labels, sort_keys=True))
        print(f"wrote world-frame clouds to {out}")
    return EXIT_OK


def cmd_export(args) -> int:
    session = read_session(args.session)
    processed = postprocess_session(session, model=_model_override(args),
                                    samples_per_sphere=args.samples_per_sphere)
    out = Path(args.output or f"session-{session.session_id}.h5")
    export_hdf5(session, processed, out)
    print(f"exported {len(processed)} frames to {out}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    session = read_session(args.session)
    report = analyze_session(session, visibility_threshold=args.visibility_threshold,
                             speed_tick_tolerance=args.speed_tick_tolerance)
    print(json.dumps(report, sort_keys=True, indent=2))
    print(summary_line(report))
    return EXIT_OK if report["replayable"] or not args.strict else 1


def cmd_calibrate(args) -> int:
    from .engine import calibrate_extrinsics

    result = calibrate_extrinsics(_parse_pose(args.robot_base), _parse_pose(args.camera))
    print(json.dumps({"position": [float(x) for x in result.position],
                      "orientation": [float(x) for x in result.orientation]}, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="arcap",
                                     description="Hardware-free AR teleoperation data-collection engine")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_config=True):
        if with_config:
            p.add_argument("--config", help="engine config YAML")
            p.add_argument("--model", help="robot model name or YAML path (overrides config)")
        p.add_argument("--port", type=int, default=_default_port(),
                       help=f"TCP port (default {DEFAULT_PORT}, env {PORT_ENV_VAR})")
        p.add_argument("--host", default="127.0.0.1")

    p = sub.add_parser("serve", help="run the streaming engine service")
    common(p)
    p.add_argument("--scene", help="pre-load a scanned scene point cloud file")
    p.add_argument("--sessions-dir", default="sessions", help="where recorded sessions go")
    p.add_argument("--embodiment", choices=("dex_hand", "parallel_gripper"))
    p.add_argument("--console", action="store_true", help="serve the browser console")
    p.add_argument("--console-dir", help="console asset directory (default frontend/dist)")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("simulate", help="generate a synthetic tracker stream")
    p.add_argument("scenario", choices=SCENARIOS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="engine config YAML (workspace, camera, ...)")
    p.add_argument("--embodiment", choices=("dex_hand", "parallel_gripper"), default="parallel_gripper")
    p.add_argument("-o", "--output", help="output stream file")
    p.add_argument("--scene-output", help="also write the scenario's scene cloud here")
    p.add_argument("--no-clouds", action="store_true", help="omit per-frame depth clouds")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("replay", help="stream a recorded/simulated file to a server")
    p.add_argument("input", help="hand-stream file or session directory")
    common(p, with_config=False)
    p.add_argument("--speed", type=float, default=1.0)
    p.add_argument("--scene", help="upload this scene before streaming")
    p.add_argument("--place", help="place the robot base: 'x,y,z[,qw,qx,qy,qz]'")
    p.add_argument("--record", action="store_true", help="record the stream server-side")
    p.add_argument("--session-id", help="session id to record under")
    p.add_argument("--discard", action="store_true", help="discard instead of finalize")
    p.add_argument("--realtime", action="store_true", help="pace frames by their timestamps")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("postprocess", help="world-frame crop + robot superimposition")
    p.add_argument("session", help="session directory")
    p.add_argument("-o", "--output", help="directory for world-frame clouds")
    p.add_argument("--model", help="override the robot model from the session manifest")
    p.add_argument("--samples-per-sphere", type=int, default=64)
    p.set_defaults(func=cmd_postprocess)

    p = sub.add_parser("export", help="export a session to the HDF5 training layout")
    p.add_argument("session", help="session directory")
    p.add_argument("-o", "--output", help="output .h5 file")
    p.add_argument("--model", help="override the robot model from the session manifest")
    p.add_argument("--samples-per-sphere", type=int, default=64)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("analyze", help="demonstration quality report")
    p.add_argument("session", help="session directory")
    p.add_argument("--visibility-threshold", type=float, default=None)
    p.add_argument("--speed-tick-tolerance", type=int, default=0)
    p.add_argument("--strict", action="store_true", help="exit nonzero when not replayable")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("calibrate", help="camera pose in the robot base frame")
    p.add_argument("--robot-base", required=True, help="world pose 'x,y,z[,qw,qx,qy,qz]'")
    p.add_argument("--camera", required=True, help="world pose 'x,y,z[,qw,qx,qy,qz]'")
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ContractViolation as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IntegrityError, StateError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (ProtocolError, ConnectionError, TimeoutError) as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL


if __name__ == "__main__":
    sys.exit(main())
