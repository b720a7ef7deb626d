"""Operator entry points: serve, sweep, replay, align-check.

Exit codes: 0 success, 1 config/input error, 2 environment error,
3 replay divergence.
"""
from __future__ import annotations

import argparse
import json
import signal
import sys
from statistics import median

from .config import ConfigError, load_config
from .geometry import DegenerateCorrespondences, Vec3, align_frames
from .report import render_sweep_figures
from .simulation import DivergenceError, replay, run_sweep


def _add_config_flag(p: argparse.ArgumentParser):
    p.add_argument("--config", metavar="FILE",
                   help="JSON config file (sections: engine, agent, experiment, net)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gazeguide",
        description="Gaze-contingent attention direction engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the live session server")
    _add_config_flag(p)
    p.add_argument("--port", type=int, help="TCP line-protocol port (default 7070)")
    p.add_argument("--ws-port", type=int, help="WebSocket port (default 8080)")
    p.add_argument("--log-dir", help="directory for session logs (default logs)")
    p.add_argument("--static-dir", help="serve these files over HTTP on the ws port")

    p = sub.add_parser("sweep", help="run the experiment grid and write metrics")
    _add_config_flag(p)
    p.add_argument("--out", default="sweep.csv", help="metrics CSV path")
    p.add_argument("--seed", type=int, help="override experiment seed")
    p.add_argument("--figures-dir",
                   help="directory for summary figures (default: next to the CSV)")
    p.add_argument("--no-figures", action="store_true",
                   help="skip figure rendering")

    p = sub.add_parser("replay", help="verify a session log reproduces exactly")
    p.add_argument("log", help="NDJSON session log")

    p = sub.add_parser("align-check", help="fit and report a frame alignment")
    p.add_argument("pairs", help="JSON file: list of [[rx,ry,rz],[wx,wy,wz]] pairs")

    return parser


def cmd_serve(args) -> int:
    from .server import SessionServer

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    for flag, attr in (("port", "port"), ("ws_port", "ws_port"),
                       ("log_dir", "log_dir"), ("static_dir", "static_dir")):
        value = getattr(args, flag)
        if value is not None:
            setattr(cfg.net, attr, value)
    try:
        server = SessionServer(cfg.engine, cfg.net, world=cfg.experiment.world)
    except OSError as exc:
        print(f"cannot bind port {cfg.net.port} or {cfg.net.ws_port}: {exc}",
              file=sys.stderr)
        return 2

    def shutdown(_signum, _frame):
        server.running.clear()

    signal.signal(signal.SIGTERM, shutdown)
    signal.signal(signal.SIGINT, shutdown)
    print(f"session {server.session_id}: tcp :{cfg.net.port}, "
          f"ws :{cfg.net.ws_port}/ws, log {server.log_path}")
    server.serve_forever()
    return 0


def cmd_sweep(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.experiment.seed = args.seed
        result = run_sweep(cfg.experiment, cfg.engine, out_csv=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    n_episodes = len(result.episodes)
    n_success = sum(1 for _, r in result.episodes if r.record.success)
    t_is = [int(r["t_i_us"]) for r in result.rows if r["t_i_us"] != ""]
    med = median(t_is) / 1000.0 if t_is else float("nan")
    print(f"episodes: {n_episodes}")
    print(f"success rate: {n_success / n_episodes:.3f}")
    print(f"median t_i: {med:.1f} ms")
    print(f"metrics: {args.out}")
    if not args.no_figures:
        out_dir = args.figures_dir or (args.out + ".figures")
        for path in render_sweep_figures(args.out, out_dir):
            print(f"figure: {path}")
    return 0


def cmd_replay(args) -> int:
    try:
        with open(args.log, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        print(f"cannot read {args.log}: {exc}", file=sys.stderr)
        return 1
    try:
        n = replay(lines)
    except DivergenceError as exc:
        print(f"DIVERGENCE at line {exc.line_no}: {exc}")
        return 3
    print(f"MATCH ({n} emissions verified)")
    return 0


def cmd_align_check(args) -> int:
    try:
        with open(args.pairs, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        pairs = [(Vec3.from_seq(p[0]), Vec3.from_seq(p[1])) for p in data]
    except (OSError, ValueError, TypeError, json.JSONDecodeError) as exc:
        print(f"cannot read pairs file: {exc}", file=sys.stderr)
        return 1
    try:
        tf = align_frames(pairs)
    except DegenerateCorrespondences as exc:
        print(f"degenerate correspondences: {exc}", file=sys.stderr)
        return 1
    sq = 0.0
    for src, dst in pairs:
        d = tf.apply(src) - dst
        sq += d.dot(d)
    rms = (sq / len(pairs)) ** 0.5
    w, x, y, z = tf.quat
    t = tf.translation
    print(f"rotation quaternion (w,x,y,z): {w:.9f} {x:.9f} {y:.9f} {z:.9f}")
    print(f"translation (m): {t.x:.9f} {t.y:.9f} {t.z:.9f}")
    print(f"rms residual (m): {rms:.3e}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {
        "serve": cmd_serve,
        "sweep": cmd_sweep,
        "replay": cmd_replay,
        "align-check": cmd_align_check,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
