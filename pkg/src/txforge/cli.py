"""Command-line entry points.

Exit codes: 0 when the session found no synchronization violations, 2 when
at least one assertion was violated, 1 on operational errors (bad config,
unreadable log, I/O failures). ``TXFORGE_SEED`` overrides the config seed;
an explicit ``--seed`` flag overrides both.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import signal
import sys
import threading
from pathlib import Path

from .config import ConfigError, MODES, SessionConfig, config_from_mapping, load_config
from .orchestrator import OrchestratorError, ReplayError, replay_session, run_session
from .reporting import render_text, report_to_json_bytes, report_to_mapping
from .server import ServeSession

logger = logging.getLogger(__name__)

SEED_ENV_VAR = "TXFORGE_SEED"


def _resolve_config(args: argparse.Namespace) -> SessionConfig:
    if args.config is not None:
        config = load_config(args.config)
    else:
        config = config_from_mapping({})
    overrides: dict = {}
    if getattr(args, "mode", None) is not None:
        if args.mode not in MODES:
            raise ConfigError(f"unknown mode {args.mode!r} (choose from {sorted(MODES)})")
        overrides["mode"] = args.mode
    seed = _resolve_seed(args)
    if seed is not None:
        overrides["seed"] = seed
    if overrides:
        config = dataclasses.replace(config, **overrides)
    return config


def _resolve_seed(args: argparse.Namespace) -> int | None:
    if getattr(args, "seed", None) is not None:
        return args.seed
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}") from None


def _exit_code(has_violations: bool) -> int:
    return 2 if has_violations else 0


def cmd_run(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    report = run_session(config, out_dir=args.out)
    report_path = Path(args.out) / "report.json"
    mapping = json.loads(report_path.read_text(encoding="utf-8"))
    print(render_text(mapping))
    print(f"report written to {report_path}")
    return _exit_code(report.has_violations)


def cmd_serve(args: argparse.Namespace) -> int:
    from .orchestrator import Session

    config = _resolve_config(args)
    if config.clock != "wall":
        # Snapshot waits must hold off in real time while an external DApp
        # processes events, so a served node always runs on the wall clock.
        print("serve: forcing clock=wall (simulated time has no meaning for "
              "external clients)", file=sys.stderr)
        config = dataclasses.replace(config, clock="wall")
    session = Session(config)
    serve = ServeSession(session)
    (http_host, http_port), (ev_host, ev_port) = serve.start()
    print(f"READY http={http_host}:{http_port} events={ev_host}:{ev_port}", flush=True)

    stop = threading.Event()

    def _signal_handler(signum, frame) -> None:
        stop.set()

    old_handlers = {}
    for sig in (signal.SIGINT, signal.SIGTERM):
        old_handlers[sig] = signal.signal(sig, _signal_handler)
    try:
        stop.wait(timeout=args.duration)
    finally:
        for sig, handler in old_handlers.items():
            signal.signal(sig, handler)
    report = serve.stop()
    mapping = report_to_mapping(report)
    if args.out:
        out_path = Path(args.out)
        out_path.mkdir(parents=True, exist_ok=True)
        (out_path / "report.json").write_bytes(report_to_json_bytes(report))
        (out_path / "report.txt").write_text(render_text(mapping) + "\n", encoding="utf-8")
    print(render_text(mapping))
    return _exit_code(report.has_violations)


def cmd_replay(args: argparse.Namespace) -> int:
    report = replay_session(args.log)
    mapping = report_to_mapping(report)
    print(render_text(mapping))
    return _exit_code(report.has_violations)


def cmd_report(args: argparse.Namespace) -> int:
    report_path = Path(args.in_dir) / "report.json"
    if not report_path.exists():
        raise OrchestratorError(f"no report.json under {args.in_dir}")
    mapping = json.loads(report_path.read_text(encoding="utf-8"))
    print(render_text(mapping))
    return _exit_code(mapping.get("counts", {}).get("violations_total", 0) > 0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="txforge",
        description="Controllable transaction-lifecycle harness for testing "
        "DApp state synchronization.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a batch session and write reports")
    run_p.add_argument("--config", help="YAML config file")
    run_p.add_argument("--seed", type=int, help="override the session seed")
    run_p.add_argument("--mode", help="override the session mode (traverse|soak)")
    run_p.add_argument("--out", required=True, help="output directory for reports")
    run_p.set_defaults(func=cmd_run)

    serve_p = sub.add_parser("serve", help="run a long-lived node for external DApps")
    serve_p.add_argument("--config", help="YAML config file")
    serve_p.add_argument("--seed", type=int, help="override the session seed")
    serve_p.add_argument("--out", help="write the final report here on shutdown")
    serve_p.add_argument(
        "--duration", type=float, default=None,
        help="stop automatically after this many seconds (default: run until signalled)",
    )
    serve_p.set_defaults(func=cmd_serve, mode=None)

    replay_p = sub.add_parser("replay", help="re-check a recorded session log")
    replay_p.add_argument("--log", required=True, help="session.log.jsonl to replay")
    replay_p.set_defaults(func=cmd_replay)

    report_p = sub.add_parser("report", help="re-render a written report as text")
    report_p.add_argument("--in", dest="in_dir", required=True,
                          help="directory containing report.json")
    report_p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, OrchestratorError, ReplayError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
