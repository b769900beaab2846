"""Operator entry points: signaling server, sender, receiver, loopback bench.

Exit codes: 0 success, 1 config/validation, 2 network, 3 data corruption.
KPSTREAM_LOG sets the log level. A JSON config file (--config) supplies
defaults for any flag; explicit flags win.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import metrics
from .codec import HEADER_LEN, StreamDecoder, StreamEncoder, WireError
from .keypoints import Stabilizer, SynthParams
from .loopback import LoopbackConfig, RealClock, SynthSource, TraceSource, run_loopback
from .metrics import LatencyLedger, export_report
from .puppet import AnimGate, PuppetError, animate, bind, emit_animated_svg, emit_svg, load_puppet
from .trace import TraceError
from .transport import ChannelConfig, ConnectError, PeerSession, SessionError, signal_serve
from .transport.signaling import clock_ms

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NETWORK = 2
EXIT_CORRUPT = 3

log = logging.getLogger("kpstream")


class ConfigError(ValueError):
    pass


def parse_source(text: str, fps: float, duration_ms: float, loop: bool):
    if text.startswith("trace:"):
        path = text[len("trace:"):]
        if not Path(path).is_file():
            raise ConfigError(f"trace file not found: {path}")
        return TraceSource(path, fps=fps, duration_ms=duration_ms, loop=loop)
    if text == "synth" or text.startswith("synth:"):
        params = {}
        spec = text[len("synth:"):] if ":" in text else ""
        keymap = {"amp": "amplitude", "amplitude": "amplitude",
                  "freq": "frequency_hz", "frequency": "frequency_hz",
                  "phase": "phase", "pose": "include_pose", "face": "include_face"}
        for item in filter(None, spec.split(",")):
            k, _, v = item.partition("=")
            if k not in keymap:
                raise ConfigError(f"unknown synth parameter {k!r}")
            dest = keymap[k]
            params[dest] = v.lower() in ("1", "true", "yes") if dest.startswith("include") else float(v)
        try:
            sp = SynthParams(**params)
        except ValueError as exc:
            raise ConfigError(f"bad synth parameters: {exc}") from exc
        if fps is None:
            raise ConfigError("synth source requires --fps")
        return SynthSource(sp, fps=fps, duration_ms=duration_ms)
    raise ConfigError(f"source must be trace:FILE or synth[:PARAMS], got {text!r}")


def channel_from_args(args) -> ChannelConfig:
    try:
        return ChannelConfig(
            rate_bps=args.throttle_bps,
            base_delay_ms=args.base_delay_ms,
            jitter_ms=args.jitter_ms,
            loss_prob=args.loss_prob,
            seed=args.seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def write_stats(path: str | None, rep, ledger: LatencyLedger, counters: dict) -> None:
    payload = {
        "report": json.loads(export_report(rep, "json")),
        "counters": dict(sorted(counters.items())),
        "ledger": ledger.to_jsonable(),
    }
    text = json.dumps(payload, sort_keys=True, indent=2)
    if path:
        Path(path).write_text(text)
    else:
        log.debug("stats:\n%s", text)


# --- serve -------------------------------------------------------------------

async def _run_serve(args) -> int:
    try:
        server = await signal_serve(args.bind, max_peers=args.max_peers,
                                    static_dir=args.static_dir)
    except OSError as exc:
        print(f"error: cannot bind {args.bind}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"signaling server on {server.host}:{server.port}", flush=True)
    try:
        await server.serve_forever()
    except asyncio.CancelledError:
        pass
    finally:
        await server.stop()
    return EXIT_OK


# --- send ---------------------------------------------------------------------

async def _run_send(args) -> int:
    duration_ms = args.duration * 1000.0
    source = parse_source(args.source, args.fps, duration_ms, loop=args.loop)
    channel = channel_from_args(args)

    session = await PeerSession.connect(args.server, args.room, args.peer,
                                        channel_config=channel)
    ledger = LatencyLedger()
    offset = 0.0
    try:
        est = await session.estimate_clock_offset(n_pings=5)
        offset = est.offset_ms
        log.info("clock offset vs server: %.2f ms over %d samples",
                 est.offset_ms, est.samples)

        encoder = StreamEncoder(delta=args.delta)
        # pacing runs on a run-local clock; ledger stamps use the shared
        # monotonic clock_ms() timebase that the offset estimate corrects
        clock = RealClock()
        sent = 0
        for capture_at, frame in source.frames():
            # asyncio sleep, not wall sleep: the receive task must keep
            # running to pick up peer-list updates and pongs
            delay = (capture_at - clock.now()) / 1000.0
            if delay > 0:
                await asyncio.sleep(delay)
            ledger.record_stage(args.peer, frame.seq, "capture", clock_ms() + offset)
            data = encoder.encode(frame)
            ledger.record_stage(args.peer, frame.seq, "extract_done", clock_ms() + offset)
            ledger.record_stage(args.peer, frame.seq, "send", clock_ms() + offset)
            ledger.record_bytes(args.peer, frame.seq, len(data), len(data) - HEADER_LEN)
            await session.send_frame(data)
            sent += 1
        # let the throttled channel drain; allow a short grace period for a
        # late receiver before giving up on buffered frames
        grace_until = clock.now() + 2000.0
        while session.send_channel.pending and (session.peers or clock.now() < grace_until):
            await asyncio.sleep(0.05)
    finally:
        counters = {
            "frames_sent": sent if "sent" in locals() else 0,
            "dropped_queue": session.send_channel.dropped_queue,
            "dropped_loss": session.send_channel.dropped_loss,
            "clock_offset_ms": offset,
        }
        rep = metrics.report(ledger)
        write_stats(args.stats_out, rep, ledger, counters)
        await session.close()
    print(f"sent {counters['frames_sent']} frames", flush=True)
    return EXIT_OK


# --- recv ---------------------------------------------------------------------

async def _run_recv(args) -> int:
    puppet = None
    if args.puppet:
        puppet = bind(load_puppet(Path(args.puppet).read_text()))
    render_dir = Path(args.render_dir) if args.render_dir else None
    if render_dir:
        render_dir.mkdir(parents=True, exist_ok=True)

    session = await PeerSession.connect(args.server, args.room, args.peer)
    ledger = LatencyLedger()
    decoders: dict[str, StreamDecoder] = {}
    stabilizers: dict[str, Stabilizer] = {}
    gates: dict[str, AnimGate] = {}
    counters = {"frames_received": 0, "decode_errors": 0, "svg_files": 0}
    geometries = []
    offset = 0.0
    try:
        est = await session.estimate_clock_offset(n_pings=5)
        offset = est.offset_ms
        clock = RealClock()
        deadline = args.duration if args.duration > 0 else None
        n = 0
        while deadline is None or clock.now() < deadline * 1000.0:
            timeout = None if deadline is None else max(
                0.05, deadline - clock.now() / 1000.0)
            try:
                sender, data = await session.recv_frame(timeout=timeout)
            except asyncio.TimeoutError:
                break
            recv_ms = clock_ms() + offset
            dec = decoders.setdefault(sender, StreamDecoder())
            try:
                header, frame = dec.decode(data)
            except WireError as exc:
                counters["decode_errors"] += 1
                log.debug("dropping malformed frame from %s: %s", sender, exc)
                continue
            ledger.record_stage(sender, header.seq, "recv", recv_ms)
            ledger.record_bytes(sender, header.seq, len(data), len(data) - HEADER_LEN)
            if args.stabilize:
                frame = stabilizers.setdefault(sender, Stabilizer()).process(frame)
            if puppet is not None:
                geometry = animate(puppet, frame,
                                   gates.setdefault(sender, AnimGate()))
                n += 1
                if render_dir:
                    prefix = f"{sender}_" if len(decoders) > 1 else ""
                    (render_dir / f"{prefix}frame_{n:06d}.svg").write_text(
                        emit_svg(geometry))
                    counters["svg_files"] += 1
                if args.animate_out:
                    geometries.append(geometry)
            ledger.record_stage(sender, header.seq, "render_done", clock_ms() + offset)
            counters["frames_received"] += 1
    except asyncio.CancelledError:
        pass
    finally:
        counters["dropped_stale"] = session.dropped_stale
        counters["clock_offset_ms"] = offset
        rep = metrics.report(ledger)
        write_stats(args.stats_out, rep, ledger, counters)
        if args.animate_out and geometries:
            Path(args.animate_out).write_text(
                emit_animated_svg(geometries, fps=10.0))
        await session.close()
    print(export_report(rep, "table"), flush=True)
    return EXIT_OK


# --- loopback -------------------------------------------------------------------

def _run_loopback(args) -> int:
    duration_ms = args.duration * 1000.0
    source = parse_source(args.source, args.fps, duration_ms, loop=True)
    cfg = LoopbackConfig(
        source=source,
        channel=channel_from_args(args),
        puppet_path=args.puppet,
        render_dir=args.render_dir,
        delta=args.delta,
        stabilize=args.stabilize,
        extract_delay_ms=args.extract_delay_ms,
        render_delay_ms=args.render_delay_ms,
        clock=args.clock,
        window_s=args.window_s,
        collect_geometry=bool(args.animate_out),
    )
    result = run_loopback(cfg)
    write_stats(args.stats_out, result.report, result.ledger, result.counters)
    if args.animate_out and result.geometries:
        Path(args.animate_out).write_text(
            emit_animated_svg(result.geometries, fps=args.fps or 10.0))
    print(export_report(result.report, "table"), flush=True)
    return EXIT_OK


# --- report ---------------------------------------------------------------------

def _run_report(args) -> int:
    merged = LatencyLedger()
    counters: dict = {}
    for path in args.ledger:
        data = json.loads(Path(path).read_text())
        merged.merge(LatencyLedger.from_jsonable(data.get("ledger", [])))
        for k, v in data.get("counters", {}).items():
            if isinstance(v, (int, float)):
                counters[k] = counters.get(k, 0) + v
    rep = metrics.report(merged, window_s=args.window_s, counters=counters)
    print(export_report(rep, args.format), flush=True)
    return EXIT_OK


# --- argument plumbing ------------------------------------------------------------

def _add_channel_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--throttle-bps", type=int, default=0,
                   help="token-bucket rate cap in bits/s (0 = unlimited)")
    p.add_argument("--base-delay-ms", type=float, default=0.0)
    p.add_argument("--jitter-ms", type=float, default=0.0)
    p.add_argument("--loss-prob", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kpstream",
        description="keypoint streaming: codec, relay transport, puppet playback",
    )
    parser.add_argument("--config", help="JSON file with flag defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the signaling/relay server")
    p.add_argument("--bind", default="127.0.0.1:8765")
    p.add_argument("--max-peers", type=int, default=None)
    p.add_argument("--static-dir", default=None,
                   help="serve files (browser client, puppets) over HTTP from this dir")

    p = sub.add_parser("send", help="stream frames into a room")
    p.add_argument("--server", required=True, help="ws://host:port")
    p.add_argument("--room", required=True)
    p.add_argument("--peer", default="sender")
    p.add_argument("--source", required=True, help="trace:FILE or synth[:k=v,...]")
    p.add_argument("--fps", type=float, default=10.0)
    p.add_argument("--delta", action="store_true", help="delta-code the stream")
    p.add_argument("--duration", type=float, default=10.0, help="seconds")
    p.add_argument("--loop", action="store_true", help="loop a trace source")
    p.add_argument("--stats-out", default=None)
    _add_channel_flags(p)

    p = sub.add_parser("recv", help="receive, animate, and report")
    p.add_argument("--server", required=True)
    p.add_argument("--room", required=True)
    p.add_argument("--peer", default="receiver")
    p.add_argument("--puppet", default=None, help="puppet spec JSON")
    p.add_argument("--render-dir", default=None)
    p.add_argument("--animate-out", default=None,
                   help="write one animated SVG covering the run")
    p.add_argument("--duration", type=float, default=0.0,
                   help="seconds; 0 = until interrupted")
    p.add_argument("--stats-out", default=None)
    p.add_argument("--stabilize", action=argparse.BooleanOptionalAction, default=True)

    p = sub.add_parser("loopback", help="full pipeline in one process")
    p.add_argument("--source", required=True)
    p.add_argument("--fps", type=float, default=10.0)
    p.add_argument("--puppet", default=None)
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--delta", action="store_true")
    p.add_argument("--render-dir", default=None)
    p.add_argument("--animate-out", default=None)
    p.add_argument("--stats-out", default=None)
    p.add_argument("--stabilize", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--extract-delay-ms", type=float, default=0.0,
                   help="injected synthetic extraction latency")
    p.add_argument("--render-delay-ms", type=float, default=0.0)
    p.add_argument("--clock", choices=("real", "virtual"), default="real")
    p.add_argument("--window-s", type=float, default=2.0)
    _add_channel_flags(p)

    p = sub.add_parser("report", help="render/merge saved stats ledgers")
    p.add_argument("--ledger", action="append", required=True,
                   help="stats JSON written by send/recv/loopback (repeatable)")
    p.add_argument("--format", choices=("table", "json", "csv"), default="table")
    p.add_argument("--window-s", type=float, default=2.0)

    parser._kp_subparsers = dict(sub.choices)  # for config-file defaults
    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    # --config supplies defaults; explicit flags still win because argparse
    # applies set_defaults only to unset options.
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    try:
        path = argv[i + 1]
    except IndexError:
        raise ConfigError("--config requires a path")
    try:
        defaults = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}")
    if not isinstance(defaults, dict):
        raise ConfigError("config file must hold a JSON object")
    mapped = {k.replace("-", "_"): v for k, v in defaults.items()}
    # subcommands parse into their own namespaces, so defaults go to each
    # subparser (restricted to the options it actually defines)
    for p in [parser, *parser._kp_subparsers.values()]:
        known = {a.dest for a in p._actions}
        p.set_defaults(**{k: v for k, v in mapped.items() if k in known})
    return argv


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    level = os.environ.get("KPSTREAM_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    parser = build_parser()
    try:
        argv = _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "serve":
            return asyncio.run(_run_serve(args))
        if args.command == "send":
            return asyncio.run(_run_send(args))
        if args.command == "recv":
            return asyncio.run(_run_recv(args))
        if args.command == "loopback":
            return _run_loopback(args)
        if args.command == "report":
            return _run_report(args)
        parser.error(f"unknown command {args.command}")
    except (ConfigError, PuppetError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConnectError as exc:
        hint = " (retry may help)" if exc.retry_advised else ""
        print(f"network error: {exc}{hint}", file=sys.stderr)
        return EXIT_NETWORK
    except SessionError as exc:
        print(f"network error: {exc}", file=sys.stderr)
        return EXIT_NETWORK
    except (TraceError, WireError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except KeyboardInterrupt:
        return EXIT_OK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
