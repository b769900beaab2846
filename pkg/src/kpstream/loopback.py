"""Single-process pipeline: source -> encode -> throttled channel -> decode ->
stabilize -> animate, with every stage timestamped into a LatencyLedger.

The engine runs on either a wall clock or a virtual clock. The virtual clock
jumps straight to the next event, which makes runs instantaneous and exactly
reproducible: injected stage delays are recovered to the last bit. Frame
content is always a function of the *scheduled* capture instant, so geometry
and frame counts are identical across clock types for a given seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

from .codec import HEADER_LEN, StreamDecoder, StreamEncoder, WireError
from .keypoints import KeypointFrame, Stabilizer, SynthParams, synth_frame
from .metrics import LatencyLedger, Report, report
from .puppet import AnimGate, BoundPuppet, FrameGeometry, animate, bind, emit_svg, load_puppet
from .trace import replay
from .transport.throttle import ChannelConfig, ThrottledChannel

SENDER_ID = "local"


class VirtualClock:
    def __init__(self):
        self.now_ms = 0.0

    def now(self) -> float:
        return self.now_ms

    def sleep_until(self, t_ms: float) -> None:
        if t_ms > self.now_ms:
            self.now_ms = t_ms

    def advance(self, d_ms: float) -> None:
        self.now_ms += d_ms


class RealClock:
    def __init__(self):
        self._t0 = time.perf_counter()

    def now(self) -> float:
        return (time.perf_counter() - self._t0) * 1000.0

    def sleep_until(self, t_ms: float) -> None:
        dt = (t_ms - self.now()) / 1000.0
        if dt > 0:
            time.sleep(dt)

    def advance(self, d_ms: float) -> None:
        if d_ms > 0:
            time.sleep(d_ms / 1000.0)


class SynthSource:
    """Capture schedule on a fixed fps grid; frame content is a pure function
    of the scheduled instant."""

    def __init__(self, params: SynthParams, fps: float, duration_ms: float):
        if fps <= 0:
            raise ValueError("fps must be positive")
        self.params = params
        self.fps = fps
        self.duration_ms = duration_ms

    def frames(self) -> Iterator[tuple[float, KeypointFrame]]:
        interval = 1000.0 / self.fps
        k = 0
        while k * interval < self.duration_ms:
            t = k * interval
            yield t, synth_frame(t, self.params, seq=k, capture_ts_ms=round(t))
            k += 1


class TraceSource:
    """Replays a .kpt trace, decoded back to keypoint frames."""

    def __init__(self, path: str, fps: float | None, duration_ms: float,
                 loop: bool = True):
        self.path = path
        self.fps = fps
        self.duration_ms = duration_ms
        self.loop = loop and fps is not None

    def frames(self) -> Iterator[tuple[float, KeypointFrame]]:
        decoder = StreamDecoder()
        with open(self.path, "rb") as f:
            for send_at, data in replay(f, fps=self.fps, loop=self.loop):
                if send_at >= self.duration_ms:
                    return
                _, frame = decoder.decode(data)
                yield send_at, frame


@dataclass
class LoopbackConfig:
    source: SynthSource | TraceSource
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    puppet_path: str | None = None
    render_dir: str | None = None
    delta: bool = False
    keyframe_interval: int = 30
    stabilize: bool = True
    extract_delay_ms: float = 0.0
    render_delay_ms: float = 0.0
    clock: str = "real"  # "real" | "virtual"
    window_s: float = 2.0
    collect_geometry: bool = False


@dataclass
class LoopbackResult:
    ledger: LatencyLedger
    report: Report
    counters: dict
    geometries: list[FrameGeometry] = field(default_factory=list)


def run_loopback(cfg: LoopbackConfig) -> LoopbackResult:
    clock = VirtualClock() if cfg.clock == "virtual" else RealClock()
    channel = ThrottledChannel(cfg.channel)
    encoder = StreamEncoder(delta=cfg.delta, keyframe_interval=cfg.keyframe_interval)
    decoder = StreamDecoder()
    stabilizer = Stabilizer() if cfg.stabilize else None

    puppet: BoundPuppet | None = None
    gate = None
    if cfg.puppet_path:
        puppet = bind(load_puppet(Path(cfg.puppet_path).read_text()))
        gate = AnimGate()

    render_dir = None
    if cfg.render_dir:
        render_dir = Path(cfg.render_dir)
        render_dir.mkdir(parents=True, exist_ok=True)

    ledger = LatencyLedger()
    counters = {
        "frames_sent": 0,
        "frames_delivered": 0,
        "decode_errors": 0,
        "dropped_queue": 0,
        "dropped_loss": 0,
        "svg_files": 0,
    }
    geometries: list[FrameGeometry] = []
    delivered_n = 0

    src = cfg.source.frames()
    pending = next(src, None)

    def handle_delivery(delivery_ms: float, data: bytes) -> None:
        nonlocal delivered_n
        try:
            header, frame = decoder.decode(data)
        except WireError:
            counters["decode_errors"] += 1
            return
        ledger.record_stage(SENDER_ID, header.seq, "recv", delivery_ms)
        ledger.record_bytes(SENDER_ID, header.seq, len(data), len(data) - HEADER_LEN)
        if stabilizer is not None:
            frame = stabilizer.process(frame)
        if puppet is not None:
            geometry = animate(puppet, frame, gate)
            delivered_n += 1
            if render_dir is not None:
                svg = emit_svg(geometry)
                (render_dir / f"frame_{delivered_n:06d}.svg").write_text(svg)
                counters["svg_files"] += 1
            if cfg.collect_geometry:
                geometries.append(geometry)
        else:
            delivered_n += 1
        if cfg.render_delay_ms:
            clock.advance(cfg.render_delay_ms)
        ledger.record_stage(SENDER_ID, header.seq, "render_done", clock.now())
        counters["frames_delivered"] += 1

    while True:
        now = clock.now()
        ch_next = channel.next_event_ms(now)
        times = []
        if pending is not None:
            times.append(pending[0])
        if ch_next is not None:
            times.append(ch_next)
        if not times:
            break
        clock.sleep_until(min(times))
        now = clock.now()

        for d in channel.poll(now):
            handle_delivery(d.delivery_ms, d.data)

        if pending is not None and pending[0] <= clock.now():
            capture_at, frame = pending
            ledger.record_stage(SENDER_ID, frame.seq, "capture", clock.now())
            if cfg.extract_delay_ms:
                clock.advance(cfg.extract_delay_ms)
            ledger.record_stage(SENDER_ID, frame.seq, "extract_done", clock.now())
            data = encoder.encode(frame)
            send_ms = clock.now()
            ledger.record_stage(SENDER_ID, frame.seq, "send", send_ms)
            channel.send(data, send_ms)
            counters["frames_sent"] += 1
            pending = next(src, None)

    counters["dropped_queue"] = channel.dropped_queue
    counters["dropped_loss"] = channel.dropped_loss
    rep = report(ledger, window_s=cfg.window_s, counters=counters)
    return LoopbackResult(ledger=ledger, report=rep, counters=counters,
                          geometries=geometries)
