"""Per-frame stage timestamps and the five trial statistics.

Each streamed frame accumulates up to five stage timestamps (ms):
capture -> extract_done -> send on the sender clock, recv -> render_done on
the receiver clock corrected to the common reference via the session's clock
offset. From a window of finalized records the report derives bitrate plus
net / extraction / transmission / render latency, each as median and p10-p90,
mirroring the shape of a live-call statistics table.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

STAGES = ("capture", "extract_done", "send", "recv", "render_done")

# Low-quality conventional video stream used as the bits-per-frame baseline.
BASELINE_BANDWIDTH_BPS = 200_000
BASELINE_FPS = 15


class MetricsError(ValueError):
    pass


@dataclass(slots=True)
class FrameRecord:
    sender: str
    seq: int
    capture: float | None = None
    extract_done: float | None = None
    send: float | None = None
    recv: float | None = None
    render_done: float | None = None
    wire_bytes: int | None = None
    payload_bytes: int | None = None

    def complete(self) -> bool:
        return None not in (self.capture, self.extract_done, self.send,
                            self.recv, self.render_done)

    def monotone(self) -> bool:
        seq_ts = (self.capture, self.extract_done, self.send, self.recv,
                  self.render_done)
        return all(a <= b for a, b in zip(seq_ts, seq_ts[1:]))


class LatencyLedger:
    """Stage sink. Safe for interleaved sender/receiver recording: stages are
    idempotent per (sender, seq, stage); a conflicting duplicate keeps the
    first value and bumps `conflicts`."""

    def __init__(self):
        self.records: dict[tuple[str, int], FrameRecord] = {}
        self.conflicts = 0

    def _rec(self, sender: str, seq: int) -> FrameRecord:
        key = (sender, seq)
        rec = self.records.get(key)
        if rec is None:
            rec = FrameRecord(sender, seq)
            self.records[key] = rec
        return rec

    def record_stage(self, sender: str, seq: int, stage: str, ts_ms: float) -> None:
        if stage not in STAGES:
            raise MetricsError(f"unknown stage {stage!r}")
        rec = self._rec(sender, seq)
        old = getattr(rec, stage)
        if old is None:
            setattr(rec, stage, ts_ms)
        elif old != ts_ms:
            self.conflicts += 1

    def record_bytes(self, sender: str, seq: int, wire_bytes: int,
                     payload_bytes: int | None = None) -> None:
        rec = self._rec(sender, seq)
        if rec.wire_bytes is None:
            rec.wire_bytes = wire_bytes
            rec.payload_bytes = payload_bytes
        elif rec.wire_bytes != wire_bytes:
            self.conflicts += 1

    def finalized(self) -> list[FrameRecord]:
        return [r for r in self.records.values() if r.complete()]

    def monotonicity_violations(self) -> int:
        return sum(1 for r in self.finalized() if not r.monotone())

    def merge(self, other: "LatencyLedger") -> None:
        """Fold another ledger in, e.g. the remote side's half of each record."""
        for rec in other.records.values():
            for stage in STAGES:
                ts = getattr(rec, stage)
                if ts is not None:
                    self.record_stage(rec.sender, rec.seq, stage, ts)
            if rec.wire_bytes is not None:
                self.record_bytes(rec.sender, rec.seq, rec.wire_bytes, rec.payload_bytes)
        self.conflicts += other.conflicts

    def to_jsonable(self) -> list[dict]:
        return [asdict(r) for r in sorted(self.records.values(),
                                          key=lambda r: (r.sender, r.seq))]

    @classmethod
    def from_jsonable(cls, items: list[dict]) -> "LatencyLedger":
        ledger = cls()
        for item in items:
            rec = FrameRecord(**item)
            ledger.records[(rec.sender, rec.seq)] = rec
        return ledger


@dataclass(slots=True)
class StatRow:
    median: float
    p10: float
    p90: float
    n: int


@dataclass(slots=True)
class BaselineComparison:
    baseline_bits_per_frame: float
    payload_bits_per_frame: float
    wire_bits_per_frame: float
    ratio: float
    meets_4x: bool


@dataclass(slots=True)
class Report:
    frames: int
    bitrate_bps: StatRow | None = None
    net_ms: StatRow | None = None
    extraction_ms: StatRow | None = None
    transmission_ms: StatRow | None = None
    render_ms: StatRow | None = None
    baseline: BaselineComparison | None = None
    monotonicity_violations: int = 0
    conflicts: int = 0
    counters: dict = field(default_factory=dict)


def _row(samples: list[float]) -> StatRow | None:
    if not samples:
        return None
    arr = np.asarray(samples, dtype=float)
    return StatRow(float(np.percentile(arr, 50)), float(np.percentile(arr, 10)),
                   float(np.percentile(arr, 90)), len(samples))


def _bitrate_samples(records: list[FrameRecord], window_s: float) -> list[float]:
    events = sorted((r.recv, r.wire_bytes) for r in records
                    if r.recv is not None and r.wire_bytes)
    if not events:
        return []
    w_ms = window_s * 1000.0
    t0, t1 = events[0][0], events[-1][0]
    if t1 - t0 <= w_ms:
        total = sum(nb for _, nb in events)
        return [total * 8.0 / window_s]
    times = np.array([t for t, _ in events])
    sizes = np.array([nb for _, nb in events], dtype=float)
    cum = np.concatenate([[0.0], np.cumsum(sizes)])
    samples = []
    start = t0
    step = w_ms / 4.0
    while start + w_ms <= t1:
        lo = np.searchsorted(times, start, side="left")
        hi = np.searchsorted(times, start + w_ms, side="left")
        samples.append((cum[hi] - cum[lo]) * 8.0 / window_s)
        start += step
    return samples


def report(ledger: LatencyLedger, window_s: float = 2.0,
           counters: dict | None = None) -> Report:
    """Aggregate the ledger. An empty window yields an explicit empty report."""
    records = ledger.finalized()
    rep = Report(frames=len(records), conflicts=ledger.conflicts,
                 counters=dict(counters or {}))
    if not records:
        return rep
    rep.monotonicity_violations = sum(1 for r in records if not r.monotone())
    rep.net_ms = _row([r.render_done - r.capture for r in records])
    rep.extraction_ms = _row([r.extract_done - r.capture for r in records])
    rep.transmission_ms = _row([r.recv - r.send for r in records])
    rep.render_ms = _row([r.render_done - r.recv for r in records])
    rep.bitrate_bps = _row(_bitrate_samples(records, window_s))

    sized = [r for r in records if r.payload_bytes]
    if sized:
        payload_bits = sum(r.payload_bytes for r in sized) * 8.0 / len(sized)
        wire_bits = sum(r.wire_bytes for r in sized) * 8.0 / len(sized)
        baseline_bits = BASELINE_BANDWIDTH_BPS / BASELINE_FPS
        ratio = baseline_bits / payload_bits
        rep.baseline = BaselineComparison(
            baseline_bits_per_frame=baseline_bits,
            payload_bits_per_frame=payload_bits,
            wire_bits_per_frame=wire_bits,
            ratio=ratio,
            meets_4x=ratio >= 4.0,
        )
    return rep


_TABLE_ROWS = (
    ("Bitrate", "bitrate_bps", "bps"),
    ("Net latency", "net_ms", "ms"),
    ("Extraction latency", "extraction_ms", "ms"),
    ("Transmission latency", "transmission_ms", "ms"),
    ("Render latency", "render_ms", "ms"),
)


def export_report(rep: Report, fmt: str = "json") -> str:
    """Serialize a report. json/csv have stable field order; `table` is the
    human-facing five-row layout and not a stability contract."""
    if fmt == "json":
        payload = {
            "frames": rep.frames,
            "monotonicity_violations": rep.monotonicity_violations,
            "conflicts": rep.conflicts,
            "counters": dict(sorted(rep.counters.items())),
        }
        for _, attr, unit in _TABLE_ROWS:
            row = getattr(rep, attr)
            payload[attr] = None if row is None else asdict(row)
        payload["baseline"] = None if rep.baseline is None else asdict(rep.baseline)
        return json.dumps(payload, sort_keys=True, indent=2)

    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["metric", "median", "p10", "p90", "n", "unit"])
        for label, attr, unit in _TABLE_ROWS:
            row = getattr(rep, attr)
            if row is not None:
                writer.writerow([label, f"{row.median:.3f}", f"{row.p10:.3f}",
                                 f"{row.p90:.3f}", row.n, unit])
        return buf.getvalue()

    if fmt == "table":
        lines = [f"{'Measurement type':<22} {'Median':>12} {'p10-p90':>22}"]
        for label, attr, unit in _TABLE_ROWS:
            row = getattr(rep, attr)
            if row is None:
                lines.append(f"{label:<22} {'-':>12} {'-':>22}")
            else:
                if unit == "bps":
                    med = f"{row.median / 1000:.2f} kbps"
                    rng = f"{row.p10 / 1000:.2f} - {row.p90 / 1000:.2f} kbps"
                else:
                    med = f"{row.median:.1f} ms"
                    rng = f"{row.p10:.1f} - {row.p90:.1f} ms"
                lines.append(f"{label:<22} {med:>12} {rng:>22}")
        if rep.baseline is not None:
            b = rep.baseline
            lines.append(
                f"bits/frame: {b.payload_bits_per_frame:.0f} payload "
                f"({b.wire_bits_per_frame:.0f} on wire) vs baseline "
                f"{b.baseline_bits_per_frame:.0f} -> {b.ratio:.2f}x fewer"
                f" ({'meets' if b.meets_4x else 'MISSES'} 4x)"
            )
        lines.append(f"frames: {rep.frames}")
        return "\n".join(lines) + "\n"

    raise MetricsError(f"unknown report format {fmt!r}")
