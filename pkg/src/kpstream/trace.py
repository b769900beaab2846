"""Record/replay container for encoded keypoint streams (.kpt files).

Layout: 4-byte magic "KPT1", then repeated records of u32 big-endian length
followed by one wire frame. Frames embed the wire format itself, so codec
regressions show up as trace fixture failures. Single reader or single
writer per file.
"""

from __future__ import annotations

import struct
import warnings
from typing import BinaryIO, Iterable, Iterator

from .codec import HEADER_LEN, StreamDecoder, WireError, decode_header

MAGIC = b"KPT1"
_LEN = struct.Struct(">I")
# largest legal record: header + worst-case delta payload (3-byte varints)
MAX_RECORD_LEN = HEADER_LEN + (52 + 146) * 3 + 4


class TraceError(Exception):
    def __init__(self, message: str, position: int | None = None,
                 frames_written: int | None = None):
        super().__init__(message)
        self.position = position
        self.frames_written = frames_written


class TraceWarning(UserWarning):
    pass


def record(frames: Iterable[bytes], sink: BinaryIO) -> int:
    """Append frames to a fresh trace; returns the frame count. Every frame
    must parse (delta chains included) and capture timestamps must be
    non-decreasing."""
    checker = StreamDecoder()
    count = 0
    last_ts = None
    try:
        sink.write(MAGIC)
        for data in frames:
            try:
                header, _ = checker.decode(data)
            except WireError as exc:
                raise TraceError(f"frame {count} does not parse: {exc}",
                                 frames_written=count) from exc
            if last_ts is not None and header.capture_ts_ms < last_ts:
                raise TraceError(
                    f"frame {count}: capture_ts_ms decreases "
                    f"({header.capture_ts_ms} < {last_ts})",
                    frames_written=count,
                )
            last_ts = header.capture_ts_ms
            sink.write(_LEN.pack(len(data)))
            sink.write(data)
            count += 1
    except OSError as exc:
        raise TraceError(f"I/O failure after {count} frames: {exc}",
                         frames_written=count) from exc
    return count


def read_frames(source: BinaryIO) -> Iterator[bytes]:
    """Yield raw frame bytes. A truncated final record warns and stops; a
    corrupt record raises TraceError with its byte position."""
    magic = source.read(4)
    if magic != MAGIC:
        raise TraceError(f"bad magic {magic!r}", position=0)
    pos = 4
    while True:
        lenb = source.read(4)
        if not lenb:
            return
        if len(lenb) < 4:
            warnings.warn(f"truncated record length at byte {pos}", TraceWarning)
            return
        (n,) = _LEN.unpack(lenb)
        if n < HEADER_LEN or n > MAX_RECORD_LEN:
            raise TraceError(f"implausible record length {n} at byte {pos}",
                             position=pos)
        data = source.read(n)
        if len(data) < n:
            warnings.warn(f"truncated final record at byte {pos}", TraceWarning)
            return
        try:
            decode_header(data)
        except WireError as exc:
            raise TraceError(f"corrupt frame at byte {pos}: {exc}", position=pos)
        yield data
        pos += 4 + n


def _patch_header(data: bytes, seq: int, capture_ts_ms: int) -> bytes:
    out = bytearray(data)
    struct.pack_into(">HI", out, 2, seq & 0xFFFF, capture_ts_ms & 0xFFFFFFFF)
    return bytes(out)


def replay(source: BinaryIO, fps: float | None = None,
           loop: bool = False) -> Iterator[tuple[float, bytes]]:
    """Yield (send_at_ms, frame) pairs.

    fps=None paces by the recorded capture timestamps (original gaps);
    a fixed fps re-stamps seq/capture_ts on a 1000/fps grid. Looping the
    trace requires fixed fps (timestamps are rewritten anyway).
    """
    if loop and fps is None:
        raise TraceError("looping replay requires a fixed fps")
    frames = list(read_frames(source))
    if not frames:
        return
    if fps is None:
        t0 = decode_header(frames[0]).capture_ts_ms
        for data in frames:
            yield float(decode_header(data).capture_ts_ms - t0), data
        return
    if fps <= 0:
        raise TraceError(f"fps must be positive, got {fps}")
    interval = 1000.0 / fps
    k = 0
    while True:
        for data in frames:
            send_at = k * interval
            yield send_at, _patch_header(data, k, round(send_at))
            k += 1
        if not loop:
            return
