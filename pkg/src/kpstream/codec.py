"""Bit-exact binary wire codec for keypoint frames.

Full-precision layout (all multi-byte integers big-endian):

  header (8 bytes):  version u8 = 0x01 | flags u8 | seq u16 | capture_ts_ms u32
  flags:             bit0 pose present, bit1 face present, bit2 delta-coded,
                     bits 3..7 reserved zero
  pose block (104):  17 x (xq u16, yq u16, cq u16), then score_q u16  -> 832 bits
  face block (296):  73 x (xq u16, yq u16), then score float32        -> 2368 bits

With both blocks present the payload is exactly 400 bytes (3200 bits) and the
wire frame 408 bytes. Delta frames carry zigzag/varint-coded differences of
the 16-bit lattice values against the previous frame (face score rides raw);
keyframes reset decoder state. Parsing is strict: trailing bytes are errors,
and decoding never raises anything but WireError on arbitrary input.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .keypoints import (
    FACE_POINT_COUNT,
    POSE_KEYPOINT_COUNT,
    FaceFrame,
    Keypoint2D,
    KeypointError,
    KeypointFrame,
    PoseFrame,
    dequantize_coord,
    quantize_coord,
)

VERSION = 0x01
FLAG_POSE = 0x01
FLAG_FACE = 0x02
FLAG_DELTA = 0x04
_RESERVED_MASK = 0xF8

HEADER_LEN = 8
POSE_BLOCK_LEN = 104
FACE_BLOCK_LEN = 296
FULL_PAYLOAD_LEN = POSE_BLOCK_LEN + FACE_BLOCK_LEN  # 400 bytes = 3200 bits
MAX_FRAME_LEN = HEADER_LEN + FULL_PAYLOAD_LEN       # 408

_POSE_VALUES = POSE_KEYPOINT_COUNT * 3 + 1   # 52 u16 per pose block
_FACE_VALUES = FACE_POINT_COUNT * 2          # 146 u16 before the raw score

_HEADER = struct.Struct(">BBHI")
_POSE = struct.Struct(f">{_POSE_VALUES}H")
_FACE_PTS = struct.Struct(f">{_FACE_VALUES}H")
_F32 = struct.Struct(">f")


class WireError(Exception):
    """Base for all structured decode/encode failures."""


class VersionError(WireError):
    pass


class FlagsError(WireError):
    """Reserved flag bits set, or neither pose nor face present."""


class LengthError(WireError):
    """Truncated input, wrong block length, or trailing bytes."""


class PayloadError(WireError):
    """Framing is fine but a payload value is unusable (e.g. non-finite score)."""


class DeltaCorruptionError(WireError):
    """Bad varint, value off the 16-bit lattice, or delta without a reference."""


class PresenceMismatchError(WireError):
    """Delta requested across a pose/face presence change; a keyframe is required."""


@dataclass(slots=True)
class FrameHeader:
    version: int
    flags: int
    seq: int
    capture_ts_ms: int

    @property
    def has_pose(self) -> bool:
        return bool(self.flags & FLAG_POSE)

    @property
    def has_face(self) -> bool:
        return bool(self.flags & FLAG_FACE)

    @property
    def is_delta(self) -> bool:
        return bool(self.flags & FLAG_DELTA)


@dataclass(slots=True)
class QuantizedPose:
    points: list[tuple[int, int, int]]  # (xq, yq, cq)
    score_q: int


@dataclass(slots=True)
class QuantizedFace:
    points: list[tuple[int, int]]
    score: float  # float32-rounded, [0,1]


@dataclass(slots=True)
class QuantizedFrame:
    pose: QuantizedPose | None = None
    face: QuantizedFace | None = None


def _f32(v: float) -> float:
    return _F32.unpack(_F32.pack(v))[0]


def quantize_frame(frame: KeypointFrame) -> QuantizedFrame:
    pose = None
    if frame.pose is not None:
        pose = QuantizedPose(
            [(quantize_coord(k.x), quantize_coord(k.y), quantize_coord(k.confidence))
             for k in frame.pose.keypoints],
            quantize_coord(frame.pose.score),
        )
    face = None
    if frame.face is not None:
        face = QuantizedFace(
            [(quantize_coord(x), quantize_coord(y)) for x, y in frame.face.points],
            _f32(frame.face.score),
        )
    return QuantizedFrame(pose, face)


def dequantize_frame(qf: QuantizedFrame, seq: int, capture_ts_ms: int) -> KeypointFrame:
    pose = None
    if qf.pose is not None:
        pose = PoseFrame(
            [Keypoint2D(dequantize_coord(x), dequantize_coord(y), dequantize_coord(c))
             for x, y, c in qf.pose.points],
            dequantize_coord(qf.pose.score_q),
        )
    face = None
    if qf.face is not None:
        face = FaceFrame(
            [(dequantize_coord(x), dequantize_coord(y)) for x, y in qf.face.points],
            qf.face.score,
        )
    return KeypointFrame(seq=seq, capture_ts_ms=capture_ts_ms, pose=pose, face=face)


def encode_pose(pose: PoseFrame) -> bytes:
    """104-byte (832-bit) pose block."""
    if len(pose.keypoints) != POSE_KEYPOINT_COUNT:
        raise KeypointError(
            f"pose.keypoints: expected {POSE_KEYPOINT_COUNT}, got {len(pose.keypoints)}"
        )
    values = []
    for kp in pose.keypoints:
        values.append(quantize_coord(kp.x))
        values.append(quantize_coord(kp.y))
        values.append(quantize_coord(kp.confidence))
    values.append(quantize_coord(pose.score))
    return _POSE.pack(*values)


def decode_pose(block: bytes) -> PoseFrame:
    if len(block) != POSE_BLOCK_LEN:
        raise LengthError(f"pose block must be {POSE_BLOCK_LEN} bytes, got {len(block)}")
    v = _POSE.unpack(block)
    kps = [
        Keypoint2D(dequantize_coord(v[i]), dequantize_coord(v[i + 1]),
                   dequantize_coord(v[i + 2]))
        for i in range(0, _POSE_VALUES - 1, 3)
    ]
    return PoseFrame(kps, dequantize_coord(v[-1]))


def encode_face(face: FaceFrame) -> bytes:
    """296-byte (2368-bit) face block."""
    if len(face.points) != FACE_POINT_COUNT:
        raise KeypointError(
            f"face.points: expected {FACE_POINT_COUNT}, got {len(face.points)}"
        )
    values = []
    for x, y in face.points:
        values.append(quantize_coord(x))
        values.append(quantize_coord(y))
    return _FACE_PTS.pack(*values) + _F32.pack(face.score)


def decode_face(block: bytes) -> FaceFrame:
    if len(block) != FACE_BLOCK_LEN:
        raise LengthError(f"face block must be {FACE_BLOCK_LEN} bytes, got {len(block)}")
    v = _FACE_PTS.unpack(block[:-4])
    score = _F32.unpack(block[-4:])[0]
    if score != score or score in (float("inf"), float("-inf")):
        raise PayloadError("face score is not finite")
    score = 0.0 if score < 0.0 else (1.0 if score > 1.0 else score)
    pts = [(dequantize_coord(v[i]), dequantize_coord(v[i + 1]))
           for i in range(0, _FACE_VALUES, 2)]
    return FaceFrame(pts, score)


def encode_frame(frame: KeypointFrame) -> bytes:
    """Full-precision wire frame: 8-byte header plus the present blocks."""
    if frame.pose is None and frame.face is None:
        raise KeypointError("frame: at least one of pose/face must be present")
    flags = 0
    parts = []
    if frame.pose is not None:
        flags |= FLAG_POSE
        parts.append(encode_pose(frame.pose))
    if frame.face is not None:
        flags |= FLAG_FACE
        parts.append(encode_face(frame.face))
    header = _HEADER.pack(VERSION, flags, frame.seq & 0xFFFF,
                          frame.capture_ts_ms & 0xFFFFFFFF)
    return header + b"".join(parts)


def decode_header(data: bytes) -> FrameHeader:
    if len(data) < HEADER_LEN:
        raise LengthError(f"frame shorter than {HEADER_LEN}-byte header: {len(data)}")
    version, flags, seq, ts = _HEADER.unpack_from(data)
    if version != VERSION:
        raise VersionError(f"unsupported version 0x{version:02x}")
    if flags & _RESERVED_MASK:
        raise FlagsError(f"reserved flag bits set: 0b{flags:08b}")
    if not flags & (FLAG_POSE | FLAG_FACE):
        raise FlagsError("neither pose nor face present")
    return FrameHeader(version, flags, seq, ts)


def _expected_full_length(flags: int) -> int:
    n = HEADER_LEN
    if flags & FLAG_POSE:
        n += POSE_BLOCK_LEN
    if flags & FLAG_FACE:
        n += FACE_BLOCK_LEN
    return n


def _decode_quantized(data: bytes, prev: QuantizedFrame | None) -> tuple[FrameHeader, QuantizedFrame]:
    header = decode_header(data)
    if header.is_delta:
        if prev is None:
            raise DeltaCorruptionError("delta frame without a reference keyframe")
        qf = delta_decode_checked(prev, data[HEADER_LEN:], header.flags)
        return header, qf

    expected = _expected_full_length(header.flags)
    if len(data) != expected:
        raise LengthError(
            f"length {len(data)} does not match flags 0b{header.flags:08b} "
            f"(expected {expected})"
        )
    pos = HEADER_LEN
    pose = None
    if header.has_pose:
        v = _POSE.unpack_from(data, pos)
        pose = QuantizedPose(
            [(v[i], v[i + 1], v[i + 2]) for i in range(0, _POSE_VALUES - 1, 3)],
            v[-1],
        )
        pos += POSE_BLOCK_LEN
    face = None
    if header.has_face:
        v = _FACE_PTS.unpack_from(data, pos)
        score = _F32.unpack_from(data, pos + _FACE_VALUES * 2)[0]
        if score != score or score in (float("inf"), float("-inf")):
            raise PayloadError("face score is not finite")
        score = 0.0 if score < 0.0 else (1.0 if score > 1.0 else score)
        face = QuantizedFace(
            [(v[i], v[i + 1]) for i in range(0, _FACE_VALUES, 2)], score
        )
    return header, QuantizedFrame(pose, face)


def decode_frame(data: bytes, prev: QuantizedFrame | None = None) -> tuple[FrameHeader, KeypointFrame]:
    """Strict parse of one wire frame. Delta frames need the previous
    reconstructed QuantizedFrame. Raises only WireError subclasses."""
    header, qf = _decode_quantized(data, prev)
    return header, dequantize_frame(qf, header.seq, header.capture_ts_ms)


# --- delta mode -------------------------------------------------------------

def _zigzag(d: int) -> int:
    return 2 * d if d >= 0 else -2 * d - 1


def _unzigzag(z: int) -> int:
    return (z >> 1) if not z & 1 else -((z + 1) >> 1)


# deltas live in [-65535, 65535]; zigzag maps that onto [0, 131070]
_MAX_ZIGZAG = 2 * 65535


def _append_varint(out: bytearray, v: int) -> None:
    while v >= 0x80:
        out.append((v & 0x7F) | 0x80)
        v >>= 7
    out.append(v)


def _read_varint(data: bytes, pos: int) -> tuple[int, int]:
    result = 0
    for shift in (0, 7, 14):
        if pos >= len(data):
            raise DeltaCorruptionError("truncated varint")
        b = data[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        if not b & 0x80:
            return result, pos
    raise DeltaCorruptionError("varint exceeds 3 bytes for a 16-bit value")


def _flatten(qf: QuantizedFrame) -> tuple[list[int], list[int]]:
    pose_vals: list[int] = []
    if qf.pose is not None:
        for x, y, c in qf.pose.points:
            pose_vals += (x, y, c)
        pose_vals.append(qf.pose.score_q)
    face_vals: list[int] = []
    if qf.face is not None:
        for x, y in qf.face.points:
            face_vals += (x, y)
    return pose_vals, face_vals


def delta_encode(prev: QuantizedFrame, cur: QuantizedFrame) -> bytes:
    """Payload of a delta frame: zigzag varints of cur-prev over the 16-bit
    lattice (pose values, then face values), then the face score raw."""
    if (prev.pose is None) != (cur.pose is None) or (prev.face is None) != (cur.face is None):
        raise PresenceMismatchError(
            "pose/face presence changed between frames; emit a keyframe"
        )
    prev_pose, prev_face = _flatten(prev)
    cur_pose, cur_face = _flatten(cur)
    out = bytearray()
    for p, c in zip(prev_pose, cur_pose):
        _append_varint(out, _zigzag(c - p))
    for p, c in zip(prev_face, cur_face):
        _append_varint(out, _zigzag(c - p))
    if cur.face is not None:
        out += _F32.pack(cur.face.score)
    return bytes(out)


def delta_decode_checked(prev: QuantizedFrame, payload: bytes, flags: int) -> QuantizedFrame:
    """Inverse of delta_encode given the header flags; validates presence
    against prev and consumes the payload exactly."""
    want_pose = bool(flags & FLAG_POSE)
    want_face = bool(flags & FLAG_FACE)
    if want_pose != (prev.pose is not None) or want_face != (prev.face is not None):
        raise PresenceMismatchError(
            "delta flags do not match reference frame presence; keyframe required"
        )
    pos = 0
    pose = None
    if want_pose:
        prev_vals, _ = _flatten(prev)
        vals = []
        for pv in prev_vals:
            z, pos = _read_varint(payload, pos)
            if z > _MAX_ZIGZAG:
                raise DeltaCorruptionError(f"zigzag value {z} exceeds 16-bit delta range")
            v = pv + _unzigzag(z)
            if not 0 <= v <= 65535:
                raise DeltaCorruptionError(f"reconstructed value {v} off the 16-bit lattice")
            vals.append(v)
        pose = QuantizedPose(
            [(vals[i], vals[i + 1], vals[i + 2]) for i in range(0, _POSE_VALUES - 1, 3)],
            vals[-1],
        )
    face = None
    if want_face:
        _, prev_vals = _flatten(prev)
        vals = []
        for pv in prev_vals:
            z, pos = _read_varint(payload, pos)
            if z > _MAX_ZIGZAG:
                raise DeltaCorruptionError(f"zigzag value {z} exceeds 16-bit delta range")
            v = pv + _unzigzag(z)
            if not 0 <= v <= 65535:
                raise DeltaCorruptionError(f"reconstructed value {v} off the 16-bit lattice")
            vals.append(v)
        if pos + 4 > len(payload):
            raise DeltaCorruptionError("truncated face score")
        score = _F32.unpack_from(payload, pos)[0]
        pos += 4
        if score != score or score in (float("inf"), float("-inf")):
            raise PayloadError("face score is not finite")
        score = 0.0 if score < 0.0 else (1.0 if score > 1.0 else score)
        face = QuantizedFace([(vals[i], vals[i + 1]) for i in range(0, _FACE_VALUES, 2)],
                             score)
    if pos != len(payload):
        raise LengthError(f"{len(payload) - pos} trailing bytes after delta payload")
    return QuantizedFrame(pose, face)


def delta_decode(prev: QuantizedFrame, payload: bytes) -> QuantizedFrame:
    """Inverse of delta_encode, taking presence from prev."""
    flags = (FLAG_POSE if prev.pose is not None else 0) | (
        FLAG_FACE if prev.face is not None else 0)
    return delta_decode_checked(prev, payload, flags)


def _presence(qf: QuantizedFrame) -> tuple[bool, bool]:
    return (qf.pose is not None, qf.face is not None)


class StreamEncoder:
    """Per-stream encoder. In delta mode a full-precision keyframe goes out
    every `keyframe_interval` frames and whenever block presence changes."""

    def __init__(self, delta: bool = False, keyframe_interval: int = 30):
        if keyframe_interval < 1:
            raise ValueError("keyframe_interval must be >= 1")
        self.delta = delta
        self.keyframe_interval = keyframe_interval
        self._prev: QuantizedFrame | None = None
        self._since_key = 0

    def encode(self, frame: KeypointFrame) -> bytes:
        if not self.delta:
            return encode_frame(frame)
        qf = quantize_frame(frame)
        if frame.pose is None and frame.face is None:
            raise KeypointError("frame: at least one of pose/face must be present")
        need_key = (
            self._prev is None
            or self._since_key >= self.keyframe_interval
            or _presence(qf) != _presence(self._prev)
        )
        if need_key:
            data = encode_frame(frame)
            self._since_key = 1
        else:
            flags = FLAG_DELTA
            if qf.pose is not None:
                flags |= FLAG_POSE
            if qf.face is not None:
                flags |= FLAG_FACE
            header = _HEADER.pack(VERSION, flags, frame.seq & 0xFFFF,
                                  frame.capture_ts_ms & 0xFFFFFFFF)
            data = header + delta_encode(self._prev, qf)
            self._since_key += 1
        self._prev = qf
        return data


class StreamDecoder:
    """Per-stream decoder holding the last reconstructed lattice frame."""

    def __init__(self):
        self._prev: QuantizedFrame | None = None

    def decode(self, data: bytes) -> tuple[FrameHeader, KeypointFrame]:
        header, qf = _decode_quantized(data, self._prev)
        self._prev = qf
        return header, dequantize_frame(qf, header.seq, header.capture_ts_ms)
