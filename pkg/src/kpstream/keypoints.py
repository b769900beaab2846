"""Keypoint frame types, fixed-point quantization, stabilization, synthetic motion.

A frame carries an optional 17-point body pose and an optional 73-point face
mesh, both in coordinates normalized to [0, 1] of the capture frame (x over
width, y over height). The index orders below are normative for the wire
codec, the puppet rig, and any remote client; see docs/FORMATS.md.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

POSE_KEYPOINT_COUNT = 17
FACE_POINT_COUNT = 73
COORD_MAX = 65535  # 16-bit fixed point

# Frozen pose order, index 0..16. "left" is the subject's left.
POSE_KEYPOINT_NAMES = (
    "nose",
    "leftEye",
    "rightEye",
    "leftEar",
    "rightEar",
    "leftShoulder",
    "rightShoulder",
    "leftElbow",
    "rightElbow",
    "leftWrist",
    "rightWrist",
    "leftHip",
    "rightHip",
    "leftKnee",
    "rightKnee",
    "leftAnkle",
    "rightAnkle",
)

# Frozen face point order: groups laid out contiguously, index 0..72.
_FACE_GROUPS = (
    ("faceSilhouette", 19),
    ("leftEyebrow", 5),
    ("rightEyebrow", 5),
    ("leftEyeUpper", 4),
    ("leftEyeLower", 4),
    ("rightEyeUpper", 4),
    ("rightEyeLower", 4),
    ("leftIris", 1),
    ("rightIris", 1),
    ("noseBridge", 4),
    ("noseBottom", 3),
    ("upperLipOuter", 5),
    ("lowerLipOuter", 5),
    ("upperLipInner", 3),
    ("lowerLipInner", 3),
    ("leftCheek", 1),
    ("rightCheek", 1),
    ("forehead", 1),
)


def _face_names() -> tuple[str, ...]:
    names = []
    for base, count in _FACE_GROUPS:
        if count == 1:
            names.append(base)
        else:
            names.extend(f"{base}{i}" for i in range(count))
    return tuple(names)


FACE_POINT_NAMES = _face_names()
assert len(FACE_POINT_NAMES) == FACE_POINT_COUNT

POSE_INDEX = {name: i for i, name in enumerate(POSE_KEYPOINT_NAMES)}
FACE_INDEX = {name: i for i, name in enumerate(FACE_POINT_NAMES)}


class KeypointError(ValueError):
    """Structural problem with a keypoint frame (cardinality, missing blocks)."""


@dataclass(slots=True)
class Keypoint2D:
    x: float
    y: float
    confidence: float


@dataclass(slots=True)
class PoseFrame:
    keypoints: list[Keypoint2D]
    score: float


@dataclass(slots=True)
class FaceFrame:
    points: list[tuple[float, float]]
    score: float


@dataclass(slots=True)
class KeypointFrame:
    seq: int
    capture_ts_ms: int
    pose: PoseFrame | None = None
    face: FaceFrame | None = None


def quantize_coord(x: float) -> int:
    """Map a [0,1] coordinate to 16-bit fixed point, rounding half away from zero.

    Out-of-range inputs are clamped first, so the function is total. The
    rounding is exact: x * 65535 is evaluated in integer arithmetic on the
    float's exact ratio, so no double-rounding can flip a .5 boundary.
    """
    if x != x:  # NaN
        return 0
    if x <= 0.0:
        return 0
    if x >= 1.0:
        return COORD_MAX
    num, den = x.as_integer_ratio()
    n = num * COORD_MAX
    q, rem = divmod(n, den)
    return int(q) + (1 if 2 * rem >= den else 0)


def dequantize_coord(q: int) -> float:
    if not 0 <= q <= COORD_MAX:
        raise ValueError(f"quantized coordinate out of range: {q}")
    return q / COORD_MAX


def _clamp01(v: float) -> float:
    if v != v:  # NaN counts as clamped-to-zero
        return 0.0
    return 0.0 if v < 0.0 else (1.0 if v > 1.0 else v)


@dataclass(slots=True)
class ValidationResult:
    frame: KeypointFrame
    clamped: bool
    clamp_count: int


def validate_frame(frame: KeypointFrame) -> ValidationResult:
    """Enforce cardinalities and clamp coordinates/confidences into [0,1].

    Raises KeypointError naming the offending field on structural problems;
    range violations are repaired and reported via the `clamped` flag.
    """
    if frame.pose is None and frame.face is None:
        raise KeypointError("frame: at least one of pose/face must be present")

    clamps = 0
    pose = None
    if frame.pose is not None:
        kps = frame.pose.keypoints
        if len(kps) != POSE_KEYPOINT_COUNT:
            raise KeypointError(
                f"pose.keypoints: expected {POSE_KEYPOINT_COUNT}, got {len(kps)}"
            )
        fixed = []
        for kp in kps:
            x, y, c = _clamp01(kp.x), _clamp01(kp.y), _clamp01(kp.confidence)
            if (x, y, c) != (kp.x, kp.y, kp.confidence):
                clamps += 1
            fixed.append(Keypoint2D(x, y, c))
        score = _clamp01(frame.pose.score)
        if score != frame.pose.score:
            clamps += 1
        pose = PoseFrame(fixed, score)

    face = None
    if frame.face is not None:
        pts = frame.face.points
        if len(pts) != FACE_POINT_COUNT:
            raise KeypointError(
                f"face.points: expected {FACE_POINT_COUNT}, got {len(pts)}"
            )
        fixed_pts = []
        for x, y in pts:
            cx, cy = _clamp01(x), _clamp01(y)
            if (cx, cy) != (x, y):
                clamps += 1
            fixed_pts.append((cx, cy))
        score = _clamp01(frame.face.score)
        if score != frame.face.score:
            clamps += 1
        face = FaceFrame(fixed_pts, score)

    out = KeypointFrame(
        seq=frame.seq & 0xFFFF,
        capture_ts_ms=frame.capture_ts_ms & 0xFFFFFFFF,
        pose=pose,
        face=face,
    )
    return ValidationResult(out, clamps > 0, clamps)


class Stabilizer:
    """Per-coordinate EMA smoothing with a confidence gate on pose keypoints.

    out = alpha * in + (1 - alpha) * prev_out, seeded from the first
    observation. A pose keypoint whose confidence is below `conf_threshold`
    contributes its last confident position instead of the raw observation;
    the first frame seeds `last_confident` unconditionally so something
    renders even when detection starts poorly. Face points have no per-point
    confidence and are smoothed ungated. One instance per stream; not shared
    across threads.
    """

    def __init__(self, alpha: float = 0.5, conf_threshold: float = 0.3):
        if not 0.0 < alpha <= 1.0:
            raise ValueError(f"alpha must be in (0,1], got {alpha}")
        if not 0.0 <= conf_threshold <= 1.0:
            raise ValueError(f"conf_threshold must be in [0,1], got {conf_threshold}")
        self.alpha = alpha
        self.conf_threshold = conf_threshold
        self.pose_ema: list[tuple[float, float]] | None = None
        self.face_ema: list[tuple[float, float]] | None = None
        self.last_confident: list[tuple[float, float]] | None = None

    def _ema(self, prev: float, cur: float) -> float:
        return self.alpha * cur + (1.0 - self.alpha) * prev

    def process(self, frame: KeypointFrame) -> KeypointFrame:
        pose = frame.pose
        if pose is not None:
            if self.last_confident is None:
                self.last_confident = [(kp.x, kp.y) for kp in pose.keypoints]
            inputs = []
            for i, kp in enumerate(pose.keypoints):
                if kp.confidence >= self.conf_threshold:
                    self.last_confident[i] = (kp.x, kp.y)
                    inputs.append((kp.x, kp.y))
                else:
                    inputs.append(self.last_confident[i])
            if self.pose_ema is None:
                self.pose_ema = inputs
            else:
                self.pose_ema = [
                    (self._ema(px, x), self._ema(py, y))
                    for (px, py), (x, y) in zip(self.pose_ema, inputs)
                ]
            smoothed = [
                Keypoint2D(x, y, kp.confidence)
                for (x, y), kp in zip(self.pose_ema, pose.keypoints)
            ]
            pose = PoseFrame(smoothed, pose.score)

        face = frame.face
        if face is not None:
            if self.face_ema is None:
                self.face_ema = list(face.points)
            else:
                self.face_ema = [
                    (self._ema(px, x), self._ema(py, y))
                    for (px, py), (x, y) in zip(self.face_ema, face.points)
                ]
            face = FaceFrame(list(self.face_ema), face.score)

        return replace(frame, pose=pose, face=face)


# Synthetic motion: a standing figure plus a face layout, each point orbiting
# its base position sinusoidally. Deterministic in (t_ms, params), so traces
# and tests reproduce bit-for-bit. Formula (normative for test oracles):
#   x_i(t) = bx_i + A * sin(2*pi*f*t/1000 + phase + PHASE_STEP*i)
#   y_i(t) = by_i + A * cos(2*pi*f*t/1000 + phase + PHASE_STEP*i)
# where i is the pose index, or 17 + j for face point j.

PHASE_STEP = 2.399963

BASE_POSE: tuple[tuple[float, float], ...] = (
    (0.50, 0.18),  # nose
    (0.53, 0.16),  # leftEye
    (0.47, 0.16),  # rightEye
    (0.56, 0.17),  # leftEar
    (0.44, 0.17),  # rightEar
    (0.60, 0.30),  # leftShoulder
    (0.40, 0.30),  # rightShoulder
    (0.66, 0.42),  # leftElbow
    (0.34, 0.42),  # rightElbow
    (0.70, 0.54),  # leftWrist
    (0.30, 0.54),  # rightWrist
    (0.57, 0.55),  # leftHip
    (0.43, 0.55),  # rightHip
    (0.58, 0.72),  # leftKnee
    (0.42, 0.72),  # rightKnee
    (0.58, 0.88),  # leftAnkle
    (0.42, 0.88),  # rightAnkle
)


def _base_face() -> tuple[tuple[float, float], ...]:
    cx, cy = 0.5, 0.20
    pts: list[tuple[float, float]] = []

    # faceSilhouette: full ellipse, 19 points clockwise from the top
    for k in range(19):
        a = -math.pi / 2 + 2 * math.pi * k / 19
        pts.append((cx + 0.085 * math.cos(a), cy + 0.105 * math.sin(a)))

    def arc(x0, x1, y, n, bow):
        out = []
        for k in range(n):
            u = k / (n - 1) if n > 1 else 0.5
            out.append((x0 + (x1 - x0) * u, y - bow * math.sin(math.pi * u)))
        return out

    lex, rex, ey = cx + 0.035, cx - 0.035, cy - 0.02
    pts += arc(lex - 0.022, lex + 0.022, ey - 0.028, 5, 0.006)  # leftEyebrow
    pts += arc(rex - 0.022, rex + 0.022, ey - 0.028, 5, 0.006)  # rightEyebrow
    pts += arc(lex - 0.018, lex + 0.018, ey, 4, 0.008)          # leftEyeUpper
    pts += arc(lex - 0.018, lex + 0.018, ey, 4, -0.008)         # leftEyeLower
    pts += arc(rex - 0.018, rex + 0.018, ey, 4, 0.008)          # rightEyeUpper
    pts += arc(rex - 0.018, rex + 0.018, ey, 4, -0.008)         # rightEyeLower
    pts.append((lex, ey))  # leftIris
    pts.append((rex, ey))  # rightIris

    for k in range(4):  # noseBridge, down the midline
        pts.append((cx, cy - 0.030 + 0.015 * k))
    pts += [(cx - 0.012, cy + 0.025), (cx, cy + 0.028), (cx + 0.012, cy + 0.025)]  # noseBottom

    my = cy + 0.055
    pts += arc(cx - 0.028, cx + 0.028, my, 5, 0.010)   # upperLipOuter
    pts += arc(cx - 0.028, cx + 0.028, my, 5, -0.012)  # lowerLipOuter
    pts += arc(cx - 0.016, cx + 0.016, my, 3, 0.004)   # upperLipInner
    pts += arc(cx - 0.016, cx + 0.016, my, 3, -0.005)  # lowerLipInner

    pts.append((cx + 0.050, cy + 0.020))  # leftCheek
    pts.append((cx - 0.050, cy + 0.020))  # rightCheek
    pts.append((cx, cy - 0.065))          # forehead

    assert len(pts) == FACE_POINT_COUNT
    return tuple(pts)


BASE_FACE = _base_face()


@dataclass(frozen=True)
class SynthParams:
    """Sinusoidal motion parameters. Rejected at construction if any point
    could leave [0,1]."""

    amplitude: float = 0.03
    frequency_hz: float = 0.5
    phase: float = 0.0
    include_pose: bool = True
    include_face: bool = True

    def __post_init__(self):
        for name in ("amplitude", "frequency_hz", "phase"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")
        if self.frequency_hz <= 0:
            raise ValueError("frequency_hz must be > 0")
        if not (self.include_pose or self.include_face):
            raise ValueError("at least one of pose/face must be enabled")
        margin = self.amplitude
        for x, y in BASE_POSE + BASE_FACE:
            if x - margin < 0 or x + margin > 1 or y - margin < 0 or y + margin > 1:
                raise ValueError(
                    f"amplitude {self.amplitude} would push coordinates outside [0,1]"
                )

    @property
    def period_ms(self) -> float:
        return 1000.0 / self.frequency_hz


def synth_frame(t_ms: float, params: SynthParams, seq: int = 0,
                capture_ts_ms: int | None = None) -> KeypointFrame:
    """Deterministic synthetic keypoint frame at time t_ms. Confidences are 1.0;
    seq and capture timestamp are the caller's business."""
    w = 2 * math.pi * params.frequency_hz * t_ms / 1000.0 + params.phase
    a = params.amplitude

    pose = None
    if params.include_pose:
        kps = [
            Keypoint2D(
                bx + a * math.sin(w + PHASE_STEP * i),
                by + a * math.cos(w + PHASE_STEP * i),
                1.0,
            )
            for i, (bx, by) in enumerate(BASE_POSE)
        ]
        pose = PoseFrame(kps, 1.0)

    face = None
    if params.include_face:
        pts = [
            (
                bx + a * math.sin(w + PHASE_STEP * (POSE_KEYPOINT_COUNT + j)),
                by + a * math.cos(w + PHASE_STEP * (POSE_KEYPOINT_COUNT + j)),
            )
            for j, (bx, by) in enumerate(BASE_FACE)
        ]
        face = FaceFrame(pts, 1.0)

    ts = int(t_ms) if capture_ts_ms is None else capture_ts_ms
    return KeypointFrame(seq=seq & 0xFFFF, capture_ts_ms=ts & 0xFFFFFFFF,
                         pose=pose, face=face)
