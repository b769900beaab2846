#!/usr/bin/env python3
"""Regenerate committed fixtures: puppet specs, golden wire vectors, the
canonical synthetic trace, and the golden bind-pose SVG.

Golden vector inputs use dyadic rationals only (i/16, i/128, ...), so any
implementation parsing the manifest JSON reconstructs bit-identical doubles
and must reproduce these bytes exactly.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from kpstream.codec import StreamEncoder, encode_frame  # noqa: E402
from kpstream.keypoints import (  # noqa: E402
    BASE_FACE,
    BASE_POSE,
    FACE_POINT_NAMES,
    POSE_KEYPOINT_NAMES,
    FaceFrame,
    Keypoint2D,
    KeypointFrame,
    PoseFrame,
    SynthParams,
    synth_frame,
)
from kpstream.puppet import animate, AnimGate, bind, bind_frame, emit_svg, load_puppet  # noqa: E402
from kpstream.trace import record  # noqa: E402

FIX = ROOT / "fixtures"
SCALE = 400.0


# --- puppets ------------------------------------------------------------------

def make_stick_figure() -> dict:
    kp = {name: (x * SCALE, y * SCALE) for name, (x, y) in
          zip(POSE_KEYPOINT_NAMES, BASE_POSE)}
    verts: list[list[float]] = []

    def add(p) -> int:
        verts.append([round(p[0], 4), round(p[1], 4)])
        return len(verts) - 1

    def mid(a, b):
        return ((a[0] + b[0]) / 2, (a[1] + b[1]) / 2)

    def chain(names):
        pts = [kp[n] for n in names]
        idxs = [add(pts[0])]
        for a, b in zip(pts, pts[1:]):
            idxs.append(add(mid(a, b)))
            idxs.append(add(b))
        return idxs

    import math
    head_c = ((kp["leftEar"][0] + kp["rightEar"][0]) / 2, kp["nose"][1] - 0.03 * SCALE)
    head_r = 0.055 * SCALE
    head = [add((head_c[0] + head_r * math.cos(2 * math.pi * k / 10),
                 head_c[1] + head_r * math.sin(2 * math.pi * k / 10)))
            for k in range(10)]

    arms = chain(["leftWrist", "leftElbow", "leftShoulder",
                  "rightShoulder", "rightElbow", "rightWrist"])
    torso = chain(["leftShoulder", "rightShoulder", "rightHip", "leftHip",
                   "leftShoulder"])
    left_leg = chain(["leftHip", "leftKnee", "leftAnkle"])
    right_leg = chain(["rightHip", "rightKnee", "rightAnkle"])

    stroke = {"stroke": "#1f2430", "stroke_width": 6.0, "fill": "none"}
    paths = [
        {"points": head, "closed": True, **{**stroke, "fill": "#f4c07a"}},
        {"points": arms, "closed": False, **stroke},
        {"points": torso, "closed": True, **{**stroke, "fill": "#7aa7f4"}},
        {"points": left_leg, "closed": False, **stroke},
        {"points": right_leg, "closed": False, **stroke},
    ]
    bones = [
        {"name": "headBar", "from": "leftEar", "to": "rightEar", "source": "pose"},
        {"name": "shoulderBar", "from": "leftShoulder", "to": "rightShoulder", "source": "pose"},
        {"name": "hipBar", "from": "leftHip", "to": "rightHip", "source": "pose"},
        {"name": "leftSide", "from": "leftShoulder", "to": "leftHip", "source": "pose"},
        {"name": "rightSide", "from": "rightShoulder", "to": "rightHip", "source": "pose"},
        {"name": "leftUpperArm", "from": "leftShoulder", "to": "leftElbow", "source": "pose"},
        {"name": "leftForearm", "from": "leftElbow", "to": "leftWrist", "source": "pose"},
        {"name": "rightUpperArm", "from": "rightShoulder", "to": "rightElbow", "source": "pose"},
        {"name": "rightForearm", "from": "rightElbow", "to": "rightWrist", "source": "pose"},
        {"name": "leftThigh", "from": "leftHip", "to": "leftKnee", "source": "pose"},
        {"name": "leftShin", "from": "leftKnee", "to": "leftAnkle", "source": "pose"},
        {"name": "rightThigh", "from": "rightHip", "to": "rightKnee", "source": "pose"},
        {"name": "rightShin", "from": "rightKnee", "to": "rightAnkle", "source": "pose"},
    ]
    return {
        "name": "stick-figure",
        "vertices": verts,
        "paths": paths,
        "bones": bones,
        "bind_keypoints": {"pose": {n: [round(p[0], 4), round(p[1], 4)]
                                    for n, p in kp.items()}},
    }


def make_face_mask() -> dict:
    kp = {name: (x * SCALE, y * SCALE) for name, (x, y) in
          zip(FACE_POINT_NAMES, BASE_FACE)}
    names = list(FACE_POINT_NAMES)
    verts = [[round(kp[n][0], 4), round(kp[n][1], 4)] for n in names]
    vi = {n: i for i, n in enumerate(names)}

    def ring(upper, lower):
        return [vi[n] for n in upper] + [vi[n] for n in reversed(lower)]

    def seq(prefix, n):
        return [f"{prefix}{i}" for i in range(n)]

    # small diamonds around each iris so they render as marks
    extra = []
    for iris in ("leftIris", "rightIris"):
        cx, cy = kp[iris]
        d = 0.006 * SCALE
        idxs = []
        for dx, dy in ((d, 0), (0, d), (-d, 0), (0, -d)):
            verts.append([round(cx + dx, 4), round(cy + dy, 4)])
            idxs.append(len(verts) - 1)
        extra.append(idxs)

    line = {"stroke": "#30343f", "stroke_width": 2.0, "fill": "none"}
    paths = [
        {"points": [vi[n] for n in seq("faceSilhouette", 19)], "closed": True,
         "stroke": "#30343f", "stroke_width": 3.0, "fill": "#f7e3c8"},
        {"points": [vi[n] for n in seq("leftEyebrow", 5)], "closed": False, **line},
        {"points": [vi[n] for n in seq("rightEyebrow", 5)], "closed": False, **line},
        {"points": ring(seq("leftEyeUpper", 4), seq("leftEyeLower", 4)),
         "closed": True, **line},
        {"points": ring(seq("rightEyeUpper", 4), seq("rightEyeLower", 4)),
         "closed": True, **line},
        {"points": extra[0], "closed": True, "stroke": "#30343f",
         "stroke_width": 1.0, "fill": "#30343f"},
        {"points": extra[1], "closed": True, "stroke": "#30343f",
         "stroke_width": 1.0, "fill": "#30343f"},
        {"points": [vi[n] for n in seq("noseBridge", 4)], "closed": False, **line},
        {"points": [vi[n] for n in seq("noseBottom", 3)], "closed": False, **line},
        {"points": ring(seq("upperLipOuter", 5), seq("lowerLipOuter", 5)),
         "closed": True, **{**line, "fill": "#d98a7f"}},
        {"points": ring(seq("upperLipInner", 3), seq("lowerLipInner", 3)),
         "closed": True, **line},
    ]
    bones = [
        {"name": "jaw", "from": "forehead", "to": "faceSilhouette9", "source": "face"},
        {"name": "leftEye", "from": "leftEyeUpper0", "to": "leftEyeUpper3", "source": "face"},
        {"name": "rightEye", "from": "rightEyeUpper0", "to": "rightEyeUpper3", "source": "face"},
        {"name": "mouth", "from": "upperLipOuter0", "to": "upperLipOuter4", "source": "face"},
        {"name": "nose", "from": "noseBridge0", "to": "noseBridge3", "source": "face"},
    ]
    return {
        "name": "face-mask",
        "vertices": verts,
        "paths": paths,
        "bones": bones,
        "bind_keypoints": {"face": {n: [round(p[0], 4), round(p[1], 4)]
                                    for n, p in kp.items()}},
    }


# --- golden wire vectors ---------------------------------------------------------

def golden_pose() -> PoseFrame:
    kps = [Keypoint2D(i / 16, (16 - i) / 16, i / 32 + 0.5) for i in range(17)]
    return PoseFrame(kps, 0.75)


def golden_face() -> FaceFrame:
    pts = [(j / 128, (j + 32) / 128) for j in range(73)]
    return FaceFrame(pts, 0.625)


def frame_to_json(frame: KeypointFrame) -> dict:
    doc: dict = {"seq": frame.seq, "capture_ts_ms": frame.capture_ts_ms}
    if frame.pose is not None:
        doc["pose"] = {"keypoints": [[k.x, k.y, k.confidence]
                                     for k in frame.pose.keypoints],
                       "score": frame.pose.score}
    if frame.face is not None:
        doc["face"] = {"points": [[x, y] for x, y in frame.face.points],
                       "score": frame.face.score}
    return doc


def write_golden(golden_dir: Path) -> None:
    golden_dir.mkdir(parents=True, exist_ok=True)
    full = KeypointFrame(seq=0x0102, capture_ts_ms=0x01020304,
                         pose=golden_pose(), face=golden_face())
    pose_only = KeypointFrame(seq=7, capture_ts_ms=1000, pose=golden_pose())
    face_only = KeypointFrame(seq=8, capture_ts_ms=1500, face=golden_face())

    # delta pair: keyframe then a one-quantization-step move on dyadic inputs
    prev = KeypointFrame(seq=100, capture_ts_ms=10000,
                         pose=golden_pose(), face=golden_face())
    moved = golden_pose()
    moved.keypoints[0] = Keypoint2D(1 / 16, 15 / 16, 0.5)  # same as i=1 slot values
    cur = KeypointFrame(seq=101, capture_ts_ms=10100, pose=moved,
                        face=golden_face())
    enc = StreamEncoder(delta=True, keyframe_interval=1000)
    delta_key = enc.encode(prev)
    delta_frame = enc.encode(cur)

    vectors = {
        "full_frame": (frame_to_json(full), encode_frame(full)),
        "pose_only": (frame_to_json(pose_only), encode_frame(pose_only)),
        "face_only": (frame_to_json(face_only), encode_frame(face_only)),
    }
    manifest: dict = {}
    for name, (doc, data) in vectors.items():
        (golden_dir / f"{name}.bin").write_bytes(data)
        manifest[name] = {"frame": doc, "bytes": len(data), "file": f"{name}.bin"}

    (golden_dir / "delta_keyframe.bin").write_bytes(delta_key)
    (golden_dir / "delta_frame.bin").write_bytes(delta_frame)
    manifest["delta_pair"] = {
        "prev": frame_to_json(prev),
        "cur": frame_to_json(cur),
        "keyframe_file": "delta_keyframe.bin",
        "delta_file": "delta_frame.bin",
        "keyframe_bytes": len(delta_key),
        "delta_bytes": len(delta_frame),
    }
    (golden_dir / "manifest.json").write_text(json.dumps(manifest, indent=2,
                                                         sort_keys=True) + "\n")


# --- trace + svg -------------------------------------------------------------------

def write_trace(path: Path) -> None:
    params = SynthParams(amplitude=0.05, frequency_hz=0.5)
    frames = []
    for k in range(100):  # 10 s at 10 fps
        t = k * 100.0
        frames.append(encode_frame(synth_frame(t, params, seq=k,
                                               capture_ts_ms=round(t))))
    with open(path, "wb") as f:
        n = record(frames, f)
    print(f"  {path.name}: {n} frames, {path.stat().st_size} bytes")


def write_bind_svg(puppet_path: Path, out: Path) -> None:
    spec = load_puppet(puppet_path.read_text())
    puppet = bind(spec)
    geometry = animate(puppet, bind_frame(spec), AnimGate())
    out.write_text(emit_svg(geometry))


def main() -> None:
    FIX.mkdir(exist_ok=True)
    (FIX / "svg").mkdir(exist_ok=True)

    stick = FIX / "stick_figure.json"
    stick.write_text(json.dumps(make_stick_figure(), indent=1) + "\n")
    face = FIX / "face_mask.json"
    face.write_text(json.dumps(make_face_mask(), indent=1) + "\n")
    print(f"  {stick.name}, {face.name}")

    write_golden(FIX / "golden")
    print("  golden vectors")
    write_trace(FIX / "walk_10s.kpt")
    write_bind_svg(stick, FIX / "svg" / "stick_figure_bind.svg")
    write_bind_svg(face, FIX / "svg" / "face_mask_bind.svg")
    print("  bind-pose SVGs")


if __name__ == "__main__":
    main()
