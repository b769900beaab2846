"""2D puppet rig: spec loading, skin binding, and keypoint-driven animation.

A puppet is flat artwork (vertices + styled paths) rigged to bones, each bone
a segment between two named keypoints. Binding assigns every vertex up to
four bone weights by inverse squared distance to the bind-pose segments.
Per frame, each bone gets the 2D similarity transform carrying its bind
segment onto the current segment, and vertices deform by linear blend
skinning. Keypoints arrive normalized to [0,1] and are mapped into artwork
units by fitting the unit square over the bind keypoints' bounding box
(aspect preserved, centered).

Points are complex numbers internally: a similarity transform is v -> a*v + b
with a = scale*e^(i*theta).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .keypoints import (
    FACE_INDEX,
    FACE_POINT_COUNT,
    FACE_POINT_NAMES,
    POSE_INDEX,
    POSE_KEYPOINT_COUNT,
    POSE_KEYPOINT_NAMES,
    FaceFrame,
    Keypoint2D,
    KeypointFrame,
    PoseFrame,
)

MAX_BONES_PER_VERTEX = 4
WEIGHT_EPS_SCALE = 1e-6       # eps = this * bbox_diag^2
DEGENERATE_SCALE_FLOOR = 1e-6
DEFAULT_CONF_THRESHOLD = 0.3
SVG_PRECISION = 3


class PuppetError(ValueError):
    pass


@dataclass(slots=True)
class PuppetPath:
    points: list[int]
    closed: bool = False
    stroke: str = "#202020"
    stroke_width: float = 2.0
    fill: str = "none"


@dataclass(slots=True)
class Bone:
    name: str
    source: str          # "pose" | "face"
    idx_a: int
    idx_b: int


@dataclass(slots=True)
class Viewport:
    """Affine map between normalized [0,1] coordinates and artwork units."""
    ox: float
    oy: float
    scale: float

    def to_artwork(self, x: float, y: float) -> tuple[float, float]:
        return self.ox + self.scale * x, self.oy + self.scale * y

    def to_normalized(self, x: float, y: float) -> tuple[float, float]:
        return (x - self.ox) / self.scale, (y - self.oy) / self.scale


@dataclass
class PuppetSpec:
    name: str
    vertices: np.ndarray              # (N, 2) artwork units
    paths: list[PuppetPath]
    bones: list[Bone]
    bind_pose: np.ndarray | None      # (17, 2) artwork units
    bind_face: np.ndarray | None      # (73, 2)
    viewbox: tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)
    viewport: Viewport = field(default_factory=lambda: Viewport(0.0, 0.0, 1.0))
    bbox_diag: float = 1.0


def load_puppet(document: bytes | str) -> PuppetSpec:
    """Parse and validate a puppet JSON document."""
    try:
        doc = json.loads(document)
    except ValueError as exc:
        raise PuppetError(f"puppet document is not valid JSON: {exc}") from exc
    for key in ("vertices", "paths", "bones", "bind_keypoints"):
        if key not in doc:
            raise PuppetError(f"puppet document missing {key!r}")

    verts = np.asarray(doc["vertices"], dtype=float)
    if verts.ndim != 2 or verts.shape[1] != 2 or len(verts) == 0:
        raise PuppetError("vertices must be a non-empty list of [x, y] pairs")

    paths = []
    for i, p in enumerate(doc["paths"]):
        pts = list(p["points"])
        for vi in pts:
            if not 0 <= vi < len(verts):
                raise PuppetError(f"paths[{i}]: dangling vertex index {vi}")
        paths.append(PuppetPath(
            points=pts,
            closed=bool(p.get("closed", False)),
            stroke=str(p.get("stroke", "#202020")),
            stroke_width=float(p.get("stroke_width", 2.0)),
            fill=str(p.get("fill", "none")),
        ))

    raw_bind = doc["bind_keypoints"]
    bind_pose = bind_face = None
    bones = []
    if not doc["bones"]:
        raise PuppetError("puppet needs at least one bone")
    need_pose = any(b.get("source", "pose") == "pose" for b in doc["bones"])
    need_face = any(b.get("source", "pose") == "face" for b in doc["bones"])

    if need_pose:
        table = raw_bind.get("pose", {})
        missing = [n for n in POSE_KEYPOINT_NAMES if n not in table]
        if missing:
            raise PuppetError(f"bind_keypoints.pose missing {missing[:3]}"
                              f"{'...' if len(missing) > 3 else ''}")
        bind_pose = np.array([table[n] for n in POSE_KEYPOINT_NAMES], dtype=float)
    if need_face:
        table = raw_bind.get("face", {})
        missing = [n for n in FACE_POINT_NAMES if n not in table]
        if missing:
            raise PuppetError(f"bind_keypoints.face missing {missing[:3]}"
                              f"{'...' if len(missing) > 3 else ''}")
        bind_face = np.array([table[n] for n in FACE_POINT_NAMES], dtype=float)

    for i, b in enumerate(doc["bones"]):
        source = b.get("source", "pose")
        if source not in ("pose", "face"):
            raise PuppetError(f"bones[{i}]: unknown source {source!r}")
        index = POSE_INDEX if source == "pose" else FACE_INDEX
        for end in ("from", "to"):
            if b[end] not in index:
                raise PuppetError(f"bones[{i}]: unknown keypoint {b[end]!r}")
        idx_a, idx_b = index[b["from"]], index[b["to"]]
        bind = bind_pose if source == "pose" else bind_face
        if np.allclose(bind[idx_a], bind[idx_b]):
            raise PuppetError(f"bones[{i}] ({b.get('name', '?')}): zero-length bind bone")
        bones.append(Bone(str(b.get("name", f"bone{i}")), source, idx_a, idx_b))

    bind_all = [a for a in (bind_pose, bind_face) if a is not None]
    bind_cat = np.concatenate(bind_all)
    lo, hi = bind_cat.min(axis=0), bind_cat.max(axis=0)
    w, h = float(hi[0] - lo[0]), float(hi[1] - lo[1])
    if w <= 0 and h <= 0:
        raise PuppetError("bind keypoints are all coincident")
    s = max(w, h)
    viewport = Viewport(float(lo[0]) - (s - w) / 2.0, float(lo[1]) - (s - h) / 2.0, s)

    vlo, vhi = verts.min(axis=0), verts.max(axis=0)
    diag = float(np.hypot(*(vhi - vlo))) or 1.0
    pad = 0.05 * diag
    viewbox = (float(vlo[0]) - pad, float(vlo[1]) - pad,
               float(vhi[0] - vlo[0]) + 2 * pad, float(vhi[1] - vlo[1]) + 2 * pad)

    return PuppetSpec(
        name=str(doc.get("name", "puppet")),
        vertices=verts, paths=paths, bones=bones,
        bind_pose=bind_pose, bind_face=bind_face,
        viewbox=viewbox, viewport=viewport, bbox_diag=diag,
    )


def _segment_dist2(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    t = np.clip(((points - a) @ ab) / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    d = points - proj
    return np.einsum("ij,ij->i", d, d)


@dataclass
class BoundPuppet:
    spec: PuppetSpec
    bone_idx: np.ndarray   # (N, 4) int
    weights: np.ndarray    # (N, 4) float, rows sum to 1


def bind(spec: PuppetSpec) -> BoundPuppet:
    """Skin the artwork: per-vertex inverse-square distance weights to each
    bind bone segment, top four kept and renormalized."""
    eps = WEIGHT_EPS_SCALE * spec.bbox_diag ** 2
    raw = np.empty((len(spec.vertices), len(spec.bones)))
    for j, bone in enumerate(spec.bones):
        bindkp = spec.bind_pose if bone.source == "pose" else spec.bind_face
        raw[:, j] = 1.0 / (_segment_dist2(spec.vertices, bindkp[bone.idx_a],
                                          bindkp[bone.idx_b]) + eps)
    k = min(MAX_BONES_PER_VERTEX, raw.shape[1])
    order = np.argsort(-raw, axis=1, kind="stable")[:, :k]
    top = np.take_along_axis(raw, order, axis=1)
    weights = top / top.sum(axis=1, keepdims=True)
    if k < MAX_BONES_PER_VERTEX:
        pad = MAX_BONES_PER_VERTEX - k
        order = np.pad(order, ((0, 0), (0, pad)))
        weights = np.pad(weights, ((0, 0), (0, pad)))
    return BoundPuppet(spec=spec, bone_idx=order, weights=weights)


@dataclass(slots=True)
class BoneTransform:
    a: complex   # rotation * scale
    b: complex   # translation; maps bind_a onto cur_a
    degenerate: bool = False

    @property
    def scale(self) -> float:
        return abs(self.a)

    @property
    def rotation_rad(self) -> float:
        return math.atan2(self.a.imag, self.a.real)

    @property
    def translation(self) -> tuple[float, float]:
        return self.b.real, self.b.imag

    def apply(self, x: float, y: float) -> tuple[float, float]:
        v = self.a * complex(x, y) + self.b
        return v.real, v.imag


IDENTITY_TRANSFORM = BoneTransform(1.0 + 0.0j, 0.0 + 0.0j)


def bone_transform(bind_a, bind_b, cur_a, cur_b) -> BoneTransform:
    """Similarity transform carrying segment (bind_a, bind_b) onto
    (cur_a, cur_b). A collapsed current segment floors the scale instead of
    producing NaNs."""
    ba = complex(*bind_a)
    bb = complex(*bind_b)
    ca = complex(*cur_a)
    cb = complex(*cur_b)
    bind_d = bb - ba
    if bind_d == 0:
        raise PuppetError("zero-length bind segment")
    cur_d = cb - ca
    if cur_d == 0:
        a = complex(DEGENERATE_SCALE_FLOOR, 0.0)
        return BoneTransform(a, ca - a * ba, degenerate=True)
    a = cur_d / bind_d
    return BoneTransform(a, ca - a * ba)


@dataclass
class AnimGate:
    """Receiver-side confidence gate + per-bone transform memory. One per
    incoming stream."""
    conf_threshold: float = DEFAULT_CONF_THRESHOLD
    last_confident: np.ndarray | None = None     # (17, 2) artwork units
    last_transforms: dict[int, BoneTransform] = field(default_factory=dict)


@dataclass
class FrameGeometry:
    vertices: np.ndarray                 # (N, 2)
    paths: list[PuppetPath]
    viewbox: tuple[float, float, float, float]
    bone_confidence: list[float]


def bind_frame(spec: PuppetSpec) -> KeypointFrame:
    """The normalized KeypointFrame whose mapped positions equal the bind
    keypoints exactly; animating it reproduces the artwork."""
    vp = spec.viewport
    pose = None
    if spec.bind_pose is not None:
        kps = [Keypoint2D(*vp.to_normalized(x, y), 1.0) for x, y in spec.bind_pose]
        pose = PoseFrame(kps, 1.0)
    face = None
    if spec.bind_face is not None:
        pts = [vp.to_normalized(x, y) for x, y in spec.bind_face]
        face = FaceFrame(pts, 1.0)
    return KeypointFrame(seq=0, capture_ts_ms=0, pose=pose, face=face)


def _current_positions(puppet: BoundPuppet, frame: KeypointFrame,
                       gate: AnimGate) -> tuple[np.ndarray | None, np.ndarray | None, dict[int, float]]:
    spec = puppet.spec
    vp = spec.viewport
    conf: dict[int, float] = {}

    pose_art = None
    if spec.bind_pose is not None and frame.pose is not None:
        pose = frame.pose
        if gate.last_confident is None:
            gate.last_confident = np.array(
                [vp.to_artwork(k.x, k.y) for k in pose.keypoints])
        pose_art = np.empty((POSE_KEYPOINT_COUNT, 2))
        for i, kp in enumerate(pose.keypoints):
            if kp.confidence >= gate.conf_threshold:
                pose_art[i] = vp.to_artwork(kp.x, kp.y)
                gate.last_confident[i] = pose_art[i]
            else:
                pose_art[i] = gate.last_confident[i]
            conf[i] = kp.confidence

    face_art = None
    if spec.bind_face is not None and frame.face is not None:
        if frame.face.score >= gate.conf_threshold:
            face_art = np.array([vp.to_artwork(x, y) for x, y in frame.face.points])
    return pose_art, face_art, conf


def animate(puppet: BoundPuppet, frame: KeypointFrame, gate: AnimGate) -> FrameGeometry:
    """Linear blend skinning of the artwork against the frame's keypoints.

    Low-confidence pose keypoints stick to their last confident position; an
    absent or low-confidence block leaves its bones at their previous
    transforms (bind pose before anything arrives).
    """
    spec = puppet.spec
    pose_art, face_art, kp_conf = _current_positions(puppet, frame, gate)

    n_bones = len(spec.bones)
    a_arr = np.empty(n_bones, dtype=complex)
    b_arr = np.empty(n_bones, dtype=complex)
    bone_conf = []
    for j, bone in enumerate(spec.bones):
        cur = pose_art if bone.source == "pose" else face_art
        if cur is None:
            t = gate.last_transforms.get(j, IDENTITY_TRANSFORM)
            c = 0.0
        else:
            bindkp = spec.bind_pose if bone.source == "pose" else spec.bind_face
            t = bone_transform(bindkp[bone.idx_a], bindkp[bone.idx_b],
                               cur[bone.idx_a], cur[bone.idx_b])
            gate.last_transforms[j] = t
            if bone.source == "pose":
                c = min(kp_conf.get(bone.idx_a, 0.0), kp_conf.get(bone.idx_b, 0.0))
            else:
                c = frame.face.score if frame.face else 0.0
        a_arr[j] = t.a
        b_arr[j] = t.b
        bone_conf.append(c)

    v = spec.vertices[:, 0] + 1j * spec.vertices[:, 1]
    idx = puppet.bone_idx
    w = puppet.weights
    out = np.zeros(len(v), dtype=complex)
    for j in range(idx.shape[1]):
        aj = a_arr[idx[:, j]]
        bj = b_arr[idx[:, j]]
        out += w[:, j] * (aj * v + bj)

    verts = np.column_stack([out.real, out.imag])
    return FrameGeometry(vertices=verts, paths=spec.paths,
                         viewbox=spec.viewbox, bone_confidence=bone_conf)


def _fmt(v: float) -> str:
    s = f"{v:.{SVG_PRECISION}f}"
    # -0.000 and 0.000 must serialize identically for byte-stable output
    return f"{0.0:.{SVG_PRECISION}f}" if float(s) == 0 else s


def _path_d(geometry: FrameGeometry, path: PuppetPath) -> str:
    pts = geometry.vertices[path.points]
    cmds = [f"M {_fmt(pts[0, 0])},{_fmt(pts[0, 1])}"]
    cmds += [f"L {_fmt(x)},{_fmt(y)}" for x, y in pts[1:]]
    if path.closed:
        cmds.append("Z")
    return " ".join(cmds)


def emit_svg(geometry: FrameGeometry) -> str:
    """Deterministic SVG document for one frame: one path element per styled
    path, coordinates at fixed precision."""
    vb = " ".join(_fmt(v) for v in geometry.viewbox)
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{vb}">',
    ]
    for path in geometry.paths:
        if not path.points:
            continue
        lines.append(
            f'  <path d="{_path_d(geometry, path)}" fill="{path.fill}" '
            f'stroke="{path.stroke}" stroke-width="{_fmt(path.stroke_width)}" '
            f'stroke-linecap="round" stroke-linejoin="round"/>'
        )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def emit_animated_svg(geometries: list[FrameGeometry], fps: float) -> str:
    """Single SVG whose paths morph through the frame sequence (SMIL)."""
    if not geometries:
        return '<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 1 1">\n</svg>\n'
    first = geometries[0]
    dur = len(geometries) / fps
    vb = " ".join(_fmt(v) for v in first.viewbox)
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{vb}">']
    for pi, path in enumerate(first.paths):
        if not path.points:
            continue
        values = ";".join(_path_d(g, g.paths[pi]) for g in geometries)
        lines.append(
            f'  <path d="{_path_d(first, path)}" fill="{path.fill}" '
            f'stroke="{path.stroke}" stroke-width="{_fmt(path.stroke_width)}" '
            f'stroke-linecap="round" stroke-linejoin="round">'
        )
        lines.append(
            f'    <animate attributeName="d" dur="{dur:.3f}s" '
            f'repeatCount="indefinite" values="{values}"/>'
        )
        lines.append("  </path>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
