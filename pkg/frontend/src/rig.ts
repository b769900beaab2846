// Puppet rig: spec parsing, inverse-square skin binding, per-bone similarity
// transforms, linear blend skinning. Independent implementation of the same
// documented math as the reference toolkit (same spec, no shared code).

import {
  FACE_COUNT,
  FACE_INDEX,
  POSE_COUNT,
  POSE_INDEX,
  FACE_POINT_NAMES,
  POSE_KEYPOINT_NAMES,
  KeypointFrame,
} from "./keypoints.js";

export const MAX_BONES_PER_VERTEX = 4;
export const WEIGHT_EPS_SCALE = 1e-6;
export const DEGENERATE_SCALE_FLOOR = 1e-6;
export const DEFAULT_CONF_THRESHOLD = 0.3;

export class PuppetError extends Error {}

export interface PuppetPath {
  points: number[];
  closed: boolean;
  stroke: string;
  strokeWidth: number;
  fill: string;
}

export interface Bone {
  name: string;
  source: "pose" | "face";
  idxA: number;
  idxB: number;
}

export interface Viewport {
  ox: number;
  oy: number;
  scale: number;
}

export interface PuppetSpec {
  name: string;
  vertices: Array<[number, number]>;
  paths: PuppetPath[];
  bones: Bone[];
  bindPose: Array<[number, number]> | null;
  bindFace: Array<[number, number]> | null;
  viewbox: [number, number, number, number];
  viewport: Viewport;
  bboxDiag: number;
}

export function toArtwork(vp: Viewport, x: number, y: number): [number, number] {
  return [vp.ox + vp.scale * x, vp.oy + vp.scale * y];
}

export function toNormalized(vp: Viewport, x: number, y: number): [number, number] {
  return [(x - vp.ox) / vp.scale, (y - vp.oy) / vp.scale];
}

export function parsePuppet(doc: any): PuppetSpec {
  for (const key of ["vertices", "paths", "bones", "bind_keypoints"]) {
    if (!(key in doc)) throw new PuppetError(`puppet document missing '${key}'`);
  }
  const vertices: Array<[number, number]> = doc.vertices.map(
    (v: number[]) => [v[0], v[1]]);
  if (!vertices.length) throw new PuppetError("vertices must be non-empty");

  const paths: PuppetPath[] = doc.paths.map((p: any, i: number) => {
    for (const vi of p.points) {
      if (!(vi >= 0 && vi < vertices.length)) {
        throw new PuppetError(`paths[${i}]: dangling vertex index ${vi}`);
      }
    }
    return {
      points: [...p.points],
      closed: !!p.closed,
      stroke: p.stroke ?? "#202020",
      strokeWidth: p.stroke_width ?? 2.0,
      fill: p.fill ?? "none",
    };
  });

  if (!doc.bones.length) throw new PuppetError("puppet needs at least one bone");
  const needPose = doc.bones.some((b: any) => (b.source ?? "pose") === "pose");
  const needFace = doc.bones.some((b: any) => (b.source ?? "pose") === "face");

  const readBind = (names: readonly string[], table: any, which: string) => {
    const out: Array<[number, number]> = [];
    for (const n of names) {
      if (!table || !(n in table)) {
        throw new PuppetError(`bind_keypoints.${which} missing '${n}'`);
      }
      out.push([table[n][0], table[n][1]]);
    }
    return out;
  };
  const bindPose = needPose
    ? readBind(POSE_KEYPOINT_NAMES, doc.bind_keypoints.pose, "pose") : null;
  const bindFace = needFace
    ? readBind(FACE_POINT_NAMES, doc.bind_keypoints.face, "face") : null;

  const bones: Bone[] = doc.bones.map((b: any, i: number) => {
    const source = (b.source ?? "pose") as "pose" | "face";
    if (source !== "pose" && source !== "face") {
      throw new PuppetError(`bones[${i}]: unknown source '${b.source}'`);
    }
    const index = source === "pose" ? POSE_INDEX : FACE_INDEX;
    for (const end of ["from", "to"] as const) {
      if (!index.has(b[end])) {
        throw new PuppetError(`bones[${i}]: unknown keypoint '${b[end]}'`);
      }
    }
    const bind = source === "pose" ? bindPose! : bindFace!;
    const a = bind[index.get(b.from)!];
    const c = bind[index.get(b.to)!];
    if (a[0] === c[0] && a[1] === c[1]) {
      throw new PuppetError(`bones[${i}] (${b.name ?? "?"}): zero-length bind bone`);
    }
    return { name: b.name ?? `bone${i}`, source, idxA: index.get(b.from)!,
             idxB: index.get(b.to)! };
  });

  const bindAll = [...(bindPose ?? []), ...(bindFace ?? [])];
  let minX = Infinity, minY = Infinity, maxX = -Infinity, maxY = -Infinity;
  for (const [x, y] of bindAll) {
    minX = Math.min(minX, x); maxX = Math.max(maxX, x);
    minY = Math.min(minY, y); maxY = Math.max(maxY, y);
  }
  const w = maxX - minX, h = maxY - minY;
  if (w <= 0 && h <= 0) throw new PuppetError("bind keypoints are all coincident");
  const s = Math.max(w, h);
  const viewport: Viewport = { ox: minX - (s - w) / 2, oy: minY - (s - h) / 2, scale: s };

  let vMinX = Infinity, vMinY = Infinity, vMaxX = -Infinity, vMaxY = -Infinity;
  for (const [x, y] of vertices) {
    vMinX = Math.min(vMinX, x); vMaxX = Math.max(vMaxX, x);
    vMinY = Math.min(vMinY, y); vMaxY = Math.max(vMaxY, y);
  }
  const diag = Math.hypot(vMaxX - vMinX, vMaxY - vMinY) || 1;
  const pad = 0.05 * diag;
  return {
    name: doc.name ?? "puppet",
    vertices, paths, bones, bindPose, bindFace,
    viewbox: [vMinX - pad, vMinY - pad, vMaxX - vMinX + 2 * pad, vMaxY - vMinY + 2 * pad],
    viewport, bboxDiag: diag,
  };
}

function segmentDist2(p: [number, number], a: [number, number],
                      b: [number, number]): number {
  const abx = b[0] - a[0], aby = b[1] - a[1];
  const denom = abx * abx + aby * aby;
  let t = ((p[0] - a[0]) * abx + (p[1] - a[1]) * aby) / denom;
  t = t < 0 ? 0 : t > 1 ? 1 : t;
  const dx = p[0] - (a[0] + t * abx), dy = p[1] - (a[1] + t * aby);
  return dx * dx + dy * dy;
}

export interface BoundPuppet {
  spec: PuppetSpec;
  boneIdx: Int32Array;   // N * 4
  weights: Float64Array; // N * 4, rows sum to 1
}

export function bindPuppet(spec: PuppetSpec): BoundPuppet {
  const eps = WEIGHT_EPS_SCALE * spec.bboxDiag * spec.bboxDiag;
  const n = spec.vertices.length;
  const boneIdx = new Int32Array(n * MAX_BONES_PER_VERTEX);
  const weights = new Float64Array(n * MAX_BONES_PER_VERTEX);
  for (let i = 0; i < n; i++) {
    const raw = spec.bones.map((bone, j) => {
      const bind = bone.source === "pose" ? spec.bindPose! : spec.bindFace!;
      const d2 = segmentDist2(spec.vertices[i], bind[bone.idxA], bind[bone.idxB]);
      return { j, w: 1 / (d2 + eps) };
    });
    raw.sort((a, b) => b.w - a.w || a.j - b.j);
    const top = raw.slice(0, MAX_BONES_PER_VERTEX);
    const sum = top.reduce((acc, t) => acc + t.w, 0);
    top.forEach((t, k) => {
      boneIdx[i * MAX_BONES_PER_VERTEX + k] = t.j;
      weights[i * MAX_BONES_PER_VERTEX + k] = t.w / sum;
    });
  }
  return { spec, boneIdx, weights };
}

/** 2D similarity v -> a*v + b over complex numbers (ax, ay) = scale*e^(i*theta). */
export interface BoneTransform {
  ax: number;
  ay: number;
  bx: number;
  by: number;
  degenerate: boolean;
}

export const IDENTITY: BoneTransform = { ax: 1, ay: 0, bx: 0, by: 0, degenerate: false };

export function boneTransform(bindA: [number, number], bindB: [number, number],
                              curA: [number, number], curB: [number, number]): BoneTransform {
  const bdx = bindB[0] - bindA[0], bdy = bindB[1] - bindA[1];
  if (bdx === 0 && bdy === 0) throw new PuppetError("zero-length bind segment");
  const cdx = curB[0] - curA[0], cdy = curB[1] - curA[1];
  let ax: number, ay: number, degenerate = false;
  if (cdx === 0 && cdy === 0) {
    ax = DEGENERATE_SCALE_FLOOR; ay = 0; degenerate = true;
  } else {
    // complex division (cdx + i*cdy) / (bdx + i*bdy)
    const denom = bdx * bdx + bdy * bdy;
    ax = (cdx * bdx + cdy * bdy) / denom;
    ay = (cdy * bdx - cdx * bdy) / denom;
  }
  return {
    ax, ay,
    bx: curA[0] - (ax * bindA[0] - ay * bindA[1]),
    by: curA[1] - (ax * bindA[1] + ay * bindA[0]),
    degenerate,
  };
}

export function applyTransform(t: BoneTransform, x: number, y: number): [number, number] {
  return [t.ax * x - t.ay * y + t.bx, t.ax * y + t.ay * x + t.by];
}

export interface AnimGate {
  confThreshold: number;
  lastConfident: Array<[number, number]> | null;
  lastTransforms: Map<number, BoneTransform>;
}

export function newGate(confThreshold = DEFAULT_CONF_THRESHOLD): AnimGate {
  return { confThreshold, lastConfident: null, lastTransforms: new Map() };
}

export interface FrameGeometry {
  vertices: Float64Array; // N * 2
  paths: PuppetPath[];
  viewbox: [number, number, number, number];
  boneConfidence: number[];
}

/** Normalized frame whose mapped positions equal the bind keypoints. */
export function bindFrame(spec: PuppetSpec): KeypointFrame {
  const vp = spec.viewport;
  const frame: KeypointFrame = { seq: 0, captureTsMs: 0 };
  if (spec.bindPose) {
    frame.pose = {
      keypoints: spec.bindPose.map(([x, y]) => {
        const [nx, ny] = toNormalized(vp, x, y);
        return { x: nx, y: ny, confidence: 1 };
      }),
      score: 1,
    };
  }
  if (spec.bindFace) {
    frame.face = {
      points: spec.bindFace.map(([x, y]) => toNormalized(vp, x, y)),
      score: 1,
    };
  }
  return frame;
}

export function animate(puppet: BoundPuppet, frame: KeypointFrame,
                        gate: AnimGate): FrameGeometry {
  const spec = puppet.spec;
  const vp = spec.viewport;

  let poseArt: Array<[number, number]> | null = null;
  const kpConf = new Map<number, number>();
  if (spec.bindPose && frame.pose) {
    if (!gate.lastConfident) {
      gate.lastConfident = frame.pose.keypoints.map((k) => toArtwork(vp, k.x, k.y));
    }
    poseArt = [];
    for (let i = 0; i < POSE_COUNT; i++) {
      const kp = frame.pose.keypoints[i];
      if (kp.confidence >= gate.confThreshold) {
        const p = toArtwork(vp, kp.x, kp.y);
        gate.lastConfident[i] = p;
        poseArt.push(p);
      } else {
        poseArt.push(gate.lastConfident[i]);
      }
      kpConf.set(i, kp.confidence);
    }
  }

  let faceArt: Array<[number, number]> | null = null;
  if (spec.bindFace && frame.face && frame.face.score >= gate.confThreshold) {
    faceArt = frame.face.points.map(([x, y]) => toArtwork(vp, x, y));
  }

  const nBones = spec.bones.length;
  const transforms: BoneTransform[] = new Array(nBones);
  const boneConfidence: number[] = [];
  for (let j = 0; j < nBones; j++) {
    const bone = spec.bones[j];
    const cur = bone.source === "pose" ? poseArt : faceArt;
    if (!cur) {
      transforms[j] = gate.lastTransforms.get(j) ?? IDENTITY;
      boneConfidence.push(0);
      continue;
    }
    const bind = bone.source === "pose" ? spec.bindPose! : spec.bindFace!;
    const t = boneTransform(bind[bone.idxA], bind[bone.idxB],
                            cur[bone.idxA], cur[bone.idxB]);
    gate.lastTransforms.set(j, t);
    transforms[j] = t;
    boneConfidence.push(bone.source === "pose"
      ? Math.min(kpConf.get(bone.idxA) ?? 0, kpConf.get(bone.idxB) ?? 0)
      : frame.face?.score ?? 0);
  }

  const n = spec.vertices.length;
  const out = new Float64Array(n * 2);
  for (let i = 0; i < n; i++) {
    const [vx, vy] = spec.vertices[i];
    let x = 0, y = 0;
    for (let k = 0; k < MAX_BONES_PER_VERTEX; k++) {
      const w = puppet.weights[i * MAX_BONES_PER_VERTEX + k];
      if (w === 0) continue;
      const t = transforms[puppet.boneIdx[i * MAX_BONES_PER_VERTEX + k]];
      x += w * (t.ax * vx - t.ay * vy + t.bx);
      y += w * (t.ax * vy + t.ay * vx + t.by);
    }
    out[i * 2] = x;
    out[i * 2 + 1] = y;
  }
  return { vertices: out, paths: spec.paths, viewbox: spec.viewbox,
           boneConfidence };
}
