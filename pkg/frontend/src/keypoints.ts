// Keypoint types and the normative index orders. These must match the
// tables in docs/FORMATS.md exactly; the wire codec serializes in this
// order and the rig resolves bone endpoints by these names.

export const POSE_KEYPOINT_NAMES = [
  "nose", "leftEye", "rightEye", "leftEar", "rightEar",
  "leftShoulder", "rightShoulder", "leftElbow", "rightElbow",
  "leftWrist", "rightWrist", "leftHip", "rightHip",
  "leftKnee", "rightKnee", "leftAnkle", "rightAnkle",
] as const;

const FACE_GROUPS: Array<[string, number]> = [
  ["faceSilhouette", 19],
  ["leftEyebrow", 5], ["rightEyebrow", 5],
  ["leftEyeUpper", 4], ["leftEyeLower", 4],
  ["rightEyeUpper", 4], ["rightEyeLower", 4],
  ["leftIris", 1], ["rightIris", 1],
  ["noseBridge", 4], ["noseBottom", 3],
  ["upperLipOuter", 5], ["lowerLipOuter", 5],
  ["upperLipInner", 3], ["lowerLipInner", 3],
  ["leftCheek", 1], ["rightCheek", 1], ["forehead", 1],
];

export const FACE_POINT_NAMES: string[] = FACE_GROUPS.flatMap(([base, n]) =>
  n === 1 ? [base] : Array.from({ length: n }, (_, i) => `${base}${i}`),
);

export const POSE_COUNT = 17;
export const FACE_COUNT = 73;

export const POSE_INDEX = new Map(POSE_KEYPOINT_NAMES.map((n, i) => [n as string, i]));
export const FACE_INDEX = new Map(FACE_POINT_NAMES.map((n, i) => [n, i]));

export interface Keypoint2D {
  x: number;
  y: number;
  confidence: number;
}

export interface PoseFrame {
  keypoints: Keypoint2D[]; // exactly 17
  score: number;
}

export interface FaceFrame {
  points: Array<[number, number]>; // exactly 73
  score: number;
}

export interface KeypointFrame {
  seq: number;          // u16, wrapping
  captureTsMs: number;  // u32, wrapping
  pose?: PoseFrame;
  face?: FaceFrame;
}

export function clamp01(v: number): number {
  if (Number.isNaN(v)) return 0;
  return v < 0 ? 0 : v > 1 ? 1 : v;
}

/**
 * Exact 16-bit fixed-point quantization: round_half_away_from_zero(x * 65535)
 * evaluated in integer arithmetic on the double's exact binary expansion.
 * Math.round(x * 65535) is NOT equivalent: the float product can round onto
 * a .5 boundary (e.g. x = 0.3) and flip the result. Byte-identical output
 * with every other conforming encoder depends on this being exact.
 */
export function quantizeCoord(x: number): number {
  if (Number.isNaN(x) || x <= 0) return 0;
  if (x >= 1) return 65535;
  const buf = new DataView(new ArrayBuffer(8));
  buf.setFloat64(0, x);
  const hi = buf.getUint32(0);
  const lo = buf.getUint32(4);
  const expBits = (hi >>> 20) & 0x7ff;
  let mantissa = (BigInt(hi & 0xfffff) << 32n) | BigInt(lo);
  let exp: number;
  if (expBits === 0) {
    exp = -1074; // subnormal
  } else {
    mantissa |= 1n << 52n;
    exp = expBits - 1075;
  }
  // x = mantissa * 2^exp with exp < 0 for all x in (0, 1)
  const num = mantissa * 65535n;
  const shift = BigInt(-exp);
  const q = num >> shift;
  const rem = num & ((1n << shift) - 1n);
  const half = 1n << (shift - 1n);
  return Number(q + (rem >= half ? 1n : 0n));
}

export function dequantizeCoord(q: number): number {
  if (!Number.isInteger(q) || q < 0 || q > 65535) {
    throw new RangeError(`quantized coordinate out of range: ${q}`);
  }
  return q / 65535;
}

export class CardinalityError extends Error {}

export function validateFrame(frame: KeypointFrame): KeypointFrame {
  if (!frame.pose && !frame.face) {
    throw new CardinalityError("frame: at least one of pose/face must be present");
  }
  let pose: PoseFrame | undefined;
  if (frame.pose) {
    if (frame.pose.keypoints.length !== POSE_COUNT) {
      throw new CardinalityError(
        `pose.keypoints: expected ${POSE_COUNT}, got ${frame.pose.keypoints.length}`);
    }
    pose = {
      keypoints: frame.pose.keypoints.map((k) => ({
        x: clamp01(k.x), y: clamp01(k.y), confidence: clamp01(k.confidence),
      })),
      score: clamp01(frame.pose.score),
    };
  }
  let face: FaceFrame | undefined;
  if (frame.face) {
    if (frame.face.points.length !== FACE_COUNT) {
      throw new CardinalityError(
        `face.points: expected ${FACE_COUNT}, got ${frame.face.points.length}`);
    }
    face = {
      points: frame.face.points.map(([x, y]) => [clamp01(x), clamp01(y)]),
      score: clamp01(frame.face.score),
    };
  }
  return {
    seq: frame.seq & 0xffff,
    captureTsMs: frame.captureTsMs >>> 0,
    pose,
    face,
  };
}
