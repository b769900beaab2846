// Webcam capture: run in-browser pose + face-landmark detectors per tick and
// map their outputs onto the normative 17/73 index orders.
//
// The detectors are pluggable. The default adapter loads MediaPipe Tasks
// Vision from a CDN at runtime (no build-time ML dependency); a synthetic
// detector provides a camera-free demo and deterministic tests. The mapping
// from the 478-landmark face model down to the 73 transmitted points is this
// client's own construction (documented below), chosen to cover the same
// facial features the animated subset needs.

import {
  FACE_COUNT,
  POSE_COUNT,
  FaceFrame,
  KeypointFrame,
  PoseFrame,
} from "./keypoints.js";

export interface DetectionResult {
  pose?: PoseFrame;
  face?: FaceFrame;
  extractionMs: number;
}

export interface Detector {
  detect(video: HTMLVideoElement, tMs: number): Promise<DetectionResult>;
}

// BlazePose-style 33-landmark model -> normative 17-point order.
export const POSE_LANDMARK_MAP = [0, 2, 5, 7, 8, 11, 12, 13, 14, 15, 16,
                                  23, 24, 25, 26, 27, 28];

// Canonical face-mesh landmark groups (MediaPipe topology), thinned to the
// 73-point subset: evenly sampled along each feature.
const MESH_SILHOUETTE = [
  10, 338, 297, 332, 284, 251, 389, 356, 454, 323, 361, 288, 397, 365, 379,
  378, 400, 377, 152, 148, 176, 149, 150, 136, 172, 58, 132, 93, 234, 127,
  162, 21, 54, 103, 67, 109,
];
const MESH_LEFT_BROW = [383, 300, 293, 334, 296, 336, 285, 417];
const MESH_RIGHT_BROW = [156, 70, 63, 105, 66, 107, 55, 193];
const MESH_LEFT_EYE_UPPER = [466, 388, 387, 386, 385, 384, 398];
const MESH_LEFT_EYE_LOWER = [263, 249, 390, 373, 374, 380, 381, 382, 362];
const MESH_RIGHT_EYE_UPPER = [246, 161, 160, 159, 158, 157, 173];
const MESH_RIGHT_EYE_LOWER = [33, 7, 163, 144, 145, 153, 154, 155, 133];
const MESH_NOSE_BRIDGE = [168, 6, 197, 195];
const MESH_NOSE_BOTTOM = [98, 2, 327];
const MESH_LIPS_UPPER_OUTER = [61, 185, 40, 39, 37, 0, 267, 269, 270, 409, 291];
const MESH_LIPS_LOWER_OUTER = [61, 146, 91, 181, 84, 17, 314, 405, 321, 375, 291];
const MESH_LIPS_UPPER_INNER = [78, 191, 80, 81, 82, 13, 312, 311, 310, 415, 308];
const MESH_LIPS_LOWER_INNER = [78, 95, 88, 178, 87, 14, 317, 402, 318, 324, 308];
const MESH_LEFT_IRIS_CENTER = 473;  // refined landmarks only
const MESH_RIGHT_IRIS_CENTER = 468;
const MESH_LEFT_CHEEK = 425;
const MESH_RIGHT_CHEEK = 205;
const MESH_FOREHEAD = 151;

function evenly(src: number[], n: number): number[] {
  return Array.from({ length: n },
    (_, i) => src[Math.round((i * (src.length - 1)) / (n - 1))]);
}

/** 73 mesh-landmark indices in the normative face point order; -1 entries
 * are iris centers resolved at runtime (fallback: eye-corner average). */
export const FACE_LANDMARK_MAP: number[] = [
  ...evenly(MESH_SILHOUETTE, 19),
  ...evenly(MESH_LEFT_BROW, 5),
  ...evenly(MESH_RIGHT_BROW, 5),
  ...evenly(MESH_LEFT_EYE_UPPER, 4),
  ...evenly(MESH_LEFT_EYE_LOWER, 4),
  ...evenly(MESH_RIGHT_EYE_UPPER, 4),
  ...evenly(MESH_RIGHT_EYE_LOWER, 4),
  MESH_LEFT_IRIS_CENTER,
  MESH_RIGHT_IRIS_CENTER,
  ...MESH_NOSE_BRIDGE,
  ...MESH_NOSE_BOTTOM,
  ...evenly(MESH_LIPS_UPPER_OUTER, 5),
  ...evenly(MESH_LIPS_LOWER_OUTER, 5),
  ...evenly(MESH_LIPS_UPPER_INNER, 3),
  ...evenly(MESH_LIPS_LOWER_INNER, 3),
  MESH_LEFT_CHEEK,
  MESH_RIGHT_CHEEK,
  MESH_FOREHEAD,
];

export interface Landmark {
  x: number;
  y: number;
  visibility?: number;
}

export function mapPoseLandmarks(landmarks: Landmark[]): PoseFrame {
  const keypoints = POSE_LANDMARK_MAP.map((i) => {
    const lm = landmarks[i];
    return { x: lm.x, y: lm.y, confidence: lm.visibility ?? 1 };
  });
  const score = keypoints.reduce((acc, k) => acc + k.confidence, 0) / POSE_COUNT;
  return { keypoints, score };
}

export function mapFaceLandmarks(landmarks: Landmark[], score = 1): FaceFrame {
  const points = FACE_LANDMARK_MAP.map((i): [number, number] => {
    if (i < landmarks.length) return [landmarks[i].x, landmarks[i].y];
    // iris centers absent without refined landmarks: average the eye ring
    const ring = i === MESH_LEFT_IRIS_CENTER ? MESH_LEFT_EYE_UPPER : MESH_RIGHT_EYE_UPPER;
    let sx = 0, sy = 0;
    for (const k of ring) { sx += landmarks[k].x; sy += landmarks[k].y; }
    return [sx / ring.length, sy / ring.length];
  });
  return { points, score };
}

/** Loads MediaPipe Tasks Vision from a CDN and runs pose + face landmarkers
 * per frame. Retries the load on failure (UI shows the notice). */
export class MediaPipeDetector implements Detector {
  private pose: any = null;
  private face: any = null;

  static CDN = "https://cdn.jsdelivr.net/npm/@mediapipe/tasks-vision@0.10.14";

  async init(): Promise<void> {
    const vision = await import(/* @vite-ignore */ `${MediaPipeDetector.CDN}/vision_bundle.mjs`);
    const fileset = await vision.FilesetResolver.forVisionTasks(
      `${MediaPipeDetector.CDN}/wasm`);
    this.pose = await vision.PoseLandmarker.createFromOptions(fileset, {
      baseOptions: {
        modelAssetPath:
          "https://storage.googleapis.com/mediapipe-models/pose_landmarker/pose_landmarker_lite/float16/1/pose_landmarker_lite.task",
      },
      runningMode: "VIDEO",
      numPoses: 1,
    });
    this.face = await vision.FaceLandmarker.createFromOptions(fileset, {
      baseOptions: {
        modelAssetPath:
          "https://storage.googleapis.com/mediapipe-models/face_landmarker/face_landmarker/float16/1/face_landmarker.task",
      },
      runningMode: "VIDEO",
      numFaces: 1,
    });
  }

  async detect(video: HTMLVideoElement, tMs: number): Promise<DetectionResult> {
    const t0 = performance.now();
    const result: DetectionResult = { extractionMs: 0 };
    const poseOut = this.pose?.detectForVideo(video, tMs);
    if (poseOut?.landmarks?.length) {
      result.pose = mapPoseLandmarks(poseOut.landmarks[0].map((lm: any) => ({
        x: lm.x, y: lm.y, visibility: lm.visibility,
      })));
    }
    const faceOut = this.face?.detectForVideo(video, tMs);
    if (faceOut?.faceLandmarks?.length) {
      result.face = mapFaceLandmarks(faceOut.faceLandmarks[0], 1);
    }
    result.extractionMs = performance.now() - t0;
    return result;
  }
}

/** Deterministic camera-free source: the whole pipeline runs without
 * hardware, and tests get reproducible frames. */
export class SyntheticDetector implements Detector {
  constructor(public amplitude = 0.03, public frequencyHz = 0.5) {}

  basePose(): Array<[number, number]> {
    return [
      [0.50, 0.18], [0.53, 0.16], [0.47, 0.16], [0.56, 0.17], [0.44, 0.17],
      [0.60, 0.30], [0.40, 0.30], [0.66, 0.42], [0.34, 0.42], [0.70, 0.54],
      [0.30, 0.54], [0.57, 0.55], [0.43, 0.55], [0.58, 0.72], [0.42, 0.72],
      [0.58, 0.88], [0.42, 0.88],
    ];
  }

  frameAt(tMs: number): KeypointFrame {
    const w = 2 * Math.PI * this.frequencyHz * tMs / 1000;
    const step = 2.399963;
    const keypoints = this.basePose().map(([bx, by], i) => ({
      x: bx + this.amplitude * Math.sin(w + step * i),
      y: by + this.amplitude * Math.cos(w + step * i),
      confidence: 1,
    }));
    const cx = 0.5, cy = 0.2;
    const points = Array.from({ length: FACE_COUNT }, (_, j): [number, number] => [
      cx + 0.08 * Math.cos((2 * Math.PI * j) / FACE_COUNT)
        + this.amplitude * 0.3 * Math.sin(w + step * (POSE_COUNT + j)),
      cy + 0.1 * Math.sin((2 * Math.PI * j) / FACE_COUNT)
        + this.amplitude * 0.3 * Math.cos(w + step * (POSE_COUNT + j)),
    ]);
    return {
      seq: 0, captureTsMs: 0,
      pose: { keypoints, score: 1 },
      face: { points, score: 1 },
    };
  }

  async detect(_video: HTMLVideoElement, tMs: number): Promise<DetectionResult> {
    const t0 = performance.now();
    const frame = this.frameAt(tMs);
    return {
      pose: frame.pose, face: frame.face,
      extractionMs: performance.now() - t0,
    };
  }
}
