// The rig must satisfy the same documented properties the reference
// implementation is tested against: bind-pose identity, translation
// equivariance, single-bone rotation equivariance, partition of unity.

import { readFileSync } from "node:fs";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { KeypointFrame, POSE_INDEX } from "../src/keypoints.js";
import {
  PuppetError,
  animate,
  applyTransform,
  bindFrame,
  bindPuppet,
  boneTransform,
  newGate,
  parsePuppet,
  toNormalized,
} from "../src/rig.js";

const FIXTURES = join(__dirname, "..", "..", "fixtures");

function minimalSpec(): any {
  const kp: Record<string, [number, number]> = {};
  const names = [
    "nose", "leftEye", "rightEye", "leftEar", "rightEar", "leftShoulder",
    "rightShoulder", "leftElbow", "rightElbow", "leftWrist", "rightWrist",
    "leftHip", "rightHip", "leftKnee", "rightKnee", "leftAnkle", "rightAnkle",
  ];
  names.forEach((n, i) => { kp[n] = [100 + 10 * i, 50 + 5 * i]; });
  kp.leftShoulder = [100, 100];
  kp.rightShoulder = [200, 100];
  kp.leftElbow = [100, 200];
  return {
    name: "mini",
    vertices: [[100, 100], [150, 100], [200, 100], [100, 150], [100, 200]],
    paths: [{ points: [0, 1, 2] }, { points: [0, 3, 4] }],
    bones: [
      { name: "bar", from: "leftShoulder", to: "rightShoulder", source: "pose" },
      { name: "arm", from: "leftShoulder", to: "leftElbow", source: "pose" },
    ],
    bind_keypoints: { pose: kp },
  };
}

describe("puppet parsing", () => {
  it("loads the shipped fixtures", () => {
    const stick = parsePuppet(JSON.parse(
      readFileSync(join(FIXTURES, "stick_figure.json"), "utf-8")));
    expect(stick.bones.length).toBe(13);
    expect(stick.bindPose).not.toBeNull();
    const mask = parsePuppet(JSON.parse(
      readFileSync(join(FIXTURES, "face_mask.json"), "utf-8")));
    expect(mask.bindFace?.length).toBe(73);
  });

  it("rejects unknown keypoints", () => {
    const doc = minimalSpec();
    doc.bones[0].to = "leftToe";
    expect(() => parsePuppet(doc)).toThrow(/unknown keypoint 'leftToe'/);
  });

  it("rejects zero-length bind bones", () => {
    const doc = minimalSpec();
    doc.bind_keypoints.pose.rightShoulder = doc.bind_keypoints.pose.leftShoulder;
    expect(() => parsePuppet(doc)).toThrow(/zero-length bind bone/);
  });

  it("rejects dangling vertex indices", () => {
    const doc = minimalSpec();
    doc.paths[0].points = [0, 99];
    expect(() => parsePuppet(doc)).toThrow(/dangling vertex index 99/);
  });

  it("requires the full bind table", () => {
    const doc = minimalSpec();
    delete doc.bind_keypoints.pose.nose;
    expect(() => parsePuppet(doc)).toThrow(PuppetError);
  });
});

describe("bone transforms", () => {
  it("identity", () => {
    const t = boneTransform([0, 0], [1, 0], [0, 0], [1, 0]);
    expect(t.ax).toBeCloseTo(1, 12);
    expect(t.ay).toBeCloseTo(0, 12);
    expect([t.bx, t.by]).toEqual([0, 0]);
  });

  it("pure translation", () => {
    const t = boneTransform([0, 0], [1, 0], [3, 4], [4, 4]);
    expect(applyTransform(t, 0.5, 0)).toEqual([3.5, 4]);
  });

  it("rotate 90 scale 2", () => {
    const t = boneTransform([0, 0], [1, 0], [0, 0], [0, 2]);
    expect(Math.hypot(t.ax, t.ay)).toBeCloseTo(2, 12);
    expect(Math.atan2(t.ay, t.ax)).toBeCloseTo(Math.PI / 2, 12);
  });

  it("maps endpoints exactly", () => {
    const t = boneTransform([1, 2], [3, 5], [10, -4], [7, 0]);
    const [ax, ay] = applyTransform(t, 1, 2);
    expect(ax).toBeCloseTo(10, 9);
    expect(ay).toBeCloseTo(-4, 9);
  });

  it("floors degenerate current segments", () => {
    const t = boneTransform([0, 0], [1, 0], [5, 5], [5, 5]);
    expect(t.degenerate).toBe(true);
    expect(Math.hypot(t.ax, t.ay)).toBeCloseTo(1e-6, 12);
  });
});

describe("skinning properties", () => {
  const spec = parsePuppet(minimalSpec());
  const puppet = bindPuppet(spec);

  it("weights sum to one", () => {
    for (let i = 0; i < spec.vertices.length; i++) {
      let sum = 0;
      for (let k = 0; k < 4; k++) sum += puppet.weights[i * 4 + k];
      expect(sum).toBeCloseTo(1, 9);
    }
  });

  it("bind pose reproduces the artwork", () => {
    const geometry = animate(puppet, bindFrame(spec), newGate());
    for (let i = 0; i < spec.vertices.length; i++) {
      expect(geometry.vertices[i * 2]).toBeCloseTo(spec.vertices[i][0], 6);
      expect(geometry.vertices[i * 2 + 1]).toBeCloseTo(spec.vertices[i][1], 6);
    }
  });

  it("translation equivariance", () => {
    const base = bindFrame(spec);
    const d = 0.04;
    const shifted: KeypointFrame = {
      seq: 0, captureTsMs: 0,
      pose: {
        keypoints: base.pose!.keypoints.map((k) =>
          ({ x: k.x + d, y: k.y + d, confidence: 1 })),
        score: 1,
      },
    };
    const a = animate(puppet, base, newGate()).vertices;
    const b = animate(puppet, shifted, newGate()).vertices;
    const shift = d * spec.viewport.scale;
    for (let i = 0; i < a.length; i++) {
      expect(Math.abs(b[i] - (a[i] + shift))).toBeLessThanOrEqual(1e-9);
    }
  });

  it("single-bone rotation equivariance", () => {
    const doc = minimalSpec();
    doc.bones = [doc.bones[0]]; // bar only
    const one = parsePuppet(doc);
    const bone = bindPuppet(one);
    const theta = Math.PI / 2;
    const pivot = [100, 100];
    const rotate = (p: number[]): [number, number] => [
      pivot[0] + (p[0] - pivot[0]) * Math.cos(theta) - (p[1] - pivot[1]) * Math.sin(theta),
      pivot[1] + (p[0] - pivot[0]) * Math.sin(theta) + (p[1] - pivot[1]) * Math.cos(theta),
    ];
    const base = bindFrame(one);
    const kps = base.pose!.keypoints.map((k) => ({ ...k }));
    for (const name of ["leftShoulder", "rightShoulder"] as const) {
      const i = POSE_INDEX.get(name)!;
      const [nx, ny] = toNormalized(one.viewport,
        ...rotate(one.bindPose![i]));
      kps[i] = { x: nx, y: ny, confidence: 1 };
    }
    const got = animate(bone, { seq: 0, captureTsMs: 0,
      pose: { keypoints: kps, score: 1 } }, newGate()).vertices;
    one.vertices.forEach((v, i) => {
      const [wx, wy] = rotate(v);
      expect(got[i * 2]).toBeCloseTo(wx, 9);
      expect(got[i * 2 + 1]).toBeCloseTo(wy, 9);
    });
  });

  it("low-confidence keypoints freeze", () => {
    const gate = newGate();
    const base = bindFrame(spec);
    animate(puppet, base, gate);
    const moved: KeypointFrame = {
      seq: 1, captureTsMs: 0,
      pose: {
        keypoints: base.pose!.keypoints.map((k, i) =>
          i === POSE_INDEX.get("leftElbow")!
            ? { x: 0.9, y: 0.1, confidence: 0.05 } : { ...k }),
        score: 1,
      },
    };
    const out = animate(puppet, moved, gate).vertices;
    const ref = animate(puppet, base, newGate()).vertices;
    for (let i = 0; i < out.length; i++) {
      expect(out[i]).toBeCloseTo(ref[i], 9);
    }
  });
});
