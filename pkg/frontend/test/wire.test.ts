// Encoder conformance: client-encoded frames must be byte-identical to the
// reference golden vectors committed under fixtures/golden/.

import { readFileSync } from "node:fs";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { KeypointFrame } from "../src/keypoints.js";
import {
  DeltaCorruptionError,
  FACE_BLOCK_LEN,
  FULL_PAYLOAD_LEN,
  HEADER_LEN,
  POSE_BLOCK_LEN,
  PresenceMismatchError,
  StreamDecoder,
  StreamEncoder,
  WireError,
  decodeFrame,
  deltaDecode,
  deltaEncode,
  encodeFace,
  encodeFrame,
  encodePose,
  quantizeFrame,
} from "../src/wire.js";

const GOLDEN = join(__dirname, "..", "..", "fixtures", "golden");
const manifest = JSON.parse(readFileSync(join(GOLDEN, "manifest.json"), "utf-8"));

function frameFromJson(doc: any): KeypointFrame {
  const frame: KeypointFrame = { seq: doc.seq, captureTsMs: doc.capture_ts_ms };
  if (doc.pose) {
    frame.pose = {
      keypoints: doc.pose.keypoints.map(([x, y, c]: number[]) =>
        ({ x, y, confidence: c })),
      score: doc.pose.score,
    };
  }
  if (doc.face) {
    frame.face = {
      points: doc.face.points.map(([x, y]: number[]) => [x, y]),
      score: doc.face.score,
    };
  }
  return frame;
}

function golden(name: string): Uint8Array {
  return new Uint8Array(readFileSync(join(GOLDEN, name)));
}

describe("golden vector conformance", () => {
  for (const name of ["full_frame", "pose_only", "face_only"]) {
    it(`encodes ${name} byte-identically`, () => {
      const entry = manifest[name];
      const data = encodeFrame(frameFromJson(entry.frame));
      expect(data.length).toBe(entry.bytes);
      expect(Buffer.from(data).equals(Buffer.from(golden(entry.file)))).toBe(true);
    });
  }

  it("encodes the delta pair byte-identically", () => {
    const entry = manifest.delta_pair;
    const enc = new StreamEncoder(true, 1000);
    const key = enc.encode(frameFromJson(entry.prev));
    const delta = enc.encode(frameFromJson(entry.cur));
    expect(Buffer.from(key).equals(Buffer.from(golden(entry.keyframe_file)))).toBe(true);
    expect(Buffer.from(delta).equals(Buffer.from(golden(entry.delta_file)))).toBe(true);
    expect(delta.length).toBe(entry.delta_bytes);
  });

  it("decodes the golden files back onto the same lattice", () => {
    for (const name of ["full_frame", "pose_only", "face_only"]) {
      const entry = manifest[name];
      const { header, frame } = decodeFrame(golden(entry.file));
      expect(header.seq).toBe(entry.frame.seq);
      expect(quantizeFrame(frame)).toEqual(quantizeFrame(frameFromJson(entry.frame)));
    }
  });

  it("stream-decodes the golden delta chain", () => {
    const entry = manifest.delta_pair;
    const dec = new StreamDecoder();
    dec.decode(golden(entry.keyframe_file));
    const { frame } = dec.decode(golden(entry.delta_file));
    expect(quantizeFrame(frame)).toEqual(quantizeFrame(frameFromJson(entry.cur)));
  });
});

function randomFrame(rng: () => number, seq: number): KeypointFrame {
  return {
    seq,
    captureTsMs: Math.floor(rng() * 2 ** 32),
    pose: {
      keypoints: Array.from({ length: 17 }, () =>
        ({ x: rng(), y: rng(), confidence: rng() })),
      score: rng(),
    },
    face: {
      points: Array.from({ length: 73 }, () => [rng(), rng()] as [number, number]),
      score: rng(),
    },
  };
}

function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0; a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

describe("wire sizes and roundtrips", () => {
  const rng = mulberry32(12345);

  it("pins the block sizes", () => {
    expect(POSE_BLOCK_LEN).toBe(104);
    expect(FACE_BLOCK_LEN).toBe(296);
    expect(FULL_PAYLOAD_LEN).toBe(400);
    const frame = randomFrame(rng, 0);
    expect(encodePose(frame.pose!).length).toBe(104);
    expect(encodeFace(frame.face!).length).toBe(296);
    expect(encodeFrame(frame).length).toBe(408);
  });

  it("roundtrips random frames on the quantized lattice", () => {
    for (let k = 0; k < 50; k++) {
      const frame = randomFrame(rng, k);
      const { frame: out } = decodeFrame(encodeFrame(frame));
      expect(quantizeFrame(out)).toEqual(quantizeFrame(frame));
    }
  });

  it("delta roundtrips are lossless", () => {
    for (let k = 0; k < 50; k++) {
      const prev = quantizeFrame(randomFrame(rng, k));
      const cur = quantizeFrame(randomFrame(rng, k + 1000));
      expect(deltaDecode(prev, deltaEncode(prev, cur))).toEqual(cur);
    }
  });

  it("static delta payload is 202 bytes", () => {
    const qf = quantizeFrame(randomFrame(rng, 7));
    const payload = deltaEncode(qf, qf);
    expect(payload.length).toBe(202);
    expect(payload.subarray(0, 198).every((b) => b === 0)).toBe(true);
  });

  it("presence change demands a keyframe", () => {
    const both = quantizeFrame(randomFrame(rng, 1));
    const poseOnly = { pose: both.pose };
    expect(() => deltaEncode(both, poseOnly)).toThrow(PresenceMismatchError);
  });

  it("decoder is total over garbage", () => {
    for (let k = 0; k < 2000; k++) {
      const len = Math.floor(rng() * 500);
      const junk = new Uint8Array(len);
      for (let i = 0; i < len; i++) junk[i] = Math.floor(rng() * 256);
      try {
        decodeFrame(junk);
      } catch (err) {
        expect(err).toBeInstanceOf(WireError);
      }
    }
  });

  it("rejects overlong varints", () => {
    const prev = quantizeFrame(randomFrame(rng, 3));
    const poseOnly = { pose: prev.pose };
    const bad = new Uint8Array(55);
    bad.set([0x80, 0x80, 0x80, 0x01]);
    expect(() => deltaDecode(poseOnly, bad)).toThrow(DeltaCorruptionError);
  });

  it("keyframe cadence matches the configured interval", () => {
    const enc = new StreamEncoder(true, 4);
    const kinds: string[] = [];
    for (let k = 0; k < 10; k++) {
      const data = enc.encode(randomFrame(rng, k));
      kinds.push((data[1] & 0x04) === 0 ? "K" : "d");
    }
    expect(kinds.join("")).toBe("KdddKdddKd");
  });

  it("header layout is big-endian", () => {
    const frame = randomFrame(rng, 0x0102);
    frame.captureTsMs = 0x0a0b0c0d;
    const data = encodeFrame(frame);
    expect(data[0]).toBe(0x01);
    expect(data[1]).toBe(0x03);
    expect([data[2], data[3]]).toEqual([0x01, 0x02]);
    expect([...data.subarray(4, 8)]).toEqual([0x0a, 0x0b, 0x0c, 0x0d]);
    expect(HEADER_LEN).toBe(8);
  });
});
