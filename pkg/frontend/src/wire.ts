// Binary wire codec, byte-identical to the reference fixtures in
// fixtures/golden/. Layout (all integers big-endian):
//   header(8): version=0x01 | flags | seq u16 | capture_ts u32
//   pose block(104): 17 * (xq,yq,cq u16) + score u16         -> 832 bits
//   face block(296): 73 * (xq,yq u16) + score float32        -> 2368 bits
// Delta frames carry zigzag varints of the 16-bit lattice differences, with
// the face score raw; keyframes reset decoder state.

import {
  FACE_COUNT,
  POSE_COUNT,
  FaceFrame,
  KeypointFrame,
  PoseFrame,
  dequantizeCoord,
  quantizeCoord,
  validateFrame,
} from "./keypoints.js";

export const VERSION = 0x01;
export const FLAG_POSE = 0x01;
export const FLAG_FACE = 0x02;
export const FLAG_DELTA = 0x04;
const RESERVED_MASK = 0xf8;

export const HEADER_LEN = 8;
export const POSE_BLOCK_LEN = 104;
export const FACE_BLOCK_LEN = 296;
export const FULL_PAYLOAD_LEN = 400;
export const MAX_FRAME_LEN = 408;

const POSE_VALUES = POSE_COUNT * 3 + 1; // 52
const FACE_VALUES = FACE_COUNT * 2;     // 146
const MAX_ZIGZAG = 2 * 65535;

export class WireError extends Error {}
export class VersionError extends WireError {}
export class FlagsError extends WireError {}
export class LengthError extends WireError {}
export class PayloadError extends WireError {}
export class DeltaCorruptionError extends WireError {}
export class PresenceMismatchError extends WireError {}

export interface FrameHeader {
  version: number;
  flags: number;
  seq: number;
  captureTsMs: number;
}

export interface QuantizedFrame {
  pose?: { points: Array<[number, number, number]>; scoreQ: number };
  face?: { points: Array<[number, number]>; score: number };
}

const F32 = new DataView(new ArrayBuffer(4));

function f32(v: number): number {
  F32.setFloat32(0, v);
  return F32.getFloat32(0);
}

export function quantizeFrame(frame: KeypointFrame): QuantizedFrame {
  const out: QuantizedFrame = {};
  if (frame.pose) {
    out.pose = {
      points: frame.pose.keypoints.map((k) =>
        [quantizeCoord(k.x), quantizeCoord(k.y), quantizeCoord(k.confidence)]),
      scoreQ: quantizeCoord(frame.pose.score),
    };
  }
  if (frame.face) {
    out.face = {
      points: frame.face.points.map(([x, y]) => [quantizeCoord(x), quantizeCoord(y)]),
      score: f32(frame.face.score),
    };
  }
  return out;
}

export function dequantizeFrame(qf: QuantizedFrame, seq: number,
                                captureTsMs: number): KeypointFrame {
  const frame: KeypointFrame = { seq, captureTsMs };
  if (qf.pose) {
    frame.pose = {
      keypoints: qf.pose.points.map(([x, y, c]) => ({
        x: dequantizeCoord(x), y: dequantizeCoord(y), confidence: dequantizeCoord(c),
      })),
      score: dequantizeCoord(qf.pose.scoreQ),
    };
  }
  if (qf.face) {
    frame.face = {
      points: qf.face.points.map(([x, y]) =>
        [dequantizeCoord(x), dequantizeCoord(y)] as [number, number]),
      score: qf.face.score,
    };
  }
  return frame;
}

export function encodePose(pose: PoseFrame): Uint8Array {
  if (pose.keypoints.length !== POSE_COUNT) {
    throw new LengthError(`pose.keypoints: expected ${POSE_COUNT}`);
  }
  const out = new DataView(new ArrayBuffer(POSE_BLOCK_LEN));
  let off = 0;
  for (const kp of pose.keypoints) {
    out.setUint16(off, quantizeCoord(kp.x)); off += 2;
    out.setUint16(off, quantizeCoord(kp.y)); off += 2;
    out.setUint16(off, quantizeCoord(kp.confidence)); off += 2;
  }
  out.setUint16(off, quantizeCoord(pose.score));
  return new Uint8Array(out.buffer);
}

export function encodeFace(face: FaceFrame): Uint8Array {
  if (face.points.length !== FACE_COUNT) {
    throw new LengthError(`face.points: expected ${FACE_COUNT}`);
  }
  const out = new DataView(new ArrayBuffer(FACE_BLOCK_LEN));
  let off = 0;
  for (const [x, y] of face.points) {
    out.setUint16(off, quantizeCoord(x)); off += 2;
    out.setUint16(off, quantizeCoord(y)); off += 2;
  }
  out.setFloat32(off, face.score);
  return new Uint8Array(out.buffer);
}

function header(flags: number, seq: number, captureTsMs: number): Uint8Array {
  const out = new DataView(new ArrayBuffer(HEADER_LEN));
  out.setUint8(0, VERSION);
  out.setUint8(1, flags);
  out.setUint16(2, seq & 0xffff);
  out.setUint32(4, captureTsMs >>> 0);
  return new Uint8Array(out.buffer);
}

function concat(parts: Uint8Array[]): Uint8Array {
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let off = 0;
  for (const p of parts) {
    out.set(p, off);
    off += p.length;
  }
  return out;
}

export function encodeFrame(frame: KeypointFrame): Uint8Array {
  const v = validateFrame(frame);
  let flags = 0;
  const parts: Uint8Array[] = [];
  if (v.pose) { flags |= FLAG_POSE; parts.push(encodePose(v.pose)); }
  if (v.face) { flags |= FLAG_FACE; parts.push(encodeFace(v.face)); }
  return concat([header(flags, v.seq, v.captureTsMs), ...parts]);
}

export function decodeHeader(data: Uint8Array): FrameHeader {
  if (data.length < HEADER_LEN) {
    throw new LengthError(`frame shorter than ${HEADER_LEN}-byte header: ${data.length}`);
  }
  const dv = new DataView(data.buffer, data.byteOffset, data.byteLength);
  const version = dv.getUint8(0);
  const flags = dv.getUint8(1);
  if (version !== VERSION) throw new VersionError(`unsupported version 0x${version.toString(16)}`);
  if (flags & RESERVED_MASK) throw new FlagsError(`reserved flag bits set: ${flags.toString(2)}`);
  if (!(flags & (FLAG_POSE | FLAG_FACE))) throw new FlagsError("neither pose nor face present");
  return { version, flags, seq: dv.getUint16(2), captureTsMs: dv.getUint32(4) };
}

function expectedLength(flags: number): number {
  let n = HEADER_LEN;
  if (flags & FLAG_POSE) n += POSE_BLOCK_LEN;
  if (flags & FLAG_FACE) n += FACE_BLOCK_LEN;
  return n;
}

function checkScore(score: number): number {
  if (!Number.isFinite(score)) throw new PayloadError("face score is not finite");
  return score < 0 ? 0 : score > 1 ? 1 : score;
}

function decodeQuantized(data: Uint8Array, prev: QuantizedFrame | null):
    { header: FrameHeader; qf: QuantizedFrame } {
  const head = decodeHeader(data);
  if (head.flags & FLAG_DELTA) {
    if (!prev) throw new DeltaCorruptionError("delta frame without a reference keyframe");
    return { header: head, qf: deltaDecodeChecked(prev, data.subarray(HEADER_LEN), head.flags) };
  }
  const expected = expectedLength(head.flags);
  if (data.length !== expected) {
    throw new LengthError(
      `length ${data.length} does not match flags (expected ${expected})`);
  }
  const dv = new DataView(data.buffer, data.byteOffset, data.byteLength);
  let off = HEADER_LEN;
  const qf: QuantizedFrame = {};
  if (head.flags & FLAG_POSE) {
    const points: Array<[number, number, number]> = [];
    for (let i = 0; i < POSE_COUNT; i++) {
      points.push([dv.getUint16(off), dv.getUint16(off + 2), dv.getUint16(off + 4)]);
      off += 6;
    }
    qf.pose = { points, scoreQ: dv.getUint16(off) };
    off += 2;
  }
  if (head.flags & FLAG_FACE) {
    const points: Array<[number, number]> = [];
    for (let j = 0; j < FACE_COUNT; j++) {
      points.push([dv.getUint16(off), dv.getUint16(off + 2)]);
      off += 4;
    }
    qf.face = { points, score: checkScore(dv.getFloat32(off)) };
  }
  return { header: head, qf };
}

export function decodeFrame(data: Uint8Array, prev: QuantizedFrame | null = null):
    { header: FrameHeader; frame: KeypointFrame } {
  const { header: head, qf } = decodeQuantized(data, prev);
  return { header: head, frame: dequantizeFrame(qf, head.seq, head.captureTsMs) };
}

// --- delta mode --------------------------------------------------------------

function zigzag(d: number): number {
  return d >= 0 ? 2 * d : -2 * d - 1;
}

function unzigzag(z: number): number {
  return (z & 1) === 0 ? z >>> 1 : -((z + 1) >>> 1);
}

function flatten(qf: QuantizedFrame): { pose: number[]; face: number[] } {
  const pose: number[] = [];
  if (qf.pose) {
    for (const [x, y, c] of qf.pose.points) pose.push(x, y, c);
    pose.push(qf.pose.scoreQ);
  }
  const face: number[] = [];
  if (qf.face) {
    for (const [x, y] of qf.face.points) face.push(x, y);
  }
  return { pose, face };
}

export function deltaEncode(prev: QuantizedFrame, cur: QuantizedFrame): Uint8Array {
  if (!!prev.pose !== !!cur.pose || !!prev.face !== !!cur.face) {
    throw new PresenceMismatchError(
      "pose/face presence changed between frames; emit a keyframe");
  }
  const p = flatten(prev);
  const c = flatten(cur);
  const out: number[] = [];
  const emit = (v: number) => {
    while (v >= 0x80) {
      out.push((v & 0x7f) | 0x80);
      v >>>= 7;
    }
    out.push(v);
  };
  for (let i = 0; i < p.pose.length; i++) emit(zigzag(c.pose[i] - p.pose[i]));
  for (let i = 0; i < p.face.length; i++) emit(zigzag(c.face[i] - p.face[i]));
  const bytes = new Uint8Array(out.length + (cur.face ? 4 : 0));
  bytes.set(out);
  if (cur.face) {
    new DataView(bytes.buffer).setFloat32(out.length, cur.face.score);
  }
  return bytes;
}

function readVarint(data: Uint8Array, pos: number): [number, number] {
  let result = 0;
  for (const shift of [0, 7, 14]) {
    if (pos >= data.length) throw new DeltaCorruptionError("truncated varint");
    const b = data[pos++];
    result |= (b & 0x7f) << shift;
    if (!(b & 0x80)) return [result, pos];
  }
  throw new DeltaCorruptionError("varint exceeds 3 bytes for a 16-bit value");
}

export function deltaDecodeChecked(prev: QuantizedFrame, payload: Uint8Array,
                                   flags: number): QuantizedFrame {
  const wantPose = !!(flags & FLAG_POSE);
  const wantFace = !!(flags & FLAG_FACE);
  if (wantPose !== !!prev.pose || wantFace !== !!prev.face) {
    throw new PresenceMismatchError(
      "delta flags do not match reference frame presence; keyframe required");
  }
  const base = flatten(prev);
  let pos = 0;
  const decodeValues = (prevVals: number[]): number[] => {
    const vals: number[] = [];
    for (const pv of prevVals) {
      const [z, next] = readVarint(payload, pos);
      pos = next;
      if (z > MAX_ZIGZAG) {
        throw new DeltaCorruptionError(`zigzag value ${z} exceeds 16-bit delta range`);
      }
      const v = pv + unzigzag(z);
      if (v < 0 || v > 65535) {
        throw new DeltaCorruptionError(`reconstructed value ${v} off the 16-bit lattice`);
      }
      vals.push(v);
    }
    return vals;
  };
  const qf: QuantizedFrame = {};
  if (wantPose) {
    const vals = decodeValues(base.pose);
    const points: Array<[number, number, number]> = [];
    for (let i = 0; i < POSE_VALUES - 1; i += 3) {
      points.push([vals[i], vals[i + 1], vals[i + 2]]);
    }
    qf.pose = { points, scoreQ: vals[POSE_VALUES - 1] };
  }
  if (wantFace) {
    const vals = decodeValues(base.face);
    if (pos + 4 > payload.length) throw new DeltaCorruptionError("truncated face score");
    const score = checkScore(
      new DataView(payload.buffer, payload.byteOffset, payload.byteLength).getFloat32(pos));
    pos += 4;
    const points: Array<[number, number]> = [];
    for (let i = 0; i < FACE_VALUES; i += 2) points.push([vals[i], vals[i + 1]]);
    qf.face = { points, score };
  }
  if (pos !== payload.length) {
    throw new LengthError(`${payload.length - pos} trailing bytes after delta payload`);
  }
  return qf;
}

export function deltaDecode(prev: QuantizedFrame, payload: Uint8Array): QuantizedFrame {
  const flags = (prev.pose ? FLAG_POSE : 0) | (prev.face ? FLAG_FACE : 0);
  return deltaDecodeChecked(prev, payload, flags);
}

function presence(qf: QuantizedFrame): string {
  return `${qf.pose ? 1 : 0}${qf.face ? 1 : 0}`;
}

/** Per-stream encoder: keyframe every `keyframeInterval` frames in delta
 * mode, and whenever block presence changes. */
export class StreamEncoder {
  private prev: QuantizedFrame | null = null;
  private sinceKey = 0;

  constructor(public delta = false, public keyframeInterval = 30) {
    if (keyframeInterval < 1) throw new RangeError("keyframeInterval must be >= 1");
  }

  encode(frame: KeypointFrame): Uint8Array {
    if (!this.delta) return encodeFrame(frame);
    const v = validateFrame(frame);
    const qf = quantizeFrame(v);
    const needKey = !this.prev
      || this.sinceKey >= this.keyframeInterval
      || presence(qf) !== presence(this.prev);
    let data: Uint8Array;
    if (needKey) {
      data = encodeFrame(v);
      this.sinceKey = 1;
    } else {
      let flags = FLAG_DELTA;
      if (qf.pose) flags |= FLAG_POSE;
      if (qf.face) flags |= FLAG_FACE;
      data = concat([header(flags, v.seq, v.captureTsMs),
                     deltaEncode(this.prev!, qf)]);
      this.sinceKey += 1;
    }
    this.prev = qf;
    return data;
  }
}

/** Per-stream decoder holding the last reconstructed lattice frame. */
export class StreamDecoder {
  private prev: QuantizedFrame | null = null;

  decode(data: Uint8Array): { header: FrameHeader; frame: KeypointFrame } {
    const { header: head, qf } = decodeQuantized(data, this.prev);
    this.prev = qf;
    return { header: head, frame: dequantizeFrame(qf, head.seq, head.captureTsMs) };
  }
}
