// Live stats panel model: sliding-window bitrate plus latency rows, the
// in-call counterpart of the offline report (median and p10-p90 per row).

export interface StatRow {
  median: number;
  p10: number;
  p90: number;
  n: number;
}

function percentile(sorted: number[], q: number): number {
  if (!sorted.length) return NaN;
  const pos = (sorted.length - 1) * q;
  const lo = Math.floor(pos);
  const hi = Math.ceil(pos);
  if (lo === hi) return sorted[lo];
  return sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo);
}

export function statRow(samples: number[]): StatRow | null {
  if (!samples.length) return null;
  const sorted = [...samples].sort((a, b) => a - b);
  return {
    median: percentile(sorted, 0.5),
    p10: percentile(sorted, 0.1),
    p90: percentile(sorted, 0.9),
    n: samples.length,
  };
}

/** Keeps (t, value) samples inside a sliding time window. */
export class WindowedSeries {
  private samples: Array<[number, number]> = [];

  constructor(public windowMs = 2000) {}

  push(tMs: number, value: number): void {
    this.samples.push([tMs, value]);
    this.evict(tMs);
  }

  private evict(nowMs: number): void {
    // half-open window (now - W, now]
    const cutoff = nowMs - this.windowMs;
    let drop = 0;
    while (drop < this.samples.length && this.samples[drop][0] <= cutoff) drop++;
    if (drop) this.samples.splice(0, drop);
  }

  values(nowMs: number): number[] {
    this.evict(nowMs);
    return this.samples.map(([, v]) => v);
  }

  sum(nowMs: number): number {
    this.evict(nowMs);
    return this.samples.reduce((acc, [, v]) => acc + v, 0);
  }

  get count(): number {
    return this.samples.length;
  }
}

/** One-way live statistics for the panel: bitrate, fps, latency rows. */
export class StatsPanelModel {
  readonly bytes: WindowedSeries;
  readonly extraction: WindowedSeries;
  readonly transmission: WindowedSeries;
  readonly render: WindowedSeries;
  readonly net: WindowedSeries;

  constructor(public windowMs = 2000) {
    this.bytes = new WindowedSeries(windowMs);
    this.extraction = new WindowedSeries(windowMs);
    this.transmission = new WindowedSeries(windowMs);
    this.render = new WindowedSeries(windowMs);
    this.net = new WindowedSeries(windowMs);
  }

  onFrameReceived(nowMs: number, wireBytes: number): void {
    this.bytes.push(nowMs, wireBytes);
  }

  bitrateBps(nowMs: number): number {
    return (this.bytes.sum(nowMs) * 8) / (this.windowMs / 1000);
  }

  recvFps(nowMs: number): number {
    this.bytes.values(nowMs);
    return this.bytes.count / (this.windowMs / 1000);
  }

  rows(nowMs: number): Record<string, StatRow | null> {
    return {
      "Net latency": statRow(this.net.values(nowMs)),
      "Extraction latency": statRow(this.extraction.values(nowMs)),
      "Transmission latency": statRow(this.transmission.values(nowMs)),
      "Render latency": statRow(this.render.values(nowMs)),
    };
  }
}

/**
 * Single-slot mailbox between the network and the render loop: rendering
 * always takes the freshest frame and slow rendering drops frames instead
 * of queueing them, so playback can never stall capture or receive.
 */
export class LatestBox<T> {
  private item: T | null = null;
  dropped = 0;

  put(item: T): void {
    if (this.item !== null) this.dropped++;
    this.item = item;
  }

  take(): T | null {
    const item = this.item;
    this.item = null;
    return item;
  }
}
