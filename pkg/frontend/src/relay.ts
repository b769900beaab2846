// Relay client: RFC 6455 WebSocket, JSON control messages with fields exactly
// {type, room, peer, ts_ms, peers?, error?}, binary data frames wrapped in a
// 1-byte sender-id envelope. Matches docs/FORMATS.md.

export interface ControlMessage {
  type: string;
  room: string;
  peer: string;
  ts_ms: number;
  peers?: string[];
  error?: string;
}

export function packData(peer: string, payload: Uint8Array): Uint8Array<ArrayBuffer> {
  const id = new TextEncoder().encode(peer);
  if (id.length > 255) throw new RangeError("peer id longer than 255 bytes");
  const out = new Uint8Array(1 + id.length + payload.length);
  out[0] = id.length;
  out.set(id, 1);
  out.set(payload, 1 + id.length);
  return out;
}

export function unpackData(data: Uint8Array): { sender: string; payload: Uint8Array } {
  if (!data.length) throw new RangeError("empty data frame");
  const n = data[0];
  if (data.length < 1 + n) throw new RangeError("truncated data envelope");
  return {
    sender: new TextDecoder().decode(data.subarray(1, 1 + n)),
    payload: data.subarray(1 + n),
  };
}

export function seqNewer(a: number, b: number): boolean {
  const d = (a - b) & 0xffff;
  return d > 0 && d < 32768;
}

export interface RelayEvents {
  onPeers?: (peers: Set<string>) => void;
  onFrame?: (sender: string, payload: Uint8Array, recvMs: number) => void;
  onClose?: () => void;
  onError?: (text: string) => void;
}

export class RelayClient {
  ws: WebSocket | null = null;
  peers = new Set<string>();
  droppedStale = 0;
  clockOffsetMs = 0;
  private lastSeq = new Map<string, number>();
  private pendingPongs: Array<(pong: { serverTs: number; tRecv: number }) => void> = [];

  constructor(public url: string, public room: string, public peerId: string,
              public events: RelayEvents = {}) {}

  now(): number {
    return performance.now();
  }

  /** Local clock corrected onto the server timebase. */
  correctedNow(): number {
    return this.now() + this.clockOffsetMs;
  }

  connect(): Promise<void> {
    return new Promise((resolve, reject) => {
      const ws = new WebSocket(this.url);
      ws.binaryType = "arraybuffer";
      this.ws = ws;
      let joined = false;
      ws.onopen = () => {
        this.sendControl("join");
      };
      ws.onmessage = (ev) => {
        if (typeof ev.data === "string") {
          const msg = JSON.parse(ev.data) as ControlMessage;
          if (msg.type === "joined" && !joined) {
            joined = true;
            resolve();
          } else if (msg.type === "error" && !joined) {
            reject(new Error(msg.error ?? "join rejected"));
          } else {
            this.handleControl(msg);
          }
          return;
        }
        this.handleData(new Uint8Array(ev.data as ArrayBuffer));
      };
      ws.onerror = () => {
        if (!joined) reject(new Error(`cannot reach relay at ${this.url}`));
      };
      ws.onclose = () => this.events.onClose?.();
    });
  }

  private handleControl(msg: ControlMessage): void {
    if (msg.type === "peer-list") {
      this.peers = new Set((msg.peers ?? []).filter((p) => p !== this.peerId));
      this.events.onPeers?.(this.peers);
    } else if (msg.type === "pong") {
      const waiter = this.pendingPongs.shift();
      waiter?.({ serverTs: msg.ts_ms, tRecv: this.now() });
    } else if (msg.type === "error") {
      this.events.onError?.(msg.error ?? "unknown relay error");
    }
  }

  private handleData(data: Uint8Array): void {
    let sender: string, payload: Uint8Array;
    try {
      ({ sender, payload } = unpackData(data));
    } catch {
      return;
    }
    if (payload.length >= 4) {
      const seq = (payload[2] << 8) | payload[3];
      const last = this.lastSeq.get(sender);
      if (last !== undefined && !seqNewer(seq, last)) {
        this.droppedStale++;
        return;
      }
      this.lastSeq.set(sender, seq);
    }
    this.events.onFrame?.(sender, payload, this.now());
  }

  private sendControl(type: string): void {
    this.ws?.send(JSON.stringify(
      { type, room: this.room, peer: this.peerId, ts_ms: this.now() }));
  }

  sendFrame(payload: Uint8Array): void {
    if (this.ws?.readyState === WebSocket.OPEN) {
      this.ws.send(packData(this.peerId, payload));
    }
  }

  /** Median of remote_ts - (t_send + t_recv)/2 over n pings (FIFO-matched;
   * assumes symmetric path delay). */
  async estimateClockOffset(nPings = 10, timeoutMs = 1000): Promise<number> {
    const offsets: number[] = [];
    for (let i = 0; i < nPings; i++) {
      const tSend = this.now();
      const pong = await new Promise<{ serverTs: number; tRecv: number } | null>(
        (res) => {
          const timer = setTimeout(() => res(null), timeoutMs);
          this.pendingPongs.push((p) => {
            clearTimeout(timer);
            res(p);
          });
          this.sendControl("ping");
        });
      if (pong) offsets.push(pong.serverTs - (tSend + pong.tRecv) / 2);
    }
    if (!offsets.length) throw new Error(`no pong responses to ${nPings} pings`);
    offsets.sort((a, b) => a - b);
    const mid = offsets.length >> 1;
    this.clockOffsetMs = offsets.length % 2
      ? offsets[mid] : (offsets[mid - 1] + offsets[mid]) / 2;
    return this.clockOffsetMs;
  }

  close(): void {
    this.sendControl("leave");
    this.ws?.close();
  }
}
