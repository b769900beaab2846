// App wiring: webcam capture (left panel) -> wire encoder -> relay;
// relay -> decoder -> puppet canvas (right panel) + live stats.
//
// Capture and render are independent scheduled loops. Incoming frames land
// in a single-slot mailbox, so a slow render drops frames instead of
// building a queue, and rendering can never stall capture.
//
// Timebase: outgoing capture_ts is stamped on the relay's clock (local time
// + estimated offset), so the receiving side can derive capture-to-render
// spans across machines. The panel's "capture -> recv" row therefore
// includes the sender's extraction and encode time; the merged offline
// report (kpstream report) carries the exact per-stage split.

import { MediaPipeDetector, SyntheticDetector, Detector } from "./capture.js";
import { KeypointFrame } from "./keypoints.js";
import { RelayClient } from "./relay.js";
import { drawGeometry, drawKeypointOverlay } from "./render.js";
import {
  AnimGate,
  BoundPuppet,
  animate,
  bindPuppet,
  newGate,
  parsePuppet,
} from "./rig.js";
import { LatestBox, StatsPanelModel } from "./stats.js";
import { StreamDecoder, StreamEncoder } from "./wire.js";

const $ = (id: string) => document.getElementById(id)!;

interface IncomingFrame {
  sender: string;
  payload: Uint8Array;
  recvMs: number;
}

class App {
  relay: RelayClient | null = null;
  detector: Detector | null = null;
  encoder = new StreamEncoder(false);
  decoders = new Map<string, StreamDecoder>();
  gates = new Map<string, AnimGate>();
  puppet: BoundPuppet | null = null;
  stats = new StatsPanelModel(2000);
  mailbox = new LatestBox<IncomingFrame>();
  seq = 0;
  video: HTMLVideoElement | null = null;
  running = false;
  decodeErrors = 0;
  captureFps = 0;
  private captureTimes: number[] = [];

  async start(): Promise<void> {
    const server = ($("server") as HTMLInputElement).value;
    const room = ($("room") as HTMLInputElement).value;
    const peer = ($("peer") as HTMLInputElement).value;
    const useCamera = ($("use-camera") as HTMLInputElement).checked;
    this.encoder = new StreamEncoder(($("use-delta") as HTMLInputElement).checked);

    this.setStatus("loading puppet...");
    const puppetUrl = ($("puppet-url") as HTMLInputElement).value;
    const spec = parsePuppet(await (await fetch(puppetUrl)).json());
    this.puppet = bindPuppet(spec);

    this.setStatus("starting detector...");
    if (useCamera) {
      try {
        this.video = $("local-video") as HTMLVideoElement;
        this.video.srcObject = await navigator.mediaDevices.getUserMedia(
          { video: { width: 640, height: 480 } });
        await this.video.play();
      } catch (err) {
        this.setStatus(`camera unavailable (${err}); check permissions`);
        throw err;
      }
      const detector = new MediaPipeDetector();
      try {
        await detector.init();
        this.detector = detector;
      } catch (err) {
        this.setStatus(`detector load failed (${err}); retrying in 3 s`);
        setTimeout(() => this.start().catch(() => undefined), 3000);
        return;
      }
    } else {
      this.detector = new SyntheticDetector();
    }

    this.setStatus("connecting...");
    await this.connect(server, room, peer);
    this.running = true;
    this.startCaptureLoop();
    requestAnimationFrame(() => this.renderLoop());
    setInterval(() => this.refreshPanel(), 250);
    this.setStatus("live");
  }

  async connect(server: string, room: string, peer: string): Promise<void> {
    this.relay = new RelayClient(server, room, peer, {
      onFrame: (sender, payload, recvMs) => {
        this.stats.onFrameReceived(recvMs, payload.length + 1 + sender.length);
        this.mailbox.put({ sender, payload, recvMs });
      },
      onPeers: (peers) => {
        $("peers").textContent = peers.size
          ? [...peers].join(", ") : "(waiting for a peer)";
      },
      onClose: () => {
        // frozen puppet while the session resumes
        if (this.running) {
          this.setStatus("relay lost; reconnecting...");
          setTimeout(() => this.connect(server, room, peer)
            .then(() => this.setStatus("live"))
            .catch(() => this.setStatus("reconnect failed; retrying")),
            1000);
        }
      },
    });
    await this.relay.connect();
    await this.relay.estimateClockOffset(5);
  }

  startCaptureLoop(): void {
    const tick = async () => {
      if (!this.running || !this.relay || !this.detector) return;
      const t0 = performance.now();
      const result = await this.detector.detect(this.video!, t0);
      if (!result.pose && !result.face) {
        $("subject").textContent = "no subject";
        return; // frame withheld
      }
      $("subject").textContent = result.pose && result.face ? "pose + face"
        : result.pose ? "pose only" : "face only";
      const frame: KeypointFrame = {
        seq: this.seq,
        captureTsMs: Math.round(this.relay.correctedNow()) >>> 0,
        pose: result.pose,
        face: result.face,
      };
      this.seq = (this.seq + 1) & 0xffff;
      this.relay.sendFrame(this.encoder.encode(frame));
      this.stats.extraction.push(t0, result.extractionMs);
      this.captureTimes.push(t0);
      while (this.captureTimes.length && this.captureTimes[0] < t0 - 2000) {
        this.captureTimes.shift();
      }
      this.captureFps = this.captureTimes.length / 2;
      if (result.pose || result.face) {
        const octx = ($("overlay") as HTMLCanvasElement).getContext("2d")!;
        octx.clearRect(0, 0, octx.canvas.width, octx.canvas.height);
        if (result.pose) {
          drawKeypointOverlay(octx, result.pose.keypoints.map((k) => [k.x, k.y]));
        }
        if (result.face) {
          drawKeypointOverlay(octx, result.face.points, "#4f8cf5");
        }
      }
    };
    window.setInterval(() => void tick(), 66); // ~15 Hz target
  }

  renderLoop(): void {
    if (!this.running) return;
    const item = this.mailbox.take();
    if (item && this.puppet && this.relay) {
      const t0 = performance.now();
      try {
        let decoder = this.decoders.get(item.sender);
        if (!decoder) {
          decoder = new StreamDecoder();
          this.decoders.set(item.sender, decoder);
        }
        const { frame } = decoder.decode(item.payload);
        let gate = this.gates.get(item.sender);
        if (!gate) {
          gate = newGate();
          this.gates.set(item.sender, gate);
        }
        const geometry = animate(this.puppet, frame, gate);
        const ctx = ($("puppet-canvas") as HTMLCanvasElement).getContext("2d")!;
        drawGeometry(ctx, geometry);

        const renderMs = performance.now() - t0;
        this.stats.render.push(t0, renderMs);
        // sender stamped capture_ts on the relay timebase; compare there
        const recvCorr = item.recvMs + this.relay.clockOffsetMs;
        const captureToRecv = (recvCorr - frame.captureTsMs + 2 ** 32) % 2 ** 32;
        if (captureToRecv < 60_000) { // ignore non-conforming stamps
          this.stats.transmission.push(t0, captureToRecv);
          this.stats.net.push(t0, captureToRecv + renderMs);
        }
      } catch {
        this.decodeErrors++;
      }
    }
    requestAnimationFrame(() => this.renderLoop());
  }

  refreshPanel(): void {
    const now = performance.now();
    const rows = this.stats.rows(now);
    const fmt = (r: { median: number; p10: number; p90: number } | null) =>
      r ? `${r.median.toFixed(1)} ms (${r.p10.toFixed(1)}-${r.p90.toFixed(1)})` : "-";
    $("stat-bitrate").textContent =
      `${(this.stats.bitrateBps(now) / 1000).toFixed(1)} kbps`;
    $("stat-fps").textContent =
      `${this.stats.recvFps(now).toFixed(1)} recv / ${this.captureFps.toFixed(1)} capture`;
    $("stat-extraction").textContent = fmt(rows["Extraction latency"]);
    $("stat-transmission").textContent = fmt(rows["Transmission latency"]);
    $("stat-render").textContent = fmt(rows["Render latency"]);
    $("stat-net").textContent = fmt(rows["Net latency"]);
    $("stat-drops").textContent =
      `${this.mailbox.dropped} render, ${this.relay?.droppedStale ?? 0} stale, `
      + `${this.decodeErrors} decode`;
  }

  setStatus(text: string): void {
    $("status").textContent = text;
  }
}

const app = new App();
$("start").addEventListener("click", () => {
  ($("start") as HTMLButtonElement).disabled = true;
  app.start().catch((err) => {
    app.setStatus(`error: ${err}`);
    ($("start") as HTMLButtonElement).disabled = false;
  });
});
