// Canvas playback of animated puppet geometry.

import { FrameGeometry } from "./rig.js";

export function drawGeometry(ctx: CanvasRenderingContext2D,
                             geometry: FrameGeometry): void {
  const canvas = ctx.canvas;
  const [vx, vy, vw, vh] = geometry.viewbox;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.save();
  const scale = Math.min(canvas.width / vw, canvas.height / vh);
  ctx.translate((canvas.width - vw * scale) / 2 - vx * scale,
                (canvas.height - vh * scale) / 2 - vy * scale);
  ctx.scale(scale, scale);
  ctx.lineCap = "round";
  ctx.lineJoin = "round";

  for (const path of geometry.paths) {
    if (!path.points.length) continue;
    ctx.beginPath();
    const v = geometry.vertices;
    const first = path.points[0];
    ctx.moveTo(v[first * 2], v[first * 2 + 1]);
    for (let k = 1; k < path.points.length; k++) {
      const i = path.points[k];
      ctx.lineTo(v[i * 2], v[i * 2 + 1]);
    }
    if (path.closed) ctx.closePath();
    if (path.fill !== "none") {
      ctx.fillStyle = path.fill;
      ctx.fill();
    }
    ctx.strokeStyle = path.stroke;
    ctx.lineWidth = path.strokeWidth;
    ctx.stroke();
  }
  ctx.restore();
}

export function drawKeypointOverlay(ctx: CanvasRenderingContext2D,
                                    points: Array<[number, number]>,
                                    color = "#27d17f"): void {
  const { width, height } = ctx.canvas;
  ctx.fillStyle = color;
  for (const [x, y] of points) {
    ctx.beginPath();
    ctx.arc(x * width, y * height, 2.5, 0, 2 * Math.PI);
    ctx.fill();
  }
}
