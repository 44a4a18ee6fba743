// Canvas strip charts with min/max decimation (at most two points per
// pixel column) over the rolling 30 s window.

import { decimate, SignalBuffer } from "./ring.js";

export interface Series {
  label: string;
  color: string;
  buffer: SignalBuffer;
}

export class StripChart {
  private ctx: CanvasRenderingContext2D;

  constructor(private canvas: HTMLCanvasElement, private title: string,
              private series: Series[], private windowMs = 30_000,
              private unit = "") {
    const ctx = canvas.getContext("2d");
    if (ctx === null) throw new Error("no 2d context");
    this.ctx = ctx;
  }

  render(nowMs: number, stale: boolean): void {
    const { ctx, canvas } = this;
    const w = canvas.width;
    const h = canvas.height;
    ctx.clearRect(0, 0, w, h);
    ctx.fillStyle = "#141a22";
    ctx.fillRect(0, 0, w, h);

    const padL = 44;
    const padT = 18;
    const plotW = w - padL - 6;
    const plotH = h - padT - 14;
    const t1 = this.latestTime(nowMs);
    const t0 = t1 - this.windowMs;

    // y range from visible data
    let lo = Infinity;
    let hi = -Infinity;
    const traces = this.series.map((s) => {
      const pts = decimate(s.buffer.snapshot(), t0, t1, plotW);
      for (const p of pts) {
        if (p.v < lo) lo = p.v;
        if (p.v > hi) hi = p.v;
      }
      return { s, pts };
    });
    if (!isFinite(lo) || !isFinite(hi)) {
      lo = -1;
      hi = 1;
    }
    if (hi - lo < 1e-12) {
      const pad = Math.max(Math.abs(hi) * 0.1, 1e-3);
      lo -= pad;
      hi += pad;
    }

    // frame and labels
    ctx.strokeStyle = "#2a3442";
    ctx.strokeRect(padL, padT, plotW, plotH);
    ctx.fillStyle = stale ? "#777" : "#cfd8e3";
    ctx.font = "11px system-ui, sans-serif";
    ctx.fillText(this.title + (stale ? "  (stale)" : ""), padL, 12);
    ctx.fillStyle = "#8191a5";
    ctx.fillText(format(hi) + this.unit, 2, padT + 9);
    ctx.fillText(format(lo) + this.unit, 2, padT + plotH);

    const x = (t: number) => padL + ((t - t0) / this.windowMs) * plotW;
    const y = (v: number) => padT + (1 - (v - lo) / (hi - lo)) * plotH;

    for (const { s, pts } of traces) {
      if (pts.length === 0) continue;
      ctx.strokeStyle = stale ? "#555e69" : s.color;
      ctx.lineWidth = 1.2;
      ctx.beginPath();
      ctx.moveTo(x(pts[0].t), y(pts[0].v));
      for (let i = 1; i < pts.length; i++) {
        ctx.lineTo(x(pts[i].t), y(pts[i].v));
      }
      ctx.stroke();
    }

    // legend
    let lx = padL + 6;
    for (const { s } of traces) {
      ctx.fillStyle = stale ? "#555e69" : s.color;
      ctx.fillText(s.label, lx, padT + 11);
      lx += ctx.measureText(s.label).width + 12;
    }
  }

  private latestTime(nowMs: number): number {
    let latest = -Infinity;
    for (const s of this.series) {
      const p = s.buffer.latest();
      if (p !== undefined && p.t > latest) latest = p.t;
    }
    return isFinite(latest) ? latest : nowMs;
  }
}

function format(v: number): string {
  const a = Math.abs(v);
  if (a >= 100) return v.toFixed(0);
  if (a >= 1) return v.toFixed(2);
  if (a >= 0.001 || a === 0) return v.toFixed(3);
  return v.toExponential(1);
}
