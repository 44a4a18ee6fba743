// Rolling time-ordered sample buffer backing each strip chart.

export interface Point {
  t: number; // milliseconds (gateway timestamp / 1e6)
  v: number;
}

export class SignalBuffer {
  private points: Point[] = [];

  constructor(readonly windowMs: number = 30_000) {}

  push(t: number, v: number): void {
    const pts = this.points;
    // keep time-ordered even if a publisher stamp regresses slightly
    if (pts.length > 0 && t < pts[pts.length - 1].t) {
      t = pts[pts.length - 1].t;
    }
    pts.push({ t, v });
    const cutoff = t - this.windowMs;
    let drop = 0;
    while (drop < pts.length - 1 && pts[drop].t < cutoff) drop++;
    if (drop > 0) pts.splice(0, drop);
  }

  get length(): number {
    return this.points.length;
  }

  latest(): Point | undefined {
    return this.points[this.points.length - 1];
  }

  snapshot(): readonly Point[] {
    return this.points;
  }

  clear(): void {
    this.points = [];
  }
}

// Min/max decimation: at most two points per pixel column, preserving the
// envelope of the signal so spikes stay visible at any zoom.
export function decimate(points: readonly Point[], t0: number, t1: number,
                         pixels: number): Point[] {
  if (points.length === 0 || pixels <= 0 || t1 <= t0) return [];
  const visible = points.filter((p) => p.t >= t0 && p.t <= t1);
  if (visible.length <= 2 * pixels) return visible;
  const out: Point[] = [];
  const bucket = (t1 - t0) / pixels;
  let i = 0;
  for (let px = 0; px < pixels && i < visible.length; px++) {
    const end = t0 + (px + 1) * bucket;
    let lo: Point | null = null;
    let hi: Point | null = null;
    while (i < visible.length && visible[i].t <= end) {
      const p = visible[i];
      if (lo === null || p.v < lo.v) lo = p;
      if (hi === null || p.v > hi.v) hi = p;
      i++;
    }
    if (lo !== null && hi !== null) {
      if (lo.t <= hi.t) {
        out.push(lo);
        if (hi !== lo) out.push(hi);
      } else {
        out.push(hi);
        out.push(lo);
      }
    }
  }
  return out;
}
