// Render-path smoke test through a recording stub context: verifies the
// chart draws only buffered data, respects the decimation cap, and flags
// stale streams.

import { describe, expect, it } from "vitest";

import { StripChart } from "../src/charts.js";
import { SignalBuffer } from "../src/ring.js";

class StubContext {
  calls: { op: string; args: unknown[] }[] = [];
  fillStyle = "";
  strokeStyle = "";
  lineWidth = 0;
  font = "";

  private log(op: string, ...args: unknown[]) {
    this.calls.push({ op, args });
  }

  clearRect(...a: unknown[]) { this.log("clearRect", ...a); }
  fillRect(...a: unknown[]) { this.log("fillRect", ...a); }
  strokeRect(...a: unknown[]) { this.log("strokeRect", ...a); }
  fillText(...a: unknown[]) { this.log("fillText", ...a); }
  beginPath() { this.log("beginPath"); }
  moveTo(...a: unknown[]) { this.log("moveTo", ...a); }
  lineTo(...a: unknown[]) { this.log("lineTo", ...a); }
  stroke() { this.log("stroke"); }
  measureText(text: string) { return { width: text.length * 6 }; }
}

function stubCanvas(width = 640, height = 170) {
  const ctx = new StubContext();
  const canvas = {
    width,
    height,
    getContext: (kind: string) => (kind === "2d" ? ctx : null),
  } as unknown as HTMLCanvasElement;
  return { canvas, ctx };
}

describe("StripChart", () => {
  it("draws one polyline per series from buffered points only", () => {
    const { canvas, ctx } = stubCanvas();
    const a = new SignalBuffer();
    const b = new SignalBuffer();
    for (let i = 0; i < 100; i++) {
      a.push(i * 100, Math.sin(i / 5));
      b.push(i * 100, i * 0.01);
    }
    const chart = new StripChart(canvas, "test", [
      { label: "a", color: "#fff", buffer: a },
      { label: "b", color: "#0f0", buffer: b },
    ]);
    chart.render(10_000, false);
    const strokes = ctx.calls.filter((c) => c.op === "stroke");
    expect(strokes.length).toBe(2); // one polyline per series
    const segments = ctx.calls.filter((c) => c.op === "lineTo");
    expect(segments.length).toBeGreaterThan(0);
  });

  it("caps drawn vertices at two per pixel column", () => {
    const { canvas, ctx } = stubCanvas(200, 170);
    const buf = new SignalBuffer();
    for (let i = 0; i < 20_000; i++) buf.push(i, Math.sin(i));
    const chart = new StripChart(canvas, "dense", [
      { label: "x", color: "#fff", buffer: buf },
    ], 30_000);
    chart.render(20_000, false);
    const vertices = ctx.calls.filter(
      (c) => c.op === "lineTo" || c.op === "moveTo").length;
    const plotWidth = 200 - 44 - 6;
    expect(vertices).toBeLessThanOrEqual(2 * plotWidth + 2);
  });

  it("marks stale charts in the title", () => {
    const { canvas, ctx } = stubCanvas();
    const buf = new SignalBuffer();
    buf.push(0, 1);
    const chart = new StripChart(canvas, "grip", [
      { label: "w", color: "#fff", buffer: buf },
    ]);
    chart.render(60_000, true);
    const titles = ctx.calls.filter((c) => c.op === "fillText")
      .map((c) => String(c.args[0]));
    expect(titles.some((t) => t.includes("(stale)"))).toBe(true);
  });

  it("renders an empty frame without data", () => {
    const { canvas, ctx } = stubCanvas();
    const chart = new StripChart(canvas, "empty", [
      { label: "x", color: "#fff", buffer: new SignalBuffer() },
    ]);
    chart.render(0, false);
    expect(ctx.calls.some((c) => c.op === "strokeRect")).toBe(true);
  });
});
