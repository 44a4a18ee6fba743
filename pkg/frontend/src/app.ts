// Browser entry point: wires the gateway client, the dashboard model and
// the chart/control DOM together.  All displayed values come from the
// model, which is fed exclusively by gateway records.

import { StripChart } from "./charts.js";
import { GatewayClient } from "./net.js";
import { Command } from "./records.js";
import { DashboardState } from "./state.js";

const state = new DashboardState();

const wsUrl = (() => {
  const base = location.host || "127.0.0.1:7601";
  return `ws://${base}/ws`;
})();

const client = new GatewayClient(
  wsUrl,
  {
    onRecord: (rec) => state.applyRecord(rec, performance.now()),
    onStatus: (s) => state.setStatus(s),
  },
  (url) => new WebSocket(url),
);

// -- DOM --------------------------------------------------------------------

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing #${id}`);
  return node as T;
}

const statusPill = el<HTMLSpanElement>("status");
const toastBox = el<HTMLDivElement>("toasts");
const gripSlider = el<HTMLInputElement>("grip-slider");
const gripValue = el<HTMLSpanElement>("grip-value");
const gripReadout = el<HTMLSpanElement>("grip-readout");
const poseReadout = el<HTMLSpanElement>("pose-readout");
const recordBtn = el<HTMLButtonElement>("record-btn");
const teleopBtn = el<HTMLButtonElement>("teleop-btn");
const motorStartBtn = el<HTMLButtonElement>("motor-start");
const motorStopBtn = el<HTMLButtonElement>("motor-stop");

const charts: { chart: StripChart; staleKey: string }[] = [
  {
    chart: new StripChart(el("chart-pose"), "pose position", [
      { label: "x", color: "#6fb3ff", buffer: state.buffer("pose.x") },
      { label: "y", color: "#7fe08c", buffer: state.buffer("pose.y") },
      { label: "z", color: "#f2a65a", buffer: state.buffer("pose.z") },
    ], 30_000, " m"),
    staleKey: "pose",
  },
  {
    chart: new StripChart(el("chart-grip"), "grip width / setpoint", [
      { label: "width", color: "#6fb3ff", buffer: state.buffer("grip.width") },
      { label: "setpoint", color: "#c58fff", buffer: state.buffer("grip.setpoint") },
      { label: "force", color: "#ff7d7d", buffer: state.buffer("grip.force") },
    ], 30_000, ""),
    staleKey: "grip",
  },
];
for (const side of ["l", "r"] as const) {
  charts.push({
    chart: new StripChart(
      el(`chart-wrench-${side}`), `wrench ${side.toUpperCase()} (N, N·m)`,
      [
        { label: "fx", color: "#6fb3ff", buffer: state.buffer(`wrench_${side}.fx`) },
        { label: "fy", color: "#7fe08c", buffer: state.buffer(`wrench_${side}.fy`) },
        { label: "fz", color: "#f2a65a", buffer: state.buffer(`wrench_${side}.fz`) },
        { label: "tx", color: "#c58fff", buffer: state.buffer(`wrench_${side}.tx`) },
        { label: "ty", color: "#ff7d7d", buffer: state.buffer(`wrench_${side}.ty`) },
        { label: "tz", color: "#59d6c4", buffer: state.buffer(`wrench_${side}.tz`) },
      ]),
    staleKey: `wrench_${side}`,
  });
}

// -- commands ---------------------------------------------------------------

function issue(command: Command): void {
  const now = performance.now();
  const result = client.sendCommand(command);
  if (!result.ok) {
    state.pushToast(now, result.error ?? "command rejected");
    return;
  }
  state.trackCommand(command, now);
}

gripSlider.oninput = () => {
  gripValue.textContent = `${Number(gripSlider.value).toFixed(3)} m`;
};
gripSlider.onchange = () => {
  issue({ cmd: "grip", setpoint: Number(gripSlider.value) });
};
recordBtn.onclick = () => {
  issue({ cmd: "record", action: state.recording ? "end" : "begin" });
};
teleopBtn.onclick = () => {
  issue({ cmd: "teleop", action: state.teleopActive ? "stop" : "start" });
};
motorStartBtn.onclick = () => issue({ cmd: "node", action: "start", node: "all" });
motorStopBtn.onclick = () => issue({ cmd: "node", action: "stop", node: "all" });

// -- render loop (requestAnimationFrame, far above the 10 Hz floor) ---------

function render(): void {
  const now = performance.now();
  state.settlePending(now);

  statusPill.textContent = state.status;
  statusPill.className = `pill ${state.status}`;

  recordBtn.textContent = state.recording ? "stop recording" : "start recording";
  recordBtn.classList.toggle("active", state.recording);
  teleopBtn.textContent = state.teleopActive ? "disable teleop" : "enable teleop";
  teleopBtn.classList.toggle("active", state.teleopActive);
  motorStartBtn.disabled = state.motorRunning;
  motorStopBtn.disabled = !state.motorRunning;

  if (state.grip !== null) {
    gripReadout.textContent =
      `width ${state.grip.width.toFixed(4)} m, force ` +
      `${state.grip.grip_force.toFixed(2)} N` +
      (state.grip.stalled ? " (stalled)" : "");
  }
  if (state.pose !== null) {
    const [x, y, z] = state.pose.position;
    poseReadout.textContent =
      `x ${x.toFixed(3)}  y ${y.toFixed(3)}  z ${z.toFixed(3)}`;
  }

  for (const { chart, staleKey } of charts) {
    chart.render(now, state.isStale(staleKey, now));
  }

  toastBox.innerHTML = "";
  for (const toast of state.toasts.slice(-4)) {
    const div = document.createElement("div");
    div.className = "toast";
    div.textContent = toast.text;
    toastBox.appendChild(div);
  }

  requestAnimationFrame(render);
}

client.connect();
requestAnimationFrame(render);
