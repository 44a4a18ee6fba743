// Dashboard model: everything rendered comes from gateway records, never
// from local extrapolation.  Control flags (recording / teleop / motor)
// follow CONTROL state echoes, not button clicks; a click only registers a
// pending command that must be confirmed by the stream or it times out
// into an error toast.

import { SignalBuffer } from "./ring.js";
import { Command, GatewayRecord, isStreamRecord, StreamRecord } from "./records.js";

export type ConnStatus = "connecting" | "connected" | "disconnected";

export interface PoseView {
  position: number[];
  orientation: number[];
}

export interface GripView {
  width: number;
  setpoint: number;
  grip_force: number;
  stalled: boolean;
}

export interface WrenchView {
  force: number[];
  torque: number[];
}

export interface Toast {
  atMs: number;
  text: string;
}

interface Pending {
  command: Command;
  sentAtMs: number;
  /** true once a stream echo confirms the command took effect */
  check: (s: DashboardState) => boolean;
}

export const STALE_MS = 1000;
export const PENDING_TIMEOUT_MS = 3000;

export const WRENCH_AXES = ["fx", "fy", "fz", "tx", "ty", "tz"] as const;

export class DashboardState {
  status: ConnStatus = "connecting";
  pose: PoseView | null = null;
  grip: GripView | null = null;
  wrenchL: WrenchView | null = null;
  wrenchR: WrenchView | null = null;

  recording = false;
  teleopActive = false;
  motorRunning = true;

  buffers = new Map<string, SignalBuffer>();
  lastSeenMs = new Map<string, number>();
  toasts: Toast[] = [];
  recordsApplied = 0;

  private pending: Pending[] = [];

  buffer(name: string): SignalBuffer {
    let buf = this.buffers.get(name);
    if (buf === undefined) {
      buf = new SignalBuffer();
      this.buffers.set(name, buf);
    }
    return buf;
  }

  setStatus(status: ConnStatus): void {
    this.status = status;
    // buffers are deliberately retained across disconnects
  }

  /** Apply one downstream record; nowMs is the local receive time used for
   * staleness accounting. */
  applyRecord(obj: GatewayRecord, nowMs: number): void {
    if (!isStreamRecord(obj)) {
      const reply = obj as { ack?: string; error?: string };
      if (reply.error !== undefined) {
        this.pushToast(nowMs, `gateway rejected command: ${reply.error}`);
      }
      return; // acks are informational; flags wait for stream echoes
    }
    this.recordsApplied++;
    const tMs = obj.ts / 1e6;
    switch (obj.name) {
      case "POSE":
        this.applyPose(obj, tMs, nowMs);
        break;
      case "GRIP_STATE":
        this.applyGrip(obj, tMs, nowMs);
        break;
      case "WRENCH_L":
      case "WRENCH_R":
        this.applyWrench(obj, tMs, nowMs);
        break;
      case "CONTROL":
        this.applyControl(obj);
        break;
      default:
        break; // markers / images are not charted
    }
    this.settlePending(nowMs);
  }

  private applyPose(rec: StreamRecord, tMs: number, nowMs: number): void {
    const position = rec.data.position as number[];
    const orientation = rec.data.orientation as number[];
    if (!Array.isArray(position) || position.length !== 3) return;
    this.pose = { position, orientation };
    this.lastSeenMs.set("pose", nowMs);
    for (const [i, axis] of ["x", "y", "z"].entries()) {
      this.buffer(`pose.${axis}`).push(tMs, position[i]);
    }
  }

  private applyGrip(rec: StreamRecord, tMs: number, nowMs: number): void {
    const d = rec.data as unknown as GripView;
    if (typeof d.width !== "number") return;
    this.grip = {
      width: d.width,
      setpoint: d.setpoint,
      grip_force: d.grip_force,
      stalled: Boolean(d.stalled),
    };
    this.lastSeenMs.set("grip", nowMs);
    this.buffer("grip.width").push(tMs, d.width);
    this.buffer("grip.setpoint").push(tMs, d.setpoint);
    this.buffer("grip.force").push(tMs, d.grip_force);
  }

  private applyWrench(rec: StreamRecord, tMs: number, nowMs: number): void {
    const force = rec.data.force as number[];
    const torque = rec.data.torque as number[];
    if (!Array.isArray(force) || !Array.isArray(torque)) return;
    const side = rec.name === "WRENCH_L" ? "l" : "r";
    const view = { force, torque };
    if (side === "l") this.wrenchL = view;
    else this.wrenchR = view;
    this.lastSeenMs.set(`wrench_${side}`, nowMs);
    const values = [...force, ...torque];
    for (const [i, axis] of WRENCH_AXES.entries()) {
      this.buffer(`wrench_${side}.${axis}`).push(tMs, values[i]);
    }
  }

  private applyControl(rec: StreamRecord): void {
    const verb = rec.data.verb;
    if (verb === "record:state") {
      this.recording = rec.data.active === "1";
    } else if (verb === "teleop:state") {
      this.teleopActive = rec.data.active === "1";
    } else if (verb === "motor:state") {
      this.motorRunning = rec.data.running === "1";
    }
  }

  isStale(stream: string, nowMs: number): boolean {
    const seen = this.lastSeenMs.get(stream);
    return seen === undefined || nowMs - seen > STALE_MS;
  }

  // -- command tracking -----------------------------------------------------

  /** Register a command that was accepted for sending; it must be echoed
   * back through the streams or it becomes an error toast. */
  trackCommand(command: Command, nowMs: number): void {
    this.pending.push({ command, sentAtMs: nowMs, check: echoCheck(command) });
  }

  pushToast(nowMs: number, text: string): void {
    this.toasts.push({ atMs: nowMs, text });
    if (this.toasts.length > 8) this.toasts.shift();
  }

  pendingCount(): number {
    return this.pending.length;
  }

  settlePending(nowMs: number): void {
    this.pending = this.pending.filter((p) => {
      if (p.check(this)) return false; // confirmed
      if (nowMs - p.sentAtMs > PENDING_TIMEOUT_MS) {
        this.pushToast(nowMs,
          `no echo for ${describe(p.command)} after ${PENDING_TIMEOUT_MS} ms`);
        return false;
      }
      return true;
    });
  }
}

function describe(c: Command): string {
  switch (c.cmd) {
    case "grip": return `grip ${c.setpoint.toFixed(3)} m`;
    case "record": return `record ${c.action}`;
    case "teleop": return `teleop ${c.action}`;
    case "node": return `node ${c.node} ${c.action}`;
  }
}

function echoCheck(c: Command): (s: DashboardState) => boolean {
  switch (c.cmd) {
    case "grip":
      return (s) => s.grip !== null
        && Math.abs(s.grip.setpoint - c.setpoint) < 1e-9;
    case "record":
      return (s) => s.recording === (c.action === "begin");
    case "teleop":
      return (s) => s.teleopActive === (c.action === "start");
    case "node":
      return (s) => s.motorRunning === (c.action === "start");
  }
}
