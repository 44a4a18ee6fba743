// Gateway connection with automatic reconnect.  The socket is injectable
// so tests can drive the state machine with fakes (and node tests can use
// the "ws" package where browsers use the native WebSocket).

import { Command, parseRecord, GatewayRecord } from "./records.js";

// Handler params are `any` so the browser WebSocket, the "ws" package and
// test fakes all satisfy the shape without adapter noise.
export interface SocketLike {
  // eslint-disable-next-line @typescript-eslint/no-explicit-any
  onopen: ((ev?: any) => void) | null;
  // eslint-disable-next-line @typescript-eslint/no-explicit-any
  onmessage: ((ev: any) => void) | null;
  // eslint-disable-next-line @typescript-eslint/no-explicit-any
  onclose: ((ev?: any) => void) | null;
  // eslint-disable-next-line @typescript-eslint/no-explicit-any
  onerror: ((ev?: any) => void) | null;
  send(data: string): void;
  close(): void;
}

export type SocketFactory = (url: string) => SocketLike;

export interface GatewayEvents {
  onRecord: (rec: GatewayRecord) => void;
  onStatus: (status: "connecting" | "connected" | "disconnected") => void;
}

export interface SendResult {
  ok: boolean;
  error?: string;
}

const BACKOFF_START_MS = 250;
const BACKOFF_CAP_MS = 4000;

export class GatewayClient {
  private socket: SocketLike | null = null;
  private connected = false;
  private closed = false;
  private backoffMs = BACKOFF_START_MS;
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(private url: string, private events: GatewayEvents,
              private factory: SocketFactory,
              private schedule: (fn: () => void, ms: number) => ReturnType<typeof setTimeout> = setTimeout) {}

  connect(): void {
    this.closed = false;
    this.open();
  }

  private open(): void {
    this.events.onStatus("connecting");
    let sock: SocketLike;
    try {
      sock = this.factory(this.url);
    } catch {
      this.scheduleReconnect();
      return;
    }
    this.socket = sock;
    sock.onopen = () => {
      this.connected = true;
      this.backoffMs = BACKOFF_START_MS;
      this.events.onStatus("connected");
    };
    sock.onmessage = (ev) => {
      const rec = parseRecord(String(ev.data));
      if (rec !== null) this.events.onRecord(rec);
    };
    const drop = () => {
      if (this.socket !== sock) return; // already superseded
      this.connected = false;
      this.socket = null;
      this.events.onStatus("disconnected");
      this.scheduleReconnect();
    };
    sock.onclose = drop;
    sock.onerror = drop;
  }

  private scheduleReconnect(): void {
    if (this.closed || this.timer !== null) return;
    this.timer = this.schedule(() => {
      this.timer = null;
      if (!this.closed) this.open();
    }, this.backoffMs);
    this.backoffMs = Math.min(this.backoffMs * 2, BACKOFF_CAP_MS);
  }

  get isConnected(): boolean {
    return this.connected;
  }

  /** Send a command; rejected immediately (not queued) while disconnected. */
  sendCommand(command: Command): SendResult {
    if (!this.connected || this.socket === null) {
      return { ok: false, error: "queued-rejected: not connected" };
    }
    try {
      this.socket.send(JSON.stringify(command));
      return { ok: true };
    } catch (e) {
      return { ok: false, error: `send failed: ${String(e)}` };
    }
  }

  close(): void {
    this.closed = true;
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    this.connected = false;
    if (this.socket !== null) {
      const sock = this.socket;
      this.socket = null;
      sock.onclose = null;
      sock.onerror = null;
      sock.close();
    }
  }
}
