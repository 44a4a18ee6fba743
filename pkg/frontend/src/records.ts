// Gateway wire records: downstream stream records and upstream commands.

export interface StreamRecord {
  topic: number;
  name: string;
  seq: number;
  ts: number; // nanoseconds; above 2^53 the double loses sub-us precision,
              // which is irrelevant at chart resolution
  publisher: string;
  data: Record<string, unknown>;
}

export interface ReplyRecord {
  ack?: string;
  error?: string;
  echo?: string;
}

export type GatewayRecord = StreamRecord | ReplyRecord;

export function isStreamRecord(obj: unknown): obj is StreamRecord {
  return (typeof obj === "object" && obj !== null
    && typeof (obj as StreamRecord).name === "string"
    && typeof (obj as StreamRecord).topic === "number"
    && typeof (obj as StreamRecord).data === "object");
}

export function parseRecord(raw: string): GatewayRecord | null {
  try {
    const obj = JSON.parse(raw);
    if (typeof obj === "object" && obj !== null) return obj as GatewayRecord;
  } catch {
    // fall through
  }
  return null;
}

export type Command =
  | { cmd: "grip"; setpoint: number }
  | { cmd: "record"; action: "begin" | "end" }
  | { cmd: "teleop"; action: "start" | "stop" }
  | { cmd: "node"; action: "start" | "stop"; node: string };
