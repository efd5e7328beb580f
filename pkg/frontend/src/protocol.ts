// Wire protocol: u32 little-endian length prefix + canonical JSON payload
// (sorted keys, no whitespace). Matches PROTOCOL.md at the repo root; the
// same bytes travel inside WebSocket binary messages.

export const PROTOCOL_VERSION = 1;

export interface PoseWire {
  position: [number, number, number];
  orientation: [number, number, number, number]; // w, x, y, z
}

export interface HandFrameWire {
  timestamp: number;
  wrist: PoseWire;
  headset: PoseWire;
  fingertips: Record<string, [number, number, number]>;
  cloud: null | { count: number; xyz: string; rgb: string };
}

export interface DisplayWire {
  color: "red" | "yellow" | "blue";
  blinking: boolean;
  haptic: boolean;
}

export interface EngineOutputWire {
  timestamp: number;
  joint_angles: number[];
  gripper: "open" | "closed" | null;
  ee_pose: PoseWire;
  events: { kind: string; timestamp: number; detail: Record<string, unknown> }[];
  display: DisplayWire;
  lagging: boolean;
  blink_phase: number;
}

export type Message =
  | { type: "hello"; seq: number; version: number; client: string }
  | { type: "scene_upload"; seq: number; cloud: unknown }
  | { type: "place_robot"; seq: number; pose: PoseWire }
  | { type: "hand_frame"; seq: number; frame: HandFrameWire }
  | { type: "engine_output"; seq: number; in_reply_to: number; dropped: number; output: EngineOutputWire }
  | { type: "record_start"; seq: number; session_id: string | null }
  | { type: "record_stop"; seq: number; mode: "finalize" | "discard"; session_id?: string }
  | { type: "calibrate"; seq: number; robot_base: PoseWire; camera: PoseWire }
  | { type: "calibration_result"; seq: number; pose: PoseWire }
  | { type: "error"; seq: number; code: string; text: string };

const REQUIRED_FIELDS: Record<string, string[]> = {
  hello: ["version", "client"],
  scene_upload: ["cloud"],
  place_robot: ["pose"],
  hand_frame: ["frame"],
  engine_output: ["in_reply_to", "dropped", "output"],
  record_start: ["session_id"],
  record_stop: ["mode"],
  calibrate: ["robot_base", "camera"],
  calibration_result: ["pose"],
  error: ["code", "text"],
};

export class ProtocolError extends Error {
  constructor(public code: string, text: string) {
    super(text);
  }
}

/** JSON.stringify with recursively sorted object keys (canonical form). */
export function stableStringify(value: unknown): string {
  if (value === null || typeof value !== "object") {
    return JSON.stringify(value);
  }
  if (Array.isArray(value)) {
    return "[" + value.map(stableStringify).join(",") + "]";
  }
  const obj = value as Record<string, unknown>;
  const keys = Object.keys(obj).sort();
  const parts = keys
    .filter((k) => obj[k] !== undefined)
    .map((k) => JSON.stringify(k) + ":" + stableStringify(obj[k]));
  return "{" + parts.join(",") + "}";
}

export function encodeFrame(msg: Message): Uint8Array {
  const payload = new TextEncoder().encode(stableStringify(msg));
  const out = new Uint8Array(4 + payload.length);
  new DataView(out.buffer).setUint32(0, payload.length, true);
  out.set(payload, 4);
  return out;
}

export interface DecodeResult {
  message: Message;
  consumed: number;
}

/** Decode one frame; returns null when more bytes are needed. */
export function decodeFrame(buf: Uint8Array, offset = 0): DecodeResult | null {
  if (buf.length - offset < 4) return null;
  const view = new DataView(buf.buffer, buf.byteOffset + offset);
  const length = view.getUint32(0, true);
  if (buf.length - offset - 4 < length) return null;
  const raw = buf.subarray(offset + 4, offset + 4 + length);
  let parsed: unknown;
  try {
    parsed = JSON.parse(new TextDecoder("utf-8", { fatal: true }).decode(raw));
  } catch (err) {
    throw new ProtocolError("malformed_payload", `payload is not valid JSON: ${err}`);
  }
  if (typeof parsed !== "object" || parsed === null || Array.isArray(parsed)) {
    throw new ProtocolError("malformed_payload", "payload must be a JSON object");
  }
  const msg = parsed as Record<string, unknown>;
  const mtype = msg["type"];
  if (typeof mtype !== "string" || !(mtype in REQUIRED_FIELDS)) {
    throw new ProtocolError("unknown_type", `unknown message type ${String(mtype)}`);
  }
  if (typeof msg["seq"] !== "number" || !Number.isInteger(msg["seq"]) || (msg["seq"] as number) < 0) {
    throw new ProtocolError("bad_sequence", "seq must be a non-negative integer");
  }
  for (const field of REQUIRED_FIELDS[mtype]) {
    if (!(field in msg)) {
      throw new ProtocolError("missing_field", `${mtype} message lacks ${field}`);
    }
  }
  return { message: msg as unknown as Message, consumed: offset + 4 + length };
}

/** Incremental decoder for a byte stream (socket buffer or scripted feed). */
export class FrameReader {
  private buf = new Uint8Array(0);

  push(chunk: Uint8Array): Message[] {
    const merged = new Uint8Array(this.buf.length + chunk.length);
    merged.set(this.buf);
    merged.set(chunk, this.buf.length);
    this.buf = merged;
    const out: Message[] = [];
    let offset = 0;
    for (;;) {
      let result: DecodeResult | null;
      try {
        result = decodeFrame(this.buf, offset);
      } catch (err) {
        if (err instanceof ProtocolError) {
          // skip the bad frame: its length prefix is still trustworthy
          const view = new DataView(this.buf.buffer, this.buf.byteOffset + offset);
          offset += 4 + view.getUint32(0, true);
          continue;
        }
        throw err;
      }
      if (result === null) break;
      out.push(result.message);
      offset = result.consumed;
    }
    this.buf = this.buf.subarray(offset);
    return out;
  }
}
