// Pure view-state reducers: network receive and rendering are decoupled
// through these, so every transition is unit-testable without a DOM.

import { EngineOutputWire, HandFrameWire, Message, PoseWire } from "./protocol.js";

export const PINCH_MAX_M = 0.12; // pinch slider 1.0 -> 0.12 m index-thumb separation

export interface ViewState {
  connection: "disconnected" | "connecting" | "connected";
  latestOutput: EngineOutputWire | null;
  lastOutputSeq: number;
  staleDropped: number;
  droppedFrames: number;
  overlay: { color: "red" | "yellow" | "blue"; blinking: boolean; blinkPhase: number };
  haptic: boolean;
  recording: { active: boolean; sessionId: string | null };
  history: EngineOutputWire[]; // ring buffer for scrubbing
  scrubIndex: number | null; // null = live
  lastError: string | null;
}

export const HISTORY_LIMIT = 1800; // 30 s at 60 Hz

export function initialViewState(): ViewState {
  return {
    connection: "disconnected",
    latestOutput: null,
    lastOutputSeq: 0,
    staleDropped: 0,
    droppedFrames: 0,
    overlay: { color: "red", blinking: false, blinkPhase: 0 },
    haptic: false,
    recording: { active: false, sessionId: null },
    history: [],
    scrubIndex: null,
    lastError: null,
  };
}

export function connectionChanged(state: ViewState, connection: ViewState["connection"]): ViewState {
  return { ...state, connection };
}

/** Apply one engine_output message; stale (non-increasing seq) drops silently. */
export function applyEngineOutput(
  state: ViewState,
  msg: { seq: number; dropped: number; output: EngineOutputWire },
): ViewState {
  if (msg.seq <= state.lastOutputSeq) {
    return { ...state, staleDropped: state.staleDropped + 1 };
  }
  const output = msg.output;
  const history = state.history.length >= HISTORY_LIMIT
    ? [...state.history.slice(1), output]
    : [...state.history, output];
  return {
    ...state,
    latestOutput: output,
    lastOutputSeq: msg.seq,
    droppedFrames: state.droppedFrames + msg.dropped,
    overlay: {
      color: output.display.color,
      blinking: output.display.blinking,
      blinkPhase: output.blink_phase,
    },
    haptic: output.display.haptic,
    history,
  };
}

export function applyMessage(state: ViewState, msg: Message): ViewState {
  switch (msg.type) {
    case "engine_output":
      return applyEngineOutput(state, msg);
    case "record_start":
      return { ...state, recording: { active: true, sessionId: msg.session_id } };
    case "record_stop":
      return { ...state, recording: { active: false, sessionId: null } };
    case "error":
      return { ...state, lastError: `${msg.code}: ${msg.text}` };
    default:
      return state;
  }
}

/** What the overlay should render right now (live or scrubbed). */
export function displayedOutput(state: ViewState): EngineOutputWire | null {
  if (state.scrubIndex !== null && state.history.length > 0) {
    const i = Math.max(0, Math.min(state.history.length - 1, state.scrubIndex));
    return state.history[i];
  }
  return state.latestOutput;
}

// ---------------------------------------------------------------------------
// Input -> hand frames

export interface HandInput {
  position: [number, number, number]; // wrist position, world
  yaw: number; // modifier-drag rotation about world z
  pitch: number; // modifier-drag rotation about world y
  pinch: number; // 0..1 key-driven pinch
  headset: PoseWire;
}

function quatMultiply(
  a: [number, number, number, number],
  b: [number, number, number, number],
): [number, number, number, number] {
  const [w1, x1, y1, z1] = a;
  const [w2, x2, y2, z2] = b;
  return [
    w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
    w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
    w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
    w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
  ];
}

function axisAngle(axis: [number, number, number], angle: number): [number, number, number, number] {
  const h = angle / 2;
  const s = Math.sin(h);
  return [Math.cos(h), axis[0] * s, axis[1] * s, axis[2] * s];
}

export function normalizeQuat(q: [number, number, number, number]): [number, number, number, number] {
  const n = Math.hypot(q[0], q[1], q[2], q[3]) || 1;
  return [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
}

// base wrist orientation: tool axis forward and slightly down, matching the
// robot's parked posture so tracking starts without a transient
export const BASE_WRIST_QUAT = axisAngle([0, 1, 0], (100 * Math.PI) / 180);

export function inputToHandFrame(input: HandInput, timestampSeconds: number): HandFrameWire {
  const separation = Math.max(0, Math.min(1, input.pinch)) * PINCH_MAX_M;
  const q = quatMultiply(
    axisAngle([0, 0, 1], input.yaw),
    quatMultiply(axisAngle([0, 1, 0], input.pitch), BASE_WRIST_QUAT),
  );
  return {
    timestamp: timestampSeconds,
    wrist: { position: input.position, orientation: q },
    headset: input.headset,
    fingertips: {
      index: [0, -separation / 2, 0],
      thumb: [0, separation / 2, 0],
      middle: [0.02, -0.01, 0.06],
      ring: [0.02, 0.015, 0.06],
      pinky: [0.02, 0.04, 0.05],
    },
    cloud: null,
  };
}
