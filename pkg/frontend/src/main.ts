// Console entry point: connect over the web transport, stream synthetic
// hand frames from pointer/keyboard input at 60 Hz, render live state.

import { FrameReader, Message, PROTOCOL_VERSION, encodeFrame } from "./protocol.js";
import { RobotModelDoc } from "./robot.js";
import { RenderState, SceneDoc, Viewport, drawFrame } from "./render.js";
import {
  HandInput,
  applyMessage,
  connectionChanged,
  displayedOutput,
  initialViewState,
  inputToHandFrame,
  normalizeQuat,
} from "./state.js";

const SEND_HZ = 60;

const canvas = document.getElementById("view") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const statusEl = document.getElementById("status")!;
const recordBtn = document.getElementById("record") as HTMLButtonElement;
const discardBtn = document.getElementById("discard") as HTMLButtonElement;
const scrubEl = document.getElementById("scrub") as HTMLInputElement;
const liveBtn = document.getElementById("live") as HTMLButtonElement;

let view = initialViewState();
const viewport = new Viewport();
let model: RobotModelDoc | null = null;
let scene: SceneDoc | null = null;
let seq = 0;
let socket: WebSocket | null = null;
const reader = new FrameReader();

const input: HandInput = {
  position: [0.5, 0.0, 0.35],
  yaw: 0,
  pitch: 0,
  pinch: 1.0,
  headset: {
    position: [-0.45, 0, 1.0],
    // looking at the workspace center, camera convention (+z forward, +y down)
    orientation: normalizeQuat([0.2706, 0.6533, 0.2706, 0.6533]),
  },
};

function send(msg: Omit<Message, "seq">): void {
  if (!socket || socket.readyState !== WebSocket.OPEN) return;
  seq += 1;
  socket.send(encodeFrame({ ...msg, seq } as Message));
}

function connect(): void {
  view = connectionChanged(view, "connecting");
  const url = `ws://${location.host}/ws`;
  socket = new WebSocket(url);
  socket.binaryType = "arraybuffer";
  socket.onopen = () => {
    send({ type: "hello", version: PROTOCOL_VERSION, client: "console" } as Message);
    view = connectionChanged(view, "connected");
  };
  socket.onmessage = (ev: MessageEvent) => {
    for (const msg of reader.push(new Uint8Array(ev.data as ArrayBuffer))) {
      const before = view.haptic;
      view = applyMessage(view, msg);
      if (!before && view.haptic && "vibrate" in navigator) {
        navigator.vibrate?.(50);
      }
    }
  };
  socket.onclose = () => {
    view = connectionChanged(view, "disconnected");
    setTimeout(connect, 1000);
  };
  socket.onerror = () => socket?.close();
}

async function loadStatic(): Promise<void> {
  model = (await (await fetch("/model")).json()) as RobotModelDoc;
  scene = (await (await fetch("/scene")).json()) as SceneDoc;
}

// -- input handling ---------------------------------------------------------

let dragging = false;
let rotating = false;
canvas.addEventListener("pointerdown", (ev) => {
  dragging = true;
  rotating = ev.shiftKey;
  canvas.setPointerCapture(ev.pointerId);
});
canvas.addEventListener("pointerup", () => (dragging = false));
canvas.addEventListener("pointermove", (ev) => {
  if (!dragging) return;
  if (rotating) {
    input.yaw -= ev.movementX * 0.01;
    input.pitch += ev.movementY * 0.01;
  } else {
    // drag in the screen plane maps to world y (horizontal) and z (vertical)
    input.position = [
      input.position[0],
      Math.max(-0.4, Math.min(0.4, input.position[1] + ev.movementX * 0.002)),
      Math.max(0.05, Math.min(0.6, input.position[2] - ev.movementY * 0.002)),
    ];
  }
});
canvas.addEventListener("wheel", (ev) => {
  // wheel moves the hand toward/away from the robot (world x)
  input.position = [
    Math.max(0.25, Math.min(0.85, input.position[0] - ev.deltaY * 0.0005)),
    input.position[1],
    input.position[2],
  ];
  ev.preventDefault();
});
window.addEventListener("keydown", (ev) => {
  if (ev.key === "q") input.pinch = Math.max(0, input.pinch - 0.08);
  if (ev.key === "e") input.pinch = Math.min(1, input.pinch + 0.08);
});

recordBtn.addEventListener("click", () => {
  if (view.recording.active) {
    send({ type: "record_stop", mode: "finalize" } as Message);
  } else {
    send({ type: "record_start", session_id: null } as Message);
  }
});
discardBtn.addEventListener("click", () => {
  if (view.recording.active) send({ type: "record_stop", mode: "discard" } as Message);
});
scrubEl.addEventListener("input", () => {
  const frac = Number(scrubEl.value) / Number(scrubEl.max);
  view = { ...view, scrubIndex: Math.floor(frac * Math.max(0, view.history.length - 1)) };
});
liveBtn.addEventListener("click", () => {
  view = { ...view, scrubIndex: null };
});

// -- streaming & rendering loops ---------------------------------------------

const t0 = performance.now();
setInterval(() => {
  if (!socket || socket.readyState !== WebSocket.OPEN || view.scrubIndex !== null) return;
  const frame = inputToHandFrame(input, (performance.now() - t0) / 1000);
  send({ type: "hand_frame", frame } as Message);
}, 1000 / SEND_HZ);

function renderLoop(): void {
  const out = displayedOutput(view);
  const renderState: RenderState = {
    model,
    scene,
    output: out,
    handPosition: input.position,
    overlayColor: out ? out.display.color : "#444444",
    overlayBlinking: out ? out.display.blinking : false,
    blinkPhase: out ? out.blink_phase : 0,
    hapticActive: out ? out.display.haptic : false,
  };
  drawFrame(ctx, viewport, renderState);
  const rec = view.recording.active ? ` REC ${view.recording.sessionId}` : "";
  const scrub = view.scrubIndex !== null ? ` [scrub ${view.scrubIndex}/${view.history.length}]` : "";
  statusEl.textContent =
    `${view.connection}${rec}${scrub} | pinch ${(input.pinch).toFixed(2)} | ` +
    `dropped ${view.droppedFrames} | stale ${view.staleDropped}` +
    (view.lastError ? ` | ${view.lastError}` : "");
  recordBtn.textContent = view.recording.active ? "stop + save" : "record";
  requestAnimationFrame(renderLoop);
}

loadStatic().then(connect);
requestAnimationFrame(renderLoop);
