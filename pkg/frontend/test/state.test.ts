import { describe, expect, it } from "vitest";
import { EngineOutputWire } from "../src/protocol.js";
import {
  PINCH_MAX_M,
  applyEngineOutput,
  applyMessage,
  displayedOutput,
  initialViewState,
  inputToHandFrame,
} from "../src/state.js";
import { linkPoses } from "../src/robot.js";

function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function makeOutput(rnd: () => number, t: number): EngineOutputWire {
  const colors = ["red", "yellow", "blue"] as const;
  const color = colors[Math.floor(rnd() * 3)];
  return {
    timestamp: t,
    joint_angles: [rnd(), rnd()],
    gripper: rnd() < 0.5 ? "open" : "closed",
    ee_pose: { position: [rnd(), rnd(), rnd()], orientation: [1, 0, 0, 0] },
    events: [],
    display: { color, blinking: color === "blue", haptic: color === "blue" },
    lagging: color === "yellow",
    blink_phase: Math.floor(t * 4),
  };
}

describe("pinch mapping", () => {
  const headset = { position: [0, 0, 1] as [number, number, number], orientation: [1, 0, 0, 0] as [number, number, number, number] };

  it("endpoint 0 gives exactly 0.0 m separation", () => {
    const frame = inputToHandFrame({ position: [0.5, 0, 0.3], yaw: 0, pitch: 0, pinch: 0, headset }, 1.0);
    const [ix, iy, iz] = frame.fingertips["index"];
    const [tx, ty, tz] = frame.fingertips["thumb"];
    expect(Math.hypot(ix - tx, iy - ty, iz - tz)).toBe(0.0);
  });

  it("endpoint 1 gives exactly 0.12 m separation", () => {
    const frame = inputToHandFrame({ position: [0.5, 0, 0.3], yaw: 0, pitch: 0, pinch: 1, headset }, 1.0);
    const [ix, iy, iz] = frame.fingertips["index"];
    const [tx, ty, tz] = frame.fingertips["thumb"];
    expect(Math.hypot(ix - tx, iy - ty, iz - tz)).toBe(PINCH_MAX_M);
    expect(PINCH_MAX_M).toBe(0.12);
  });

  it("separation is linear in the pinch value", () => {
    for (const p of [0.1, 0.25, 0.5, 0.75]) {
      const frame = inputToHandFrame({ position: [0.5, 0, 0.3], yaw: 0, pitch: 0, pinch: p, headset }, 1.0);
      const [ix, iy, iz] = frame.fingertips["index"];
      const [tx, ty, tz] = frame.fingertips["thumb"];
      expect(Math.hypot(ix - tx, iy - ty, iz - tz)).toBeCloseTo(p * PINCH_MAX_M, 12);
    }
  });

  it("timestamps pass through the provided clock", () => {
    const f1 = inputToHandFrame({ position: [0.5, 0, 0.3], yaw: 0, pitch: 0, pinch: 1, headset }, 10.0);
    const f2 = inputToHandFrame({ position: [0.5, 0, 0.3], yaw: 0, pitch: 0, pinch: 1, headset }, 10.0 + 1 / 60);
    expect(f2.timestamp - f1.timestamp).toBeCloseTo(1 / 60, 12);
  });
});

describe("overlay reducer", () => {
  it("final overlay equals the last applied (highest-seq) output", () => {
    const rnd = mulberry32(42);
    for (let trial = 0; trial < 50; trial++) {
      let state = initialViewState();
      const n = 1 + Math.floor(rnd() * 40);
      const ordered = Array.from({ length: n }, (_, i) => ({
        seq: i + 1,
        dropped: Math.floor(rnd() * 2),
        output: makeOutput(rnd, i / 60),
      }));
      // shuffle delivery; stale ones must be dropped
      const delivery = [...ordered];
      for (let i = delivery.length - 1; i > 0; i--) {
        const j = Math.floor(rnd() * (i + 1));
        [delivery[i], delivery[j]] = [delivery[j], delivery[i]];
      }
      let maxSeqSeen = 0;
      let expected: EngineOutputWire | null = null;
      for (const msg of delivery) {
        state = applyEngineOutput(state, msg);
        if (msg.seq > maxSeqSeen) {
          maxSeqSeen = msg.seq;
          expected = msg.output;
        }
      }
      expect(state.latestOutput).toEqual(expected);
      expect(state.overlay.color).toBe(expected!.display.color);
      expect(state.overlay.blinkPhase).toBe(expected!.blink_phase);
      expect(state.haptic).toBe(expected!.display.haptic);
    }
  });

  it("stale messages increment the stale counter and change nothing else", () => {
    let state = initialViewState();
    const rnd = mulberry32(1);
    const a = { seq: 5, dropped: 0, output: makeOutput(rnd, 0) };
    const b = { seq: 3, dropped: 0, output: makeOutput(rnd, 1) };
    state = applyEngineOutput(state, a);
    const afterA = state;
    state = applyEngineOutput(state, b);
    expect(state.staleDropped).toBe(1);
    expect(state.latestOutput).toEqual(afterA.latestOutput);
    expect(state.overlay).toEqual(afterA.overlay);
  });

  it("accumulates server-reported dropped counts", () => {
    let state = initialViewState();
    const rnd = mulberry32(2);
    state = applyEngineOutput(state, { seq: 1, dropped: 2, output: makeOutput(rnd, 0) });
    state = applyEngineOutput(state, { seq: 2, dropped: 3, output: makeOutput(rnd, 1) });
    expect(state.droppedFrames).toBe(5);
  });

  it("record acks toggle recording state", () => {
    let state = initialViewState();
    state = applyMessage(state, { type: "record_start", seq: 1, session_id: "0007" });
    expect(state.recording).toEqual({ active: true, sessionId: "0007" });
    state = applyMessage(state, { type: "record_stop", seq: 2, mode: "finalize", session_id: "0007" });
    expect(state.recording.active).toBe(false);
  });

  it("scrubbing shows history, live shows latest", () => {
    let state = initialViewState();
    const rnd = mulberry32(3);
    const outs = Array.from({ length: 10 }, (_, i) => makeOutput(rnd, i / 60));
    outs.forEach((o, i) => {
      state = applyEngineOutput(state, { seq: i + 1, dropped: 0, output: o });
    });
    expect(displayedOutput(state)).toEqual(outs[9]);
    state = { ...state, scrubIndex: 4 };
    expect(displayedOutput(state)).toEqual(outs[4]);
    state = { ...state, scrubIndex: null };
    expect(displayedOutput(state)).toEqual(outs[9]);
  });
});

describe("robot forward kinematics", () => {
  it("poses a two-link planar chain correctly", () => {
    const model = {
      name: "planar2",
      base_link: "base",
      joints: [
        { name: "j1", parent: "base", child: "l1", axis: [0, 0, 1] as [number, number, number],
          origin: { position: [0, 0, 0] as [number, number, number], orientation: [1, 0, 0, 0] as [number, number, number, number] } },
        { name: "j2", parent: "l1", child: "l2", axis: [0, 0, 1] as [number, number, number],
          origin: { position: [0.5, 0, 0] as [number, number, number], orientation: [1, 0, 0, 0] as [number, number, number, number] } },
      ],
      links: [
        { name: "base", spheres: [] },
        { name: "l1", spheres: [] },
        { name: "l2", spheres: [{ center: [0.5, 0, 0] as [number, number, number], radius: 0.05 }] },
      ],
    };
    const poses = linkPoses(model, [Math.PI / 2, -Math.PI / 2]);
    const l2 = poses.get("l2")!;
    expect(l2.position[0]).toBeCloseTo(0, 12);
    expect(l2.position[1]).toBeCloseTo(0.5, 12);
    // tip = l2 frame + rotated (0.5, 0, 0): total rotation is identity
    const tipX = l2.position[0] + l2.rotation[0] * 0.5;
    const tipY = l2.position[1] + l2.rotation[3] * 0.5;
    expect(tipX).toBeCloseTo(0.5, 12);
    expect(tipY).toBeCloseTo(0.5, 12);
  });
});
