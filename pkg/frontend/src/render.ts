// Lightweight software 3D view: fixed orbit camera, voxel boxes for the
// scene (exactly what collision checking sees) and circles for the robot's
// collision spheres. No GPU dependencies keeps the console portable.

import { EngineOutputWire } from "./protocol.js";
import { RobotModelDoc, worldSpheres } from "./robot.js";

export interface SceneDoc {
  origin: [number, number, number];
  resolution: number;
  occupied: [number, number, number][];
}

const LINK_COLORS = [
  "#e63c3c", "#3ca0e6", "#5ac85a", "#ebaa32", "#aa5adc", "#46d2c8",
  "#e66eb4", "#969696", "#c8c846", "#6478e6", "#78dc8c", "#dc8250",
];

export class Viewport {
  yaw = -2.4;
  pitch = 0.45;
  distance = 1.9;
  target: [number, number, number] = [0.5, 0, 0.25];

  project(p: [number, number, number], w: number, h: number): [number, number, number] {
    const cy = Math.cos(this.yaw);
    const sy = Math.sin(this.yaw);
    const cp = Math.cos(this.pitch);
    const sp = Math.sin(this.pitch);
    const dx = p[0] - this.target[0];
    const dy = p[1] - this.target[1];
    const dz = p[2] - this.target[2];
    // orbit camera: yaw about z, pitch toward the target
    const x1 = cy * dx + sy * dy;
    const y1 = -sy * dx + cy * dy;
    const z1 = dz;
    const x2 = x1 * cp + z1 * sp;
    const z2 = -x1 * sp + z1 * cp;
    const depth = this.distance - x2;
    const f = (0.9 * Math.min(w, h)) / Math.max(0.2, depth);
    return [w / 2 + f * y1, h / 2 - f * z2, depth];
  }
}

export interface RenderState {
  model: RobotModelDoc | null;
  scene: SceneDoc | null;
  output: EngineOutputWire | null;
  handPosition: [number, number, number];
  overlayColor: string;
  overlayBlinking: boolean;
  blinkPhase: number;
  hapticActive: boolean;
}

export function drawFrame(ctx: CanvasRenderingContext2D, view: Viewport, state: RenderState): void {
  const { width: w, height: h } = ctx.canvas;
  ctx.fillStyle = "#101418";
  ctx.fillRect(0, 0, w, h);

  if (state.scene) {
    const res = state.scene.resolution;
    ctx.globalAlpha = 0.55;
    for (const idx of state.scene.occupied) {
      const c: [number, number, number] = [
        state.scene.origin[0] + (idx[0] + 0.5) * res,
        state.scene.origin[1] + (idx[1] + 0.5) * res,
        state.scene.origin[2] + (idx[2] + 0.5) * res,
      ];
      const [x, y, depth] = view.project(c, w, h);
      const s = Math.max(1.2, (res * 0.45 * Math.min(w, h)) / Math.max(0.2, depth));
      ctx.fillStyle = idx[2] * res > 0.05 ? "#b45040" : "#3c4650";
      ctx.fillRect(x - s, y - s, 2 * s, 2 * s);
    }
    ctx.globalAlpha = 1.0;
  }

  if (state.model && state.output) {
    const spheres = worldSpheres(state.model, state.output.joint_angles);
    spheres.sort((a, b) => view.project(b.center, w, h)[2] - view.project(a.center, w, h)[2]);
    for (const s of spheres) {
      const [x, y, depth] = view.project(s.center, w, h);
      const r = (s.radius * 0.9 * Math.min(w, h)) / Math.max(0.2, depth);
      ctx.beginPath();
      ctx.arc(x, y, Math.max(1.5, r), 0, 2 * Math.PI);
      ctx.fillStyle = LINK_COLORS[s.linkIndex % LINK_COLORS.length];
      ctx.fill();
    }
  }

  // hand proxy marker
  {
    const [x, y] = view.project(state.handPosition, w, h);
    ctx.strokeStyle = "#f0f0f0";
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    ctx.moveTo(x - 7, y);
    ctx.lineTo(x + 7, y);
    ctx.moveTo(x, y - 7);
    ctx.lineTo(x, y + 7);
    ctx.stroke();
  }

  // camera-FOV style feedback frame around the viewport
  const visible = !state.overlayBlinking || state.blinkPhase % 2 === 0;
  if (visible) {
    ctx.strokeStyle = state.overlayColor;
    ctx.lineWidth = 10;
    ctx.strokeRect(6, 6, w - 12, h - 12);
  }

  if (state.hapticActive) {
    ctx.fillStyle = "#4090ff";
    ctx.beginPath();
    ctx.arc(30, 30, 11, 0, 2 * Math.PI);
    ctx.fill();
    ctx.fillStyle = "#ffffff";
    ctx.font = "10px sans-serif";
    ctx.fillText("BZZ", 21, 34);
  }
}
