// Canvas rendering: top-down arena with color-coded agents, trails, goal
// markers, a q-value bar panel, and a distance sparkline for the
// inspected agent. The 2D context is injected so tests can record calls.

import type { ViewState } from "./view.js";

export const AGENT_COLORS = [
  "#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4",
  "#46f0f0", "#f032e6", "#bcf60c", "#fabebe", "#008080",
];

export interface Ctx2D {
  canvas: { width: number; height: number };
  clearRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  stroke(): void;
  fill(): void;
  fillText(text: string, x: number, y: number): void;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  fillStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  font: string;
  globalAlpha: number;
}

export interface Mapper {
  toPx(p: [number, number]): [number, number];
  scale: number;
}

/** World (meters, y up) -> canvas pixels (y down), centered, 5% margin. */
export function makeMapper(ctx: Ctx2D, arenaSide: number): Mapper {
  const size = Math.min(ctx.canvas.width, ctx.canvas.height);
  const scale = (size * 0.9) / arenaSide;
  const cx = ctx.canvas.width / 2;
  const cy = ctx.canvas.height / 2;
  return {
    scale,
    toPx: ([x, y]) => [cx + x * scale, cy - y * scale],
  };
}

export function renderArena(ctx: Ctx2D, state: ViewState): void {
  ctx.clearRect(0, 0, ctx.canvas.width, ctx.canvas.height);
  if (!state.session) return;
  const side = state.session.arena_side;
  const map = makeMapper(ctx, side);
  const [left, top] = map.toPx([-side / 2, side / 2]);
  ctx.globalAlpha = 1;
  ctx.lineWidth = 2;
  ctx.strokeStyle = "#444";
  ctx.strokeRect(left, top, side * map.scale, side * map.scale);

  state.agents.forEach((agent, i) => {
    const color = AGENT_COLORS[i % AGENT_COLORS.length]!;
    // trail
    if (agent.trail.length > 1) {
      ctx.beginPath();
      const [x0, y0] = map.toPx(agent.trail[0]!);
      ctx.moveTo(x0, y0);
      for (const p of agent.trail.slice(1)) {
        const [x, y] = map.toPx(p);
        ctx.lineTo(x, y);
      }
      ctx.globalAlpha = 0.35;
      ctx.lineWidth = 2;
      ctx.strokeStyle = color;
      ctx.stroke();
      ctx.globalAlpha = 1;
    }
    // goal marker (filled disk), drawn from the server-decoded goal
    if (agent.goal) {
      const [gx, gy] = map.toPx(agent.goal);
      ctx.beginPath();
      ctx.arc(gx, gy, 0.09 * map.scale, 0, 2 * Math.PI);
      ctx.fillStyle = color;
      ctx.globalAlpha = 0.5;
      ctx.fill();
      ctx.globalAlpha = 1;
    }
    // agent body (hollow disk) at the exact last-record position
    const [x, y] = map.toPx(agent.p);
    ctx.beginPath();
    ctx.arc(x, y, 0.13 * map.scale, 0, 2 * Math.PI);
    ctx.lineWidth = 3;
    ctx.strokeStyle = agent.collision ? "#ff0000" : color;
    ctx.stroke();
    ctx.fillStyle = color;
    ctx.font = "12px sans-serif";
    ctx.fillText(String(i), x + 0.16 * map.scale, y);
  });
}

export function renderQPanel(ctx: Ctx2D, state: ViewState, agent: number): void {
  ctx.clearRect(0, 0, ctx.canvas.width, ctx.canvas.height);
  const view = state.agents[agent];
  if (!view?.q) {
    ctx.fillStyle = "#888";
    ctx.font = "12px sans-serif";
    ctx.fillText("no q values (agent untasked)", 8, 16);
    return;
  }
  const labels = ["E", "NE", "N", "NW", "W", "SW", "S", "SE", "stop"];
  const w = ctx.canvas.width / 9;
  const qMin = Math.min(...view.q);
  const qMax = Math.max(...view.q);
  const span = Math.max(qMax - qMin, 1e-6);
  const best = view.q.indexOf(qMax);
  view.q.forEach((q, a) => {
    const h = Math.max(2, ((q - qMin) / span) * (ctx.canvas.height - 24));
    ctx.fillStyle = a === best ? "#3cb44b" : "#4363d8";
    ctx.fillRect(a * w + 2, ctx.canvas.height - 14 - h, w - 4, h);
    ctx.fillStyle = "#333";
    ctx.font = "10px sans-serif";
    ctx.fillText(labels[a]!, a * w + 4, ctx.canvas.height - 2);
  });
}

export function renderSparkline(ctx: Ctx2D, state: ViewState, agent: number): void {
  ctx.clearRect(0, 0, ctx.canvas.width, ctx.canvas.height);
  const hist = state.agents[agent]?.distanceHistory ?? [];
  if (hist.length < 2) return;
  const max = Math.max(...hist, 0.5);
  ctx.beginPath();
  hist.forEach((d, i) => {
    const x = (i / (hist.length - 1)) * ctx.canvas.width;
    const y = ctx.canvas.height - (d / max) * (ctx.canvas.height - 4) - 2;
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  ctx.lineWidth = 1.5;
  ctx.strokeStyle = "#4363d8";
  ctx.stroke();
  // success threshold line at 0.25 m
  const ty = ctx.canvas.height - (0.25 / max) * (ctx.canvas.height - 4) - 2;
  ctx.beginPath();
  ctx.moveTo(0, ty);
  ctx.lineTo(ctx.canvas.width, ty);
  ctx.strokeStyle = "#e6194b";
  ctx.lineWidth = 0.5;
  ctx.stroke();
}
