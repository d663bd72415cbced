// DOM wiring: session form, per-agent command bar, live canvas, inspector.

import { ConsoleClient } from "./client.js";
import { renderArena, renderQPanel, renderSparkline, AGENT_COLORS } from "./render.js";
import { applyDisconnect, applyHello, applyTaskAck, applyTick, initialView,
         ViewState } from "./view.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

let state: ViewState = initialView();
let closeStream: (() => void) | null = null;
let inspected = 0;
let dirty = false;

const arenaCtx = el<HTMLCanvasElement>("arena").getContext("2d")!;
const qCtx = el<HTMLCanvasElement>("qpanel").getContext("2d")!;
const sparkCtx = el<HTMLCanvasElement>("sparkline").getContext("2d")!;

function setState(next: ViewState): void {
  state = next;
  if (!dirty) {
    dirty = true;
    requestAnimationFrame(() => {
      dirty = false;
      renderArena(arenaCtx, state);
      renderQPanel(qCtx, state, inspected);
      renderSparkline(sparkCtx, state, inspected);
      renderStatus();
    });
  }
}

function renderStatus(): void {
  el("status").textContent = state.connected
    ? `session ${state.session?.id ?? "?"} | tick ${state.lastTick ?? "-"}`
    : "disconnected";
  const list = el("tasks");
  list.innerHTML = "";
  state.agents.forEach((agent, i) => {
    const item = document.createElement("li");
    item.style.color = AGENT_COLORS[i % AGENT_COLORS.length]!;
    const dist = agent.distance === null ? "" : ` (${agent.distance.toFixed(2)} m)`;
    item.textContent = `agent ${i}: ${agent.task ?? "untasked"}${dist}`;
    if (i === inspected) item.style.fontWeight = "bold";
    item.onclick = () => { inspected = i; setState(state); };
    list.appendChild(item);
  });
}

async function connect(): Promise<void> {
  const base = (el<HTMLInputElement>("server").value || "").replace(/\/$/, "");
  const client = new ConsoleClient(base);
  const agents = parseInt(el<HTMLInputElement>("agents").value || "3", 10);
  const info = await client.createSession({ n_agents: agents });
  closeStream?.();
  setState(applyHello(initialView(), info));
  closeStream = client.openStream(info.id, {
    onHello: (hello) => setState(applyHello(state, hello)),
    onTick: (record) => setState(applyTick(state, record)),
    onClose: () => setState(applyDisconnect(state)),
  });

  el<HTMLButtonElement>("send").onclick = async () => {
    const agent = parseInt(el<HTMLInputElement>("agent-index").value || "0", 10);
    const text = el<HTMLInputElement>("command").value;
    if (!text) return;
    try {
      const ack = await client.assignTask(info.id, agent, text);
      setState(applyTaskAck(state, agent, ack.text, ack.goal));
      el("command-status").textContent = `ok: goal ${JSON.stringify(ack.goal)}`;
    } catch (err) {
      el("command-status").textContent = String(err);
    }
  };
  el<HTMLButtonElement>("pause").onclick = () => client.pause(info.id);
  el<HTMLButtonElement>("resume").onclick = () => client.resume(info.id);
}

el<HTMLButtonElement>("connect").onclick = () => {
  connect().catch((err) => { el("status").textContent = String(err); });
};
