// Pure view-state reducers. The console never simulates anything on the
// client: rendered positions come verbatim from the last received record,
// trails are a bounded history of those records.

import type { SessionInfo, TickRecord } from "./types.js";

export const TRAIL_LIMIT = 200;

export interface AgentView {
  p: [number, number];
  v: [number, number];
  action: number;
  q: number[] | null;
  task: string | null;
  goal: [number, number] | null;
  distance: number | null;
  collision: boolean;
  trail: [number, number][];
  distanceHistory: number[];
}

export interface ViewState {
  session: SessionInfo | null;
  connected: boolean;
  lastTick: number | null;
  agents: AgentView[];
}

export function initialView(): ViewState {
  return { session: null, connected: false, lastTick: null, agents: [] };
}

export function applyHello(state: ViewState, info: SessionInfo): ViewState {
  const agents: AgentView[] = Array.from({ length: info.n_agents }, (_, i) => ({
    p: [0, 0],
    v: [0, 0],
    action: 8,
    q: null,
    task: info.tasks[i] ?? null,
    goal: null,
    distance: null,
    collision: false,
    trail: [],
    distanceHistory: [],
  }));
  return { session: info, connected: true, lastTick: null, agents };
}

export function applyTick(state: ViewState, record: TickRecord): ViewState {
  if (state.lastTick !== null && record.tick <= state.lastTick) {
    return state; // stale or duplicate: the render reflects the latest only
  }
  const agents = record.agents.map((a, i) => {
    const prev = state.agents[i];
    const trail = prev ? [...prev.trail, a.p] : [a.p];
    if (trail.length > TRAIL_LIMIT) trail.splice(0, trail.length - TRAIL_LIMIT);
    const distanceHistory = prev ? [...prev.distanceHistory] : [];
    if (a.distance !== null) {
      distanceHistory.push(a.distance);
      if (distanceHistory.length > TRAIL_LIMIT) {
        distanceHistory.splice(0, distanceHistory.length - TRAIL_LIMIT);
      }
    }
    return {
      p: a.p,
      v: a.v,
      action: a.action,
      q: a.q,
      task: a.task,
      goal: a.goal,
      distance: a.distance,
      collision: a.collision,
      trail,
      distanceHistory,
    } satisfies AgentView;
  });
  return { ...state, lastTick: record.tick, agents };
}

export function applyDisconnect(state: ViewState): ViewState {
  return { ...state, connected: false };
}

/** Optimistic task annotation after a command ack, pending the next tick. */
export function applyTaskAck(state: ViewState, agent: number, text: string,
                             goal: [number, number] | null): ViewState {
  const agents = state.agents.map((a, i) =>
    i === agent ? { ...a, task: text, goal } : a);
  return { ...state, agents };
}
