// Wire types for the session service.

export interface AgentRecord {
  i: number;
  p: [number, number];
  v: [number, number];
  action: number;
  q: number[] | null;
  task: string | null;
  goal: [number, number] | null;
  distance: number | null;
  collision: boolean;
}

export interface TickRecord {
  session: string;
  tick: number;
  t: number;
  agents: AgentRecord[];
}

export interface SessionInfo {
  id: string;
  n_agents: number;
  tick: number;
  paused: boolean;
  tick_period: number;
  arena_side: number;
  k: number;
  tasks: (string | null)[];
}

export interface TaskAck {
  ok: boolean;
  agent: number;
  text: string;
  goal: [number, number] | null;
}
