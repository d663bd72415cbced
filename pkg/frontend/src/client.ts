// HTTP + SSE client for the session service.

import { SSEParser } from "./sse.js";
import type { SessionInfo, TaskAck, TickRecord } from "./types.js";

export interface StreamHandlers {
  onHello?: (info: SessionInfo) => void;
  onTick: (record: TickRecord) => void;
  onClose?: () => void;
}

export class ConsoleClient {
  constructor(readonly baseUrl: string) {}

  private async post<T>(path: string, body?: unknown): Promise<T> {
    const resp = await fetch(this.baseUrl + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body ?? {}),
    });
    const payload = (await resp.json()) as T & { error?: string };
    if (!resp.ok) {
      throw new Error(payload.error ?? `HTTP ${resp.status}`);
    }
    return payload;
  }

  createSession(opts: { n_agents?: number; seed?: number; tick_period?: number } = {}):
      Promise<SessionInfo> {
    return this.post<SessionInfo>("/sessions", opts);
  }

  getSession(id: string): Promise<SessionInfo> {
    return fetch(`${this.baseUrl}/sessions/${id}`).then((r) => r.json());
  }

  assignTask(id: string, agent: number, text: string): Promise<TaskAck> {
    return this.post<TaskAck>(`/sessions/${id}/agents/${agent}/task`, { text });
  }

  pause(id: string): Promise<{ ok: boolean }> {
    return this.post(`/sessions/${id}/pause`);
  }

  resume(id: string): Promise<{ ok: boolean }> {
    return this.post(`/sessions/${id}/resume`);
  }

  /**
   * Subscribe to the tick stream. Returns an abort function.
   * Implemented over fetch body streaming rather than EventSource so the
   * identical code path runs under node in tests.
   */
  openStream(id: string, handlers: StreamHandlers): () => void {
    const controller = new AbortController();
    const parser = new SSEParser();
    (async () => {
      try {
        const resp = await fetch(`${this.baseUrl}/sessions/${id}/stream`, {
          signal: controller.signal,
        });
        if (!resp.ok || resp.body === null) {
          throw new Error(`stream failed: HTTP ${resp.status}`);
        }
        const reader = resp.body.getReader();
        const decoder = new TextDecoder();
        for (;;) {
          const { done, value } = await reader.read();
          if (done) break;
          for (const msg of parser.push(decoder.decode(value, { stream: true }))) {
            if (msg.event === "hello") {
              handlers.onHello?.(JSON.parse(msg.data).hello as SessionInfo);
            } else {
              handlers.onTick(JSON.parse(msg.data) as TickRecord);
            }
          }
        }
      } catch (err) {
        if (!controller.signal.aborted) throw err;
      } finally {
        handlers.onClose?.();
      }
    })();
    return () => controller.abort();
  }
}
