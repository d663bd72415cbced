"""Long-running policy service: sessions, task assignment, live tick stream.

Operators create a session (a simulated team driven by a trained policy),
assign per-agent natural-language tasks at any time, and subscribe to a
stream of per-tick state records.  Task reassignments are queued and
swapped in atomically at the next tick boundary, so no tick ever mixes an
old and new embedding for one agent.

HTTP surface (JSON everywhere):

* ``POST /sessions`` ``{n_agents?, seed?, tick_period?}`` -> ``{id, ...}``
* ``POST /sessions/{id}/agents/{i}/task`` ``{text}`` -> ``{ok, goal}``
* ``POST /sessions/{id}/pause`` / ``.../resume``
* ``GET  /sessions/{id}`` -> status snapshot
* ``GET  /sessions/{id}/stream`` -> Server-Sent Events, one record per tick

Untasked agents hold the stop action — the policy was never trained on a
null task, so it is not consulted for them.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
import uuid
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .corpus import TaskSpec, find_location, goal_coordinates
from .data import STOP_ACTION, ArenaConfig
from .embeddings import EmbeddingStore, SyntheticEmbedder
from .policy import PolicyInference, boltzmann_action
from .sim import KinematicEnv, spawn_team

log = logging.getLogger(__name__)


class UnknownTaskError(ValueError):
    pass


@dataclass
class TaskResolver:
    """Maps free text to (embedding, goal) via the session's provider.

    Lookup order: exact text in the store, then the synthetic embedder
    (when configured) grounding the text by its location phrase.  A store
    without a fallback embedder is a file-only provider: unseen text is an
    error that names the available modes.
    """

    store: EmbeddingStore | None = None
    embedder: SyntheticEmbedder | None = None
    goals: dict[str, tuple[float, float]] = field(default_factory=dict)
    k: float = 1.1

    def resolve(self, text: str) -> tuple[np.ndarray, tuple[float, float] | None]:
        goal = self.goals.get(text)
        if goal is None:
            location = find_location(text)
            if location is not None:
                g = goal_coordinates(location, self.k)
                goal = (float(g[0]), float(g[1]))
        if self.store is not None and text in self.store:
            return self.store.get(text), goal
        if self.embedder is not None:
            return self.embedder.embed_text(text), goal
        modes = []
        if self.store is not None:
            modes.append(f"file store ({len(self.store)} known texts)")
        raise UnknownTaskError(
            f"no embedding for {text!r}; available provider modes: "
            f"{', '.join(modes) or 'none'} — configure a synthetic or remote "
            f"provider for unseen text")

    @classmethod
    def for_corpus(cls, tasks: list[TaskSpec], store: EmbeddingStore | None,
                   embedder: SyntheticEmbedder | None, k: float = 1.1):
        return cls(store=store, embedder=embedder, k=k,
                   goals={t.text: t.goal for t in tasks})


@dataclass
class _Agent:
    task_text: str | None = None
    z: np.ndarray | None = None
    goal: tuple[float, float] | None = None


class Session:
    """One simulated team on its own tick thread."""

    def __init__(self, session_id: str, engine: PolicyInference,
                 resolver: TaskResolver, env: KinematicEnv, n_agents: int,
                 seed: int, tick_period: float, temperature: float = 0.01):
        self.id = session_id
        self.engine = engine
        self.resolver = resolver
        self.env = env
        self.n_agents = n_agents
        self.tick_period = tick_period
        self.temperature = temperature
        self.rng = np.random.default_rng(seed)
        self.obs = np.zeros((n_agents, 4))
        self.obs[:, :2] = spawn_team(n_agents, env.arena, self.rng)
        self.agents = [_Agent() for _ in range(n_agents)]
        self.tick_count = 0
        self.paused = False
        self._pending: queue.Queue[tuple[int, str, np.ndarray, tuple | None]] = queue.Queue()
        self._subscribers: list[queue.Queue] = []
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True,
                                        name=f"session-{session_id}")
        self._thread.start()

    # -- control plane ----------------------------------------------------

    def assign_task(self, agent: int, text: str) -> dict:
        if not 0 <= agent < self.n_agents:
            raise IndexError(f"agent index {agent} out of range")
        z, goal = self.resolver.resolve(text)  # may raise UnknownTaskError
        self._pending.put((agent, text, z, goal))
        return {"ok": True, "agent": agent, "text": text, "goal": goal}

    def set_paused(self, paused: bool) -> None:
        self.paused = paused

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue(maxsize=1024)
        with self._lock:
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def close(self) -> None:
        self._stop.set()
        self._thread.join(timeout=2 * self.tick_period + 1)

    def snapshot(self) -> dict:
        return {
            "id": self.id, "n_agents": self.n_agents, "tick": self.tick_count,
            "paused": self.paused, "tick_period": self.tick_period,
            "arena_side": self.env.arena.side, "k": self.resolver.k,
            "tasks": [a.task_text for a in self.agents],
        }

    # -- tick loop ---------------------------------------------------------

    def tick(self) -> dict:
        """Apply queued task swaps, act, step the world, emit one record."""
        while True:
            try:
                agent, text, z, goal = self._pending.get_nowait()
            except queue.Empty:
                break
            self.agents[agent] = _Agent(task_text=text, z=z, goal=goal)

        tasked = [i for i, a in enumerate(self.agents) if a.z is not None]
        actions = np.full(self.n_agents, STOP_ACTION, dtype=np.int64)
        q_rows: list[list[float] | None] = [None] * self.n_agents
        if tasked:
            z = np.stack([np.zeros(self.engine.z_dim, np.float32)
                          if a.z is None else a.z for a in self.agents])
            q = self.engine.team_q(self.obs.astype(np.float32), z)
            for i in tasked:
                actions[i] = boltzmann_action(q[i], self.temperature, self.rng)
                q_rows[i] = [float(v) for v in q[i]]
        new_obs = self.env.step_team(self.obs, actions, self.rng)
        half = self.env.arena.half
        wall = np.any(np.abs(new_obs[:, :2]) > half, axis=1)
        new_obs[wall] = self.obs[wall]  # refuse to walk through walls
        new_obs[wall, 2:] = 0.0
        self.obs = new_obs

        record = {
            "session": self.id, "tick": self.tick_count,
            "t": self.tick_count * self.tick_period,
            "agents": [],
        }
        for i, agent in enumerate(self.agents):
            dist = None
            if agent.goal is not None:
                dist = float(np.linalg.norm(self.obs[i, :2] - np.array(agent.goal)))
            record["agents"].append({
                "i": i,
                "p": self.obs[i, :2].tolist(), "v": self.obs[i, 2:].tolist(),
                "action": int(actions[i]), "q": q_rows[i],
                "task": agent.task_text, "goal": list(agent.goal) if agent.goal else None,
                "distance": dist, "collision": bool(wall[i]),
            })
        self.tick_count += 1
        with self._lock:
            subscribers = list(self._subscribers)
        for q_out in subscribers:
            try:
                q_out.put_nowait(record)
            except queue.Full:
                pass  # slow consumer; it will observe a gap and may resubscribe
        return record

    def _run(self) -> None:
        while not self._stop.wait(self.tick_period):
            if not self.paused:
                try:
                    self.tick()
                except Exception:
                    log.exception("session %s tick failed", self.id)


class SessionServer:
    """HTTP front over a session registry; see module docstring for routes."""

    def __init__(self, engine: PolicyInference, resolver: TaskResolver,
                 env: KinematicEnv | None = None, host: str = "127.0.0.1",
                 port: int = 0, default_agents: int = 3,
                 default_tick_period: float = 1.0, max_sessions: int = 8):
        self.engine = engine
        self.resolver = resolver
        self.env = env or KinematicEnv(arena=ArenaConfig(radius=0.25))
        self.default_agents = default_agents
        self.default_tick_period = default_tick_period
        self.max_sessions = max_sessions
        self.sessions: dict[str, Session] = {}
        self._httpd = ThreadingHTTPServer((host, port), _make_handler(self))
        self._httpd.daemon_threads = True
        self._serve_thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._httpd.server_address[:2]

    def create_session(self, n_agents: int | None = None, seed: int = 0,
                       tick_period: float | None = None) -> Session:
        if len(self.sessions) >= self.max_sessions:
            raise RuntimeError(f"session limit ({self.max_sessions}) reached")
        sid = uuid.uuid4().hex[:12]
        session = Session(sid, self.engine, self.resolver, self.env,
                          n_agents or self.default_agents, seed,
                          tick_period or self.default_tick_period)
        self.sessions[sid] = session
        return session

    def start(self) -> None:
        self._serve_thread = threading.Thread(
            target=self._httpd.serve_forever, daemon=True, name="session-http")
        self._serve_thread.start()

    def serve_forever(self) -> None:
        self._httpd.serve_forever()

    def shutdown(self) -> None:
        for session in self.sessions.values():
            session.close()
        self._httpd.shutdown()
        self._httpd.server_close()


def _make_handler(server: SessionServer):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            log.debug("http: " + fmt, *args)

        def _json(self, code: int, payload: dict) -> None:
            body = json.dumps(payload).encode()
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(body)

        def _body(self) -> dict:
            length = int(self.headers.get("Content-Length") or 0)
            if not length:
                return {}
            try:
                return json.loads(self.rfile.read(length))
            except json.JSONDecodeError:
                return {}

        def _session(self, sid: str) -> Session | None:
            session = server.sessions.get(sid)
            if session is None:
                self._json(404, {"error": f"no session {sid}"})
            return session

        def do_POST(self):
            parts = [p for p in self.path.split("/") if p]
            try:
                if parts == ["sessions"]:
                    body = self._body()
                    session = server.create_session(
                        n_agents=body.get("n_agents"),
                        seed=int(body.get("seed", 0)),
                        tick_period=body.get("tick_period"))
                    self._json(200, session.snapshot())
                elif len(parts) == 5 and parts[0] == "sessions" and parts[2] == "agents" \
                        and parts[4] == "task":
                    session = self._session(parts[1])
                    if session is None:
                        return
                    text = self._body().get("text", "")
                    self._json(200, session.assign_task(int(parts[3]), text))
                elif len(parts) == 3 and parts[0] == "sessions" \
                        and parts[2] in ("pause", "resume"):
                    session = self._session(parts[1])
                    if session is None:
                        return
                    session.set_paused(parts[2] == "pause")
                    self._json(200, {"ok": True, "paused": session.paused})
                else:
                    self._json(404, {"error": f"no route {self.path}"})
            except (UnknownTaskError, IndexError, ValueError, RuntimeError) as e:
                self._json(400, {"error": str(e)})

        def do_GET(self):
            parts = [p for p in self.path.split("/") if p]
            if len(parts) == 2 and parts[0] == "sessions":
                session = self._session(parts[1])
                if session is not None:
                    self._json(200, session.snapshot())
            elif len(parts) == 3 and parts[0] == "sessions" and parts[2] == "stream":
                session = server.sessions.get(parts[1])
                if session is None:
                    self._json(404, {"error": f"no session {parts[1]}"})
                    return
                self._stream(session)
            else:
                self._json(404, {"error": f"no route {self.path}"})

        def _stream(self, session: Session) -> None:
            self.send_response(200)
            self.send_header("Content-Type", "text/event-stream")
            self.send_header("Cache-Control", "no-cache")
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            hello = json.dumps({"hello": session.snapshot()})
            q = session.subscribe()
            try:
                self.wfile.write(f"event: hello\ndata: {hello}\n\n".encode())
                self.wfile.flush()
                while True:
                    try:
                        record = q.get(timeout=15 * session.tick_period + 5)
                    except queue.Empty:
                        self.wfile.write(b": keepalive\n\n")
                        self.wfile.flush()
                        continue
                    self.wfile.write(f"data: {json.dumps(record)}\n\n".encode())
                    self.wfile.flush()
            except (BrokenPipeError, ConnectionResetError):
                pass
            finally:
                session.unsubscribe(q)

    return Handler
