"""Session service: HTTP surface, stream ordering, task-swap atomicity."""

import json
import threading
import time
import urllib.request

import numpy as np
import pytest

from marlnav.corpus import generate_corpus
from marlnav.data import STOP_ACTION, ArenaConfig
from marlnav.embeddings import SyntheticEmbedder
from marlnav.policy import PolicyInference, init_policy_params
from marlnav.server import SessionServer, TaskResolver, UnknownTaskError
from marlnav.sim import KinematicEnv

TICK = 0.03


@pytest.fixture(scope="module")
def server():
    tasks = generate_corpus()
    embedder = SyntheticEmbedder(dim=16, seed=0, noise=0.1)
    store = embedder.build_store(tasks)
    resolver = TaskResolver.for_corpus(tasks, store, embedder)
    params = init_policy_params(np.random.default_rng(0), z_dim=16, hidden=16)
    env = KinematicEnv(arena=ArenaConfig(radius=0.25), noise_std=0.0)
    srv = SessionServer(PolicyInference(params), resolver, env,
                        default_tick_period=TICK)
    srv.start()
    yield srv
    srv.shutdown()


def _post(server, path, payload=None):
    host, port = server.address
    req = urllib.request.Request(
        f"http://{host}:{port}{path}",
        data=json.dumps(payload or {}).encode(),
        headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=5) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as e:
        return e.code, json.loads(e.read())


def _get(server, path):
    host, port = server.address
    try:
        with urllib.request.urlopen(f"http://{host}:{port}{path}", timeout=5) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as e:
        return e.code, json.loads(e.read())


class _StreamReader:
    """Collects SSE records from a session stream on a thread."""

    def __init__(self, server, sid):
        host, port = server.address
        self.resp = urllib.request.urlopen(
            f"http://{host}:{port}/sessions/{sid}/stream", timeout=10)
        self.records = []
        self.hello = None
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _run(self):
        event = None
        try:
            for raw in self.resp:
                line = raw.decode().rstrip("\n")
                if line.startswith("event:"):
                    event = line.split(":", 1)[1].strip()
                elif line.startswith("data:"):
                    payload = json.loads(line.split(":", 1)[1])
                    if event == "hello":
                        self.hello = payload
                    else:
                        self.records.append(payload)
                elif not line:
                    event = None
        except Exception:
            pass

    def close(self):
        self.resp.close()


def _wait(predicate, timeout=5.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        if predicate():
            return True
        time.sleep(TICK / 2)
    return False


def test_create_session_and_snapshot(server):
    status, body = _post(server, "/sessions", {"n_agents": 2, "seed": 4})
    assert status == 200
    assert body["n_agents"] == 2
    status, snap = _get(server, f"/sessions/{body['id']}")
    assert status == 200
    assert snap["tasks"] == [None, None]


def test_untasked_agents_hold_stop_action(server):
    _, body = _post(server, "/sessions", {"n_agents": 2})
    reader = _StreamReader(server, body["id"])
    assert _wait(lambda: len(reader.records) >= 3)
    reader.close()
    for rec in reader.records[:3]:
        for agent in rec["agents"]:
            assert agent["action"] == STOP_ACTION
            assert agent["q"] is None and agent["task"] is None
    # holding stop from a standing start means nobody moves
    p0 = reader.records[0]["agents"][0]["p"]
    p2 = reader.records[2]["agents"][0]["p"]
    assert p0 == p2


def test_stream_order_and_exactly_once(server):
    _, body = _post(server, "/sessions", {"n_agents": 1})
    reader = _StreamReader(server, body["id"])
    assert _wait(lambda: len(reader.records) >= 10)
    reader.close()
    ticks = [r["tick"] for r in reader.records[:10]]
    assert ticks == sorted(ticks)
    assert len(set(ticks)) == len(ticks)
    assert ticks == list(range(ticks[0], ticks[0] + 10))


def test_assign_task_updates_next_tick(server):
    _, body = _post(server, "/sessions", {"n_agents": 2})
    sid = body["id"]
    reader = _StreamReader(server, sid)
    assert _wait(lambda: len(reader.records) >= 2)
    status, ack = _post(server, f"/sessions/{sid}/agents/0/task",
                        {"text": "Agent, go to the north east corner"})
    assert status == 200
    assert ack["goal"] == [1.1, 1.1]
    ack_count = len(reader.records)
    assert _wait(lambda: len(reader.records) >= ack_count + 2)
    reader.close()
    # within one tick of the ack the agent task/goal/q are all live
    after = reader.records[ack_count + 1]["agents"][0]
    assert after["task"] == "Agent, go to the north east corner"
    assert after["goal"] == [1.1, 1.1]
    assert after["q"] is not None and len(after["q"]) == 9
    assert after["distance"] == pytest.approx(
        float(np.linalg.norm(np.array(after["p"]) - np.array([1.1, 1.1]))), abs=1e-9)
    # the other agent is untouched
    assert reader.records[ack_count + 1]["agents"][1]["task"] is None


def test_task_swap_is_atomic_per_tick(server):
    # hammer reassignments while streaming: every record must show a
    # consistent (task, goal) pair, never a half-applied swap
    _, body = _post(server, "/sessions", {"n_agents": 1})
    sid = body["id"]
    texts = ["Agent, go to the west edge", "Agent, go to the east edge"]
    goals = {texts[0]: [-1.1, 0.0], texts[1]: [1.1, 0.0], None: None}
    reader = _StreamReader(server, sid)
    for i in range(12):
        _post(server, f"/sessions/{sid}/agents/0/task", {"text": texts[i % 2]})
        time.sleep(TICK / 3)
    assert _wait(lambda: len(reader.records) >= 8)
    reader.close()
    for rec in reader.records:
        agent = rec["agents"][0]
        assert agent["goal"] == goals[agent["task"]]


def test_pause_resume(server):
    _, body = _post(server, "/sessions", {"n_agents": 1})
    sid = body["id"]
    reader = _StreamReader(server, sid)
    assert _wait(lambda: len(reader.records) >= 2)
    status, _ = _post(server, f"/sessions/{sid}/pause")
    assert status == 200
    time.sleep(4 * TICK)
    frozen = len(reader.records)
    time.sleep(4 * TICK)
    assert len(reader.records) == frozen
    _post(server, f"/sessions/{sid}/resume")
    assert _wait(lambda: len(reader.records) > frozen)
    reader.close()


def test_unknown_task_without_fallback_names_modes(server):
    _, body = _post(server, "/sessions", {"n_agents": 1})
    status, err = _post(server, f"/sessions/{body['id']}/agents/0/task",
                        {"text": "Agent, fetch coffee"})
    assert status == 400
    assert "location" in err["error"] or "provider" in err["error"]


def test_file_only_resolver_lists_modes():
    tasks = generate_corpus()
    store = SyntheticEmbedder(dim=8, seed=0, noise=0.0).build_store(tasks[:5])
    resolver = TaskResolver.for_corpus(tasks[:5], store, embedder=None)
    z, goal = resolver.resolve(tasks[0].text)
    assert z.shape == (8,)
    with pytest.raises(UnknownTaskError, match="provider modes"):
        resolver.resolve("Agent, go to the east edge")


def test_bad_routes_and_agent_index(server):
    status, _ = _get(server, "/sessions/doesnotexist")
    assert status == 404
    _, body = _post(server, "/sessions", {"n_agents": 1})
    status, err = _post(server, f"/sessions/{body['id']}/agents/7/task",
                        {"text": "Agent, go to the west edge"})
    assert status == 400
    assert "range" in err["error"]
