"""Kinematic environment, learned transition model, rollouts, evaluation."""

import numpy as np
import pytest

from marlnav.corpus import HoldoutRule, generate_corpus, split_corpus
from marlnav.data import (ACTION_VECTORS, STOP_ACTION, AgentState, ArenaConfig,
                          collect_random)
from marlnav.embeddings import SyntheticEmbedder
from marlnav.policy import PolicyInference, init_policy_params
from marlnav.sim import (KinematicEnv, ModelHParams, TransitionModel,
                         _companion_tasks, evaluate, evaluate_sequential,
                         rollout, sim_step, spawn_team,
                         train_transition_model)

ARENA = ArenaConfig()


def test_kinematic_pure_command_following():
    env = KinematicEnv(arena=ARENA, beta_v=0.0, noise_std=0.0)
    state = AgentState(p=np.zeros(2), v=np.zeros(2))
    nxt = env.step(state, 0)  # action 0 = east
    np.testing.assert_allclose(nxt.p, [0.3, 0.0], atol=1e-12)
    np.testing.assert_allclose(nxt.v, [0.3, 0.0], atol=1e-12)


def test_kinematic_stop_holds_position():
    env = KinematicEnv(arena=ARENA, beta_v=0.0, noise_std=0.0)
    state = AgentState(p=np.array([0.5, -0.2]), v=np.zeros(2))
    for _ in range(5):
        state = env.step(state, STOP_ACTION)
    np.testing.assert_allclose(state.p, [0.5, -0.2], atol=1e-12)


def test_kinematic_velocity_smoothing():
    env = KinematicEnv(arena=ARENA, beta_v=0.5, noise_std=0.0)
    state = AgentState(p=np.zeros(2), v=np.array([0.3, 0.0]))
    nxt = env.step(state, STOP_ACTION)
    np.testing.assert_allclose(nxt.v, [0.15, 0.0], atol=1e-12)


def test_kinematic_velocity_decays_to_zero():
    env = KinematicEnv(arena=ARENA, beta_v=0.6, noise_std=0.0)
    state = AgentState(p=np.zeros(2), v=np.array([0.3, -0.2]))
    speeds = []
    for _ in range(20):
        state = env.step(state, STOP_ACTION)
        speeds.append(float(np.linalg.norm(state.v)))
    assert all(b < a for a, b in zip(speeds, speeds[1:]) if a > 1e-12)
    assert speeds[-1] < 1e-4


def test_kinematic_step_team_matches_scalar():
    env = KinematicEnv(arena=ARENA, beta_v=0.3, noise_std=0.0)
    rng = np.random.default_rng(0)
    obs = rng.uniform(-1, 1, (4, 4))
    actions = np.array([0, 3, 8, 5])
    team = env.step_team(obs, actions)
    for i in range(4):
        single = env.step(AgentState(p=obs[i, :2], v=obs[i, 2:]), actions[i])
        np.testing.assert_allclose(team[i, :2], single.p, atol=1e-12)
        np.testing.assert_allclose(team[i, 2:], single.v, atol=1e-12)


def test_kinematic_validation():
    with pytest.raises(ValueError):
        KinematicEnv(arena=ARENA, dt=0.0)
    with pytest.raises(ValueError):
        KinematicEnv(arena=ARENA, beta_v=1.0)
    with pytest.raises(ValueError):
        KinematicEnv(arena=ARENA, noise_std=-0.1)


# -- learned model ---------------------------------------------------------------

@pytest.fixture(scope="module")
def fitted_model():
    env = KinematicEnv(arena=ARENA, noise_std=0.02)
    log = collect_random(env, 3000, seed=21)
    model = train_transition_model(log, ModelHParams(steps=4000, seed=0))
    return env, log, model


def test_transition_model_held_out_position_error(fitted_model):
    env, _, model = fitted_model
    held_out = collect_random(env, 800, seed=99)
    obs, next_obs = held_out.obs_arrays(np.float64)
    pred = model.predict(obs, held_out.a)
    err = np.linalg.norm(pred[:, :2] - next_obs[:, :2], axis=1)
    # floor is the process noise (~0.025 m mean); fit error adds a little
    assert float(err.mean()) < 0.05


def test_transition_model_estimator_api():
    model = TransitionModel(steps=2)
    with pytest.raises(ValueError, match="not fitted"):
        model.predict(np.zeros((1, 4)), np.zeros(1, np.int64))
    assert model.get_params()["steps"] == 2
    env = KinematicEnv(arena=ARENA, noise_std=0.0)
    with pytest.raises(ValueError, match="empty"):
        from marlnav.data import TransitionLog
        model.fit(TransitionLog(np.zeros((0, 2)), np.zeros((0, 2)),
                                np.zeros(0, np.int64), np.zeros((0, 2)),
                                np.zeros((0, 2))))


def test_sim_step_freeze_inputs(fitted_model):
    env, _, _ = fitted_model
    obs = np.array([[0.0, 0.0, 0.0, 0.0], [0.5, 0.0, 0.0, 0.0]])
    tentative, flags = sim_step(env, obs, np.array([0, 4]), ARENA, None)
    # east vs west head-on from 0.5 m apart at radius 0.4: both collide
    assert flags.tolist() == [1.0, 1.0]


# -- spawn / rollout -------------------------------------------------------------

def test_spawn_team_respects_clearance():
    rng = np.random.default_rng(1)
    for _ in range(20):
        p = spawn_team(4, ARENA, rng)
        assert np.all(np.abs(p) <= ARENA.half)
        d = np.linalg.norm(p[:, None] - p[None, :], axis=-1)
        d[np.arange(4), np.arange(4)] = np.inf
        assert d.min() > 2 * ARENA.radius + 0.1


def test_spawn_team_impossible_raises():
    tiny = ArenaConfig(side=0.5, radius=0.4)
    with pytest.raises(RuntimeError, match="spawn"):
        spawn_team(5, tiny, np.random.default_rng(0), max_tries=50)


class _StopEngine:
    """Masquerades as PolicyInference: always emits the stop action."""

    z_dim = 8

    def team_q(self, obs, z):
        q = np.zeros((len(obs), 9), np.float32)
        q[:, STOP_ACTION] = 100.0
        return q


@pytest.fixture(scope="module")
def corpus_store():
    tasks = generate_corpus()
    store = SyntheticEmbedder(dim=8, seed=0, noise=0.1).build_store(tasks)
    return tasks, store


def test_rollout_stop_policy_mean_distance_is_initial(corpus_store):
    tasks, store = corpus_store
    env = KinematicEnv(arena=ARENA, beta_v=0.0, noise_std=0.0)
    rng = np.random.default_rng(2)
    traj, metrics = rollout(env, _StopEngine(), list(tasks[:3]), store, 20, rng,
                            arena=ARENA, temperature=0.01, record=True)
    goals = np.array([t.goal for t in tasks[:3]])
    first = np.array([a["p"] for a in traj.records[0]["agents"]])
    initial = float(np.mean(np.linalg.norm(first - goals, axis=1)))
    assert metrics.mean_distance == pytest.approx(initial, abs=1e-9)
    assert metrics.final_distance == pytest.approx(initial, abs=1e-9)
    assert metrics.collisions == 0


class _BeelineEngine:
    """Oracle: walk straight at each agent's goal, stop when close."""

    z_dim = 8

    def __init__(self, store, tasks):
        self.goals = {store.get(t.text).tobytes(): np.array(t.goal) for t in tasks}

    def team_q(self, obs, z):
        q = np.full((len(obs), 9), -100.0, np.float32)
        for i in range(len(obs)):
            goal = self.goals[np.ascontiguousarray(z[i]).tobytes()]
            delta = goal - obs[i, :2]
            if np.linalg.norm(delta) < 0.15:
                q[i, STOP_ACTION] = 100.0
            else:
                scores = ACTION_VECTORS[:8] @ delta
                q[i, np.argmax(scores)] = 100.0
        return q


def test_rollout_scripted_beeline_succeeds(corpus_store):
    tasks, store = corpus_store
    # one agent per distinct goal direction, no contention
    picks = [next(t for t in tasks if t.text.endswith("west edge")),
             next(t for t in tasks if t.text.endswith("north east corner")),
             next(t for t in tasks if t.text.endswith("south edge"))]
    env = KinematicEnv(arena=ARENA, beta_v=0.0, noise_std=0.0)
    engine = _BeelineEngine(store, tasks)
    arena_eval = ArenaConfig(radius=0.25)
    _, metrics = rollout(env, engine, picks, store, 50,
                         np.random.default_rng(4), arena=arena_eval,
                         temperature=0.01, success_threshold=0.25)
    assert metrics.success
    assert metrics.final_distance < 0.25


def test_rollout_seeded_determinism(corpus_store):
    tasks, store = corpus_store
    env = KinematicEnv(arena=ARENA, beta_v=0.3, noise_std=0.02)
    engine = _BeelineEngine(store, tasks)
    for seed in range(5):
        m = [rollout(env, engine, list(tasks[:3]), store, 30,
                     np.random.default_rng(seed), arena=ARENA)[1] for _ in range(2)]
        assert m[0] == m[1]


def test_rollout_freezes_on_collision(corpus_store):
    tasks, store = corpus_store
    # both agents sent to the same goal: the engine drives them together
    same = [next(t for t in tasks if t.text.endswith("NE corner")),
            next(t for t in tasks if t.text.endswith("north east corner"))]
    env = KinematicEnv(arena=ARENA, beta_v=0.0, noise_std=0.0)
    engine = _BeelineEngine(store, tasks)
    traj, metrics = rollout(env, engine, same, store, 50,
                            np.random.default_rng(7), arena=ARENA, record=True)
    assert metrics.collisions > 0
    # after the first colliding step, the colliding agent's position is pinned
    frozen_p = None
    for rec in traj.records:
        if frozen_p is not None:
            assert rec["agents"][idx]["p"] == frozen_p
            break
        for idx, agent in enumerate(rec["agents"]):
            if agent["collision"]:
                frozen_p = agent["p"]
                break


def test_collision_monotonicity_in_radius(corpus_store):
    tasks, store = corpus_store
    same = [next(t for t in tasks if t.text.endswith("NE corner")),
            next(t for t in tasks if t.text.endswith("north east corner")),
            next(t for t in tasks if t.text.endswith("top right corner"))]
    env = KinematicEnv(arena=ARENA, beta_v=0.0, noise_std=0.0)
    engine = _BeelineEngine(store, tasks)
    counts = []
    for radius in (0.4, 0.3, 0.2, 0.1):
        arena = ArenaConfig(radius=radius)
        _, metrics = rollout(env, engine, same, store, 40,
                             np.random.default_rng(11), arena=arena)
        counts.append(metrics.collisions)
    assert all(a >= b for a, b in zip(counts, counts[1:]))


def test_evaluate_report_structure(corpus_store):
    tasks, store = corpus_store
    split = split_corpus(tasks, HoldoutRule(test_size=8), seed=0)
    env = KinematicEnv(arena=ARENA, beta_v=0.0, noise_std=0.0)
    engine = _BeelineEngine(store, tasks)
    report = evaluate(env, engine, split, store, n_agents=3, episodes=4,
                      steps=40, arena=ArenaConfig(radius=0.2), seed=1)
    assert len(report.train) == 4 and len(report.test) == 4
    for side in ("train", "test"):
        results = getattr(report, side)
        assert report.successes(side) == sum(r.metrics.success for r in results)
        assert report.collisions(side) == sum(r.metrics.collisions for r in results)
    texts = [r.text for r in report.test]
    assert texts == [t.text for t in split.test[:4]]


def test_evaluate_single_agent_beeline_solves_everything(corpus_store):
    # with one agent there is no contention: the straight-line oracle must
    # reach every goal within 50 steps at 0.3 m/s
    tasks, store = corpus_store
    split = split_corpus(tasks, HoldoutRule(test_size=8), seed=0)
    env = KinematicEnv(arena=ARENA, beta_v=0.0, noise_std=0.0)
    engine = _BeelineEngine(store, tasks)
    report = evaluate(env, engine, split, store, n_agents=1, episodes=8,
                      steps=50, arena=ArenaConfig(radius=0.25), seed=2)
    assert report.successes("test") == 8
    assert report.collisions("test") == 0


def test_evaluate_sequential_windows(corpus_store):
    # a stop policy never moves: every window's final distance equals the
    # distance from the (fixed) poses to that window's goals
    tasks, store = corpus_store
    split = split_corpus(tasks, HoldoutRule(test_size=8), seed=0)
    env = KinematicEnv(arena=ARENA, beta_v=0.0, noise_std=0.0)
    results = evaluate_sequential(env, _StopEngine(), list(split.test), store,
                                  n_agents=2, windows=6, window_steps=5,
                                  arena=ARENA, seed=3)
    assert len(results) == 6
    assert [r.text for r in results] == [t.text for t in split.test[:6]]
    assert all(r.metrics.collisions == 0 for r in results)
    assert all(r.metrics.steps == 5 for r in results)
    # beeline agents keep navigating across windows without respawns
    engine = _BeelineEngine(store, tasks)
    seq = evaluate_sequential(env, engine, list(split.test), store, n_agents=1,
                              windows=8, window_steps=50, arena=ARENA, seed=3)
    assert sum(r.metrics.success for r in seq) == 8


def test_companion_tasks_distinct_goals(corpus_store):
    tasks, _ = corpus_store
    primary = next(t for t in tasks if t.text.endswith("west edge"))
    companions = _companion_tasks(primary, tasks[:60], 2)
    goals = [primary.goal] + [c.goal for c in companions]
    assert len({g for g in goals}) == 3


def test_rollout_with_real_policy_smoke(corpus_store):
    tasks, store = corpus_store
    params = init_policy_params(np.random.default_rng(0), z_dim=8, hidden=16)
    engine = PolicyInference(params)
    env = KinematicEnv(arena=ARENA)
    traj, metrics = rollout(env, engine, list(tasks[:3]), store, 10,
                            np.random.default_rng(0), arena=ARENA, record=True)
    assert metrics.steps == 10
    assert len(traj.records) == 10
    rec = traj.records[0]["agents"][0]
    assert set(rec) == {"p", "v", "a", "q", "reward", "collision"}
    assert len(rec["q"]) == 9
