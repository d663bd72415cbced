"""Ground-truth kinematic environment, learned transition model, and
rollout/evaluation machinery.

The kinematic environment stands in for the real robot at desk scale:
first-order velocity smoothing toward the commanded velocity plus small
process noise.  The learned model is a per-agent neural transition
function fit to logged data; composing independent per-agent models gives
a multi-robot simulator that can detect inter-agent collisions but cannot
model contact, so colliding agents freeze at their last valid state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import TaskSpec
from .data import (ACTION_VECTORS, N_ACTIONS, AgentState, ArenaConfig,
                   TransitionLog, collision_flags, reward)
from .nn import init_mlp, mlp_backward, mlp_forward
from .optim import AdamW, WarmupSchedule
from .policy import PolicyInference, TeamObservation, boltzmann_action
from .validation import BaseEstimator, check_fitted


@dataclass(frozen=True)
class KinematicEnv:
    """First-order holonomic point robot in a square arena.

    v' = beta_v * v + (1 - beta_v) * cmd(a) + noise,  p' = p + v' * dt.
    """

    arena: ArenaConfig = field(default_factory=ArenaConfig)
    dt: float = 1.0
    beta_v: float = 0.3
    noise_std: float = 0.02

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if not 0.0 <= self.beta_v < 1.0:
            raise ValueError("beta_v must be in [0, 1)")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")

    def reset(self, rng: np.random.Generator) -> AgentState:
        p = rng.uniform(-self.arena.half, self.arena.half, size=2)
        return AgentState(p=p, v=np.zeros(2))

    def step(self, state: AgentState, action: int,
             rng: np.random.Generator | None = None) -> AgentState:
        cmd = ACTION_VECTORS[action]
        v = self.beta_v * state.v + (1.0 - self.beta_v) * cmd
        if self.noise_std > 0 and rng is not None:
            v = v + rng.normal(0.0, self.noise_std, size=2)
        return AgentState(p=state.p + v * self.dt, v=v)

    def step_team(self, obs: np.ndarray, actions: np.ndarray,
                  rng: np.random.Generator | None = None) -> np.ndarray:
        """Vectorized per-agent step on [n, 4] (px, py, vx, vy) rows."""
        cmd = ACTION_VECTORS[actions]
        v = self.beta_v * obs[:, 2:] + (1.0 - self.beta_v) * cmd
        if self.noise_std > 0 and rng is not None:
            v = v + rng.normal(0.0, self.noise_std, size=v.shape)
        return np.concatenate([obs[:, :2] + v * self.dt, v], axis=1)


@dataclass(frozen=True)
class ModelHParams:
    hidden: int = 256
    depth: int = 2
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 256
    steps: int = 8000
    seed: int = 0


class TransitionModel(BaseEstimator):
    """Neural single-agent dynamics: (state, one-hot action) -> next state.

    Two blocks plus a linear head, MSE-fit with AdamW on a transition log.
    """

    def __init__(self, hidden: int = 256, depth: int = 2, lr: float = 1e-3,
                 weight_decay: float = 1e-4, batch_size: int = 256,
                 steps: int = 8000, seed: int = 0):
        self.hidden = hidden
        self.depth = depth
        self.lr = lr
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.steps = steps
        self.seed = seed
        self.params_ = None

    @staticmethod
    def _features(obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        onehot = np.zeros((len(actions), N_ACTIONS), dtype=np.float32)
        onehot[np.arange(len(actions)), actions] = 1.0
        return np.concatenate([obs.astype(np.float32), onehot], axis=1)

    def fit(self, log: TransitionLog):
        if len(log) == 0:
            raise ValueError("cannot fit on an empty transition log")
        obs, next_obs = log.obs_arrays(np.float32)
        X = self._features(obs, log.a)
        rng = np.random.default_rng(self.seed)
        self.params_ = init_mlp(rng, X.shape[1], self.hidden, self.depth, 4)
        opt = AdamW(WarmupSchedule(self.lr, 0), weight_decay=self.weight_decay)
        n = len(X)
        for _ in range(self.steps):
            idx = rng.integers(0, n, size=min(self.batch_size, n))
            pred, caches = mlp_forward(self.params_, X[idx], self.depth)
            err = pred - next_obs[idx]
            grads: dict = {}
            mlp_backward(2.0 * err / err.size, caches, self.depth, grads)
            opt.step(self.params_, grads)
        return self

    def predict(self, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        check_fitted(self, "params_")
        pred, _ = mlp_forward(self.params_, self._features(obs, actions), self.depth)
        return pred.astype(np.float64)

    def step_team(self, obs: np.ndarray, actions: np.ndarray,
                  rng: np.random.Generator | None = None) -> np.ndarray:
        return self.predict(obs, actions)


def train_transition_model(log: TransitionLog,
                           hparams: ModelHParams = ModelHParams()) -> TransitionModel:
    model = TransitionModel(hidden=hparams.hidden, depth=hparams.depth,
                            lr=hparams.lr, weight_decay=hparams.weight_decay,
                            batch_size=hparams.batch_size, steps=hparams.steps,
                            seed=hparams.seed)
    return model.fit(log)


# ---------------------------------------------------------------------------
# multi-agent stepping and rollouts

def sim_step(stepper, obs: np.ndarray, actions: np.ndarray, arena: ArenaConfig,
             rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Independent per-agent transitions plus collision flags.

    Flags are evaluated on the tentative resulting positions; the caller
    decides what to do with colliding agents (rollouts freeze them).
    """
    tentative = stepper.step_team(obs, actions, rng)
    flags = collision_flags(tentative[:, :2], arena)
    return tentative, flags


@dataclass(frozen=True)
class EpisodeMetrics:
    """Aggregates for one evaluation episode."""

    mean_distance: float      # over agents and steps
    final_distance: float     # over agents, last step
    collisions: int
    success: bool
    steps: int


@dataclass
class Trajectory:
    """Per-step records of one rollout."""

    tasks: list[TaskSpec]
    records: list[dict] = field(default_factory=list)

    def save(self, path: str | Path) -> None:
        with open(path, "w") as f:
            for rec in self.records:
                f.write(json.dumps(rec) + "\n")


# spawn gaps follow the train-time safety radius (0.4 m), not whatever
# radius collisions are counted at: a policy trained to treat < 0.8 m as
# terminal has never seen closer starts
DEFAULT_SPAWN_GAP = 2 * 0.4 + 0.1


def spawn_team(n_agents: int, arena: ArenaConfig, rng: np.random.Generator,
               min_gap: float | None = None, max_tries: int = 1000) -> np.ndarray:
    """Random spawn with rejection until pairwise gaps exceed ``min_gap``."""
    if min_gap is None:
        min_gap = max(2 * arena.radius + 0.1, DEFAULT_SPAWN_GAP)
    for _ in range(max_tries):
        p = rng.uniform(-arena.half, arena.half, size=(n_agents, 2))
        if n_agents == 1:
            return p
        d = np.linalg.norm(p[:, None, :] - p[None, :, :], axis=-1)
        d[np.arange(n_agents), np.arange(n_agents)] = np.inf
        if d.min() > min_gap:
            return p
    raise RuntimeError(f"could not spawn {n_agents} agents with gap "
                       f"{min_gap} in a {arena.side} m arena")


def rollout(stepper, engine: PolicyInference, tasks: list[TaskSpec],
            store, steps: int, rng: np.random.Generator,
            arena: ArenaConfig | None = None, temperature: float = 0.01,
            success_threshold: float = 0.25, spawn_gap: float | None = None,
            record: bool = False) -> tuple[Trajectory | None, EpisodeMetrics]:
    """Run the policy for one episode, one task per agent.

    Agents whose tentative step collides are reverted and frozen for the
    remainder of the episode; each colliding step increments the collision
    count.  Success is judged on the agent-averaged distance to goal at
    the final step.
    """
    if arena is None:
        arena = getattr(stepper, "arena", ArenaConfig())
    n = len(tasks)
    goals = np.array([t.goal for t in tasks])
    z = np.stack([store.get(t.text) for t in tasks])
    obs = np.zeros((n, 4))
    obs[:, :2] = spawn_team(n, arena, rng, min_gap=spawn_gap)
    frozen = np.zeros(n, dtype=bool)
    traj = Trajectory(tasks=tasks) if record else None

    distances = [np.linalg.norm(obs[:, :2] - goals, axis=1)]
    collisions = 0
    for t in range(steps):
        q = engine.team_q(obs.astype(np.float32), z)
        actions = np.array([boltzmann_action(q[i], temperature, rng)
                            for i in range(n)], dtype=np.int64)
        tentative, flags = sim_step(stepper, obs, actions, arena, rng)
        blocked = (flags > 0) | frozen
        new_obs = np.where(blocked[:, None], obs, tentative)
        new_obs[frozen, 2:] = 0.0
        collisions += int(flags[~frozen].sum())
        frozen |= flags > 0
        if record:
            step_rewards = [
                reward(obs[i, :2], obs[i, 2:], new_obs[i, :2], new_obs[i, 2:],
                       goals[i], flags[i], arena) for i in range(n)]
            traj.records.append({
                "t": t,
                "agents": [{
                    "p": new_obs[i, :2].tolist(), "v": new_obs[i, 2:].tolist(),
                    "a": int(actions[i]), "q": q[i].tolist(),
                    "reward": step_rewards[i], "collision": bool(flags[i]),
                } for i in range(n)],
            })
        obs = new_obs
        distances.append(np.linalg.norm(obs[:, :2] - goals, axis=1))

    dist = np.array(distances)
    final = float(dist[-1].mean())
    metrics = EpisodeMetrics(
        mean_distance=float(dist.mean()),
        final_distance=final,
        collisions=collisions,
        success=final < success_threshold,
        steps=steps,
    )
    return traj, metrics


@dataclass(frozen=True)
class TaskResult:
    text: str
    metrics: EpisodeMetrics


@dataclass(frozen=True)
class EvalReport:
    train: tuple[TaskResult, ...]
    test: tuple[TaskResult, ...]

    def successes(self, side: str) -> int:
        return sum(r.metrics.success for r in getattr(self, side))

    def collisions(self, side: str) -> int:
        return sum(r.metrics.collisions for r in getattr(self, side))

    def mean_distance(self, side: str) -> float:
        results = getattr(self, side)
        return float(np.mean([r.metrics.mean_distance for r in results]))


def _companion_tasks(primary: TaskSpec, pool: list[TaskSpec], count: int,
                     rng: np.random.Generator | None = None) -> list[TaskSpec]:
    """Companion tasks with goals distinct from every already-chosen one.

    Random (seeded) among eligible candidates, mirroring how operators
    hand out tasks; distinctness keeps two agents from contending for one
    coordinate, which would confound the primary task's score.
    """
    chosen = [primary]
    for _ in range(count):
        eligible = [cand for cand in pool
                    if all(cand.text != c.text and tuple(cand.goal) != tuple(c.goal)
                           for c in chosen)]
        if not eligible:
            raise ValueError("not enough distinct-goal tasks for companion assignment")
        pick = eligible[int(rng.integers(len(eligible)))] if rng is not None \
            else eligible[0]
        chosen.append(pick)
    return chosen[1:]


def evaluate_sequential(stepper, engine: PolicyInference, tasks: list[TaskSpec],
                        store, n_agents: int, windows: int = 10,
                        window_steps: int = 30, threshold: float = 0.25,
                        arena: ArenaConfig | None = None,
                        temperature: float = 0.01,
                        seed: int = 0) -> tuple[TaskResult, ...]:
    """Deployment-style evaluation: one continuous session per task list.

    Agents spawn once, then every agent receives a fresh task every
    ``window_steps`` ticks and keeps moving — window w starts wherever
    window w-1 ended, as on real robots.  Each window is scored like an
    episode: success means the agent-averaged distance to their own goals
    at the window's last tick is under ``threshold``, and the window is
    labelled by agent 0's task.  Goals within a window are chosen
    pairwise-distinct to keep one window's score from being confounded by
    two agents contending for the same coordinate.  A window is one
    episode: agents frozen by a collision stay frozen to the end of their
    window (and fail it), then resume with the next task.
    """
    if arena is None:
        arena = getattr(stepper, "arena", ArenaConfig())
    if n_agents > len({t.goal for t in tasks}):
        raise ValueError("need at least n_agents distinct goals to evaluate")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 17]))
    obs = np.zeros((n_agents, 4))
    obs[:, :2] = spawn_team(n_agents, arena, rng)
    results = []
    for w in range(windows):
        primary = tasks[w % len(tasks)]
        team = [primary] + _companion_tasks(primary, tasks, n_agents - 1, rng)
        goals = np.array([t.goal for t in team])
        z = np.stack([store.get(t.text) for t in team])
        dists = [np.linalg.norm(obs[:, :2] - goals, axis=1)]
        collisions = 0
        frozen = np.zeros(n_agents, dtype=bool)
        for _ in range(window_steps):
            q = engine.team_q(obs.astype(np.float32), z)
            actions = np.array([boltzmann_action(q[i], temperature, rng)
                                for i in range(n_agents)], dtype=np.int64)
            tentative, flags = sim_step(stepper, obs, actions, arena, rng)
            blocked = (flags > 0) | frozen
            obs = np.where(blocked[:, None], obs, tentative)
            obs[frozen, 2:] = 0.0
            collisions += int(flags[~frozen].sum())
            frozen |= flags > 0
            dists.append(np.linalg.norm(obs[:, :2] - goals, axis=1))
        dist = np.array(dists)
        final = float(dist[-1].mean())
        results.append(TaskResult(text=primary.text, metrics=EpisodeMetrics(
            mean_distance=float(dist.mean()), final_distance=final,
            collisions=collisions, success=final < threshold,
            steps=window_steps)))
    return tuple(results)


def evaluate(stepper, engine: PolicyInference, split, store, n_agents: int,
             episodes: int | None = None, steps: int = 50,
             threshold: float = 0.25, arena: ArenaConfig | None = None,
             temperature: float = 0.01, seed: int = 0,
             spawn_gap: float | None = None) -> EvalReport:
    """Per-task evaluation episodes on both corpus sides.

    Episode e on a side tests task e (agent 0); remaining agents run
    companion tasks from the same side chosen with well-separated goals so
    one task's success is not confounded by goal contention.  Success is
    the episode's agent-averaged final distance under ``threshold``.
    """
    sides = {}
    for side_idx, side in enumerate(("train", "test")):
        tasks = list(getattr(split, side))
        count = episodes if episodes is not None else len(tasks)
        results = []
        for e in range(count):
            rng = np.random.default_rng(np.random.SeedSequence([seed, side_idx, e]))
            primary = tasks[e % len(tasks)]
            team = [primary] + _companion_tasks(primary, tasks, n_agents - 1, rng)
            _, metrics = rollout(stepper, engine, team, store, steps, rng,
                                 arena=arena, temperature=temperature,
                                 success_threshold=threshold, spawn_gap=spawn_gap)
            results.append(TaskResult(text=primary.text, metrics=metrics))
        sides[side] = tuple(results)
    return EvalReport(train=sides["train"], test=sides["test"])
