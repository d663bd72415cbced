"""Single-robot transition logs and the on-the-fly multi-agent sampler.

A small log of real (or simulated) single-agent random-walk transitions is
recombined at training time: each joint sample draws n transitions with
replacement and n distinct tasks, then rewards and terminations are
computed against the composed joint state.  The joint dataset is never
materialized.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

N_ACTIONS = 9
ACTION_SPEED = 0.3  # m/s
STOP_ACTION = 8

# indices 0..7: unit directions at 45-degree spacing scaled to 0.3 m/s,
# index 0 pointing east, counterclockwise; index 8: zero velocity.
_angles = np.arange(8) * (math.pi / 4)
ACTION_VECTORS = np.zeros((N_ACTIONS, 2))
ACTION_VECTORS[:8, 0] = ACTION_SPEED * np.cos(_angles)
ACTION_VECTORS[:8, 1] = ACTION_SPEED * np.sin(_angles)
del _angles


@dataclass(frozen=True)
class ArenaConfig:
    """Square arena geometry and collision/goal scales."""

    side: float = 3.8
    radius: float = 0.4      # per-agent collision radius (train-time default)
    k: float = 1.1           # goal coordinate magnitude
    collision_penalty: float = 1.0

    def __post_init__(self):
        if self.side <= 0 or self.radius <= 0 or self.k <= 0:
            raise ValueError("arena dimensions must be positive")

    @property
    def half(self) -> float:
        return self.side / 2.0


@dataclass(frozen=True)
class AgentState:
    """Planar position and velocity."""

    p: np.ndarray
    v: np.ndarray

    @property
    def obs(self) -> np.ndarray:
        return np.concatenate([self.p, self.v])


@dataclass
class TransitionLog:
    """Columnar <state, action, next-state> records at a fixed sample period."""

    s_p: np.ndarray
    s_v: np.ndarray
    a: np.ndarray
    sp_p: np.ndarray
    sp_v: np.ndarray
    period: float = 1.0

    def __post_init__(self):
        n = len(self.a)
        for name in ("s_p", "s_v", "sp_p", "sp_v"):
            if getattr(self, name).shape != (n, 2):
                raise ValueError(f"{name} must be [{n}, 2]")
        if self.period <= 0:
            raise ValueError("sample period must be > 0")

    def __len__(self) -> int:
        return len(self.a)

    @property
    def duration_minutes(self) -> float:
        return len(self) * self.period / 60.0

    def obs_arrays(self, dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
        """(obs, next_obs) as [N, 4] (px, py, vx, vy) arrays."""
        obs = np.concatenate([self.s_p, self.s_v], axis=1).astype(dtype)
        nxt = np.concatenate([self.sp_p, self.sp_v], axis=1).astype(dtype)
        return obs, nxt


def save_log(path: str | Path, log: TransitionLog) -> None:
    with open(path, "w") as f:
        f.write(json.dumps({"type": "meta", "period": log.period}) + "\n")
        for i in range(len(log)):
            f.write(json.dumps({
                "p": log.s_p[i].tolist(), "v": log.s_v[i].tolist(),
                "a": int(log.a[i]),
                "p_next": log.sp_p[i].tolist(), "v_next": log.sp_v[i].tolist(),
            }) + "\n")


def load_log(path: str | Path) -> TransitionLog:
    period = 1.0
    rows = []
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("type") == "meta":
                period = float(rec["period"])
                continue
            rows.append(rec)
    if not rows:
        raise ValueError(f"{path}: no transitions")
    return TransitionLog(
        s_p=np.array([r["p"] for r in rows]),
        s_v=np.array([r["v"] for r in rows]),
        a=np.array([r["a"] for r in rows], dtype=np.int64),
        sp_p=np.array([r["p_next"] for r in rows]),
        sp_v=np.array([r["v_next"] for r in rows]),
        period=period,
    )


def collect_random(env, steps: int, seed: int = 0) -> TransitionLog:
    """Roll a uniform-random policy for ``steps`` transitions.

    The episode resets whenever the agent exits the arena; the boundary-
    breaching tuple itself is recorded, since those are the only wall-
    collision examples the offline learner will ever see.
    """
    rng = np.random.default_rng(seed)
    s_p, s_v, acts, sp_p, sp_v = [], [], [], [], []
    state = env.reset(rng)
    for _ in range(steps):
        a = int(rng.integers(N_ACTIONS))
        nxt = env.step(state, a, rng)
        s_p.append(state.p)
        s_v.append(state.v)
        acts.append(a)
        sp_p.append(nxt.p)
        sp_v.append(nxt.v)
        if np.any(np.abs(nxt.p) > env.arena.half):
            state = env.reset(rng)
        else:
            state = nxt
    return TransitionLog(np.array(s_p), np.array(s_v),
                         np.array(acts, dtype=np.int64),
                         np.array(sp_p), np.array(sp_v), period=env.dt)


# ---------------------------------------------------------------------------
# reward / collision / termination

def collision(p: np.ndarray, others_p: np.ndarray, arena: ArenaConfig) -> int:
    """1 iff ``p`` is outside the arena or within 2*radius of any other agent.

    The inter-agent threshold is inclusive: exactly 2*radius counts.
    """
    if np.any(np.abs(p) > arena.half):
        return 1
    if len(others_p) and np.min(np.linalg.norm(others_p - p, axis=-1)) <= 2 * arena.radius:
        return 1
    return 0


def collision_flags(joint_p: np.ndarray, arena: ArenaConfig) -> np.ndarray:
    """Vectorized collision indicator per agent for [..., n, 2] positions."""
    wall = np.any(np.abs(joint_p) > arena.half, axis=-1)
    n = joint_p.shape[-2]
    if n == 1:
        return wall.astype(np.float64)
    diff = joint_p[..., :, None, :] - joint_p[..., None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    dist[..., np.arange(n), np.arange(n)] = np.inf
    contact = np.min(dist, axis=-1) <= 2 * arena.radius
    return (wall | contact).astype(np.float64)


def reward(p: np.ndarray, v: np.ndarray, p_next: np.ndarray, v_next: np.ndarray,
           goal: np.ndarray, collided: float,
           arena: ArenaConfig = ArenaConfig()) -> float:
    """Progress toward the goal, scaled up with speed, minus collisions.

    r = (||p - goal|| - ||p' - goal||) * (1 + ||v|| + ||v'||) - penalty * c
    """
    progress = np.linalg.norm(p - goal) - np.linalg.norm(p_next - goal)
    speed_scale = 1.0 + np.linalg.norm(v) + np.linalg.norm(v_next)
    return float(progress * speed_scale - arena.collision_penalty * collided)


def terminated(collided: float) -> bool:
    """An agent's episode ends exactly when it collides."""
    return bool(collided)


# ---------------------------------------------------------------------------
# combinatorial multi-agent sampler

@dataclass(frozen=True)
class MultiAgentBatch:
    """One on-the-fly joint batch: [batch, n_agents, ...] arrays."""

    obs: np.ndarray        # [B, n, 4] float32
    actions: np.ndarray    # [B, n] int64
    next_obs: np.ndarray   # [B, n, 4] float32
    z: np.ndarray          # [B, n, dim] float32
    rewards: np.ndarray    # [B, n] float32
    dones: np.ndarray      # [B, n] float32

    @property
    def batch_size(self) -> int:
        return self.obs.shape[0]

    @property
    def n_agents(self) -> int:
        return self.obs.shape[1]


@dataclass
class BatchSampler:
    """Draws joint transitions from a single-agent log.

    Transitions are sampled uniformly with replacement; tasks uniformly
    without replacement within each joint sample (rejection sampling on
    duplicate task draws, exact for n_agents << n_tasks).
    """

    log: TransitionLog
    tasks: list
    store: object  # EmbeddingStore
    n_agents: int
    batch_size: int
    arena: ArenaConfig = field(default_factory=ArenaConfig)

    def __post_init__(self):
        if len(self.log) == 0:
            raise ValueError("transition log is empty")
        if self.n_agents > len(self.tasks):
            raise ValueError(
                f"n_agents={self.n_agents} exceeds the {len(self.tasks)}-task corpus")
        self._obs, self._next_obs = self.log.obs_arrays(np.float32)
        self._z = self.store.matrix(list(self.tasks)).astype(np.float32)
        self._goals = np.array([t.goal for t in self.tasks])

    def sample(self, rng: np.random.Generator) -> MultiAgentBatch:
        B, n = self.batch_size, self.n_agents
        idx = rng.integers(0, len(self.log), size=(B, n))
        task_idx = rng.integers(0, len(self.tasks), size=(B, n))
        if n > 1:
            while True:
                dup = np.zeros(B, dtype=bool)
                for i in range(n):
                    for j in range(i + 1, n):
                        dup |= task_idx[:, i] == task_idx[:, j]
                if not dup.any():
                    break
                task_idx[dup] = rng.integers(0, len(self.tasks), size=(int(dup.sum()), n))

        obs = self._obs[idx]
        next_obs = self._next_obs[idx]
        goals = self._goals[task_idx]

        p, v = obs[..., :2].astype(np.float64), obs[..., 2:].astype(np.float64)
        pn, vn = next_obs[..., :2].astype(np.float64), next_obs[..., 2:].astype(np.float64)
        progress = np.linalg.norm(p - goals, axis=-1) - np.linalg.norm(pn - goals, axis=-1)
        speed_scale = 1.0 + np.linalg.norm(v, axis=-1) + np.linalg.norm(vn, axis=-1)
        collided = collision_flags(pn, self.arena)
        rewards = progress * speed_scale - self.arena.collision_penalty * collided

        return MultiAgentBatch(
            obs=obs, actions=self.log.a[idx], next_obs=next_obs,
            z=self._z[task_idx],
            rewards=rewards.astype(np.float32),
            dones=collided.astype(np.float32),
        )


def sample_batch(log: TransitionLog, tasks: list, store, n_agents: int,
                 batch: int, arena: ArenaConfig,
                 rng: np.random.Generator) -> MultiAgentBatch:
    """One-shot convenience wrapper around :class:`BatchSampler`."""
    return BatchSampler(log, tasks, store, n_agents, batch, arena).sample(rng)


def permutation_count(n: int, r: int) -> int:
    """Exact nPr, the size of the virtual joint dataset along one axis."""
    return math.perm(n, r)
