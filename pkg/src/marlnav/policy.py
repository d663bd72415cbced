"""Task-conditioned value network and deployment policies.

The state encoder is a pairwise graph network: agent i's state is the
mean over all agents j (self included) of one block applied to
``(o_i || z_i || o_j || z_j)``.  Two dueling Q heads form a clipped
(min-reduced) double-Q ensemble on top.  One parameter set serves every
agent.

Two execution paths exist:

* batched float32 forward/backward functions used by training, and
* :class:`PolicyInference`, a low-latency path that stores weights in the
  fastest BLAS orientation and caches the encoder's task-embedding
  projections (tasks change rarely compared to the control rate).

Both the centralized and decentralized act paths route through the same
inference routine with identical BLAS shapes, so their q-values agree
bitwise.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .data import N_ACTIONS
from .nn import (LEAKY_SLOPE, LN_EPS, Params, block_backward, block_forward,
                 init_block, init_linear, linear_backward, linear_forward,
                 prefix_params, softmax)

OBS_DIM = 4


@dataclass(frozen=True)
class TeamObservation:
    """Per-agent observations [n, 4] and task embeddings [n, dim]."""

    obs: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        if self.obs.ndim != 2 or self.obs.shape[1] != OBS_DIM:
            raise ValueError(f"obs must be [n, {OBS_DIM}], got {self.obs.shape}")
        if self.z.ndim != 2 or self.z.shape[0] != self.obs.shape[0]:
            raise ValueError("z must be [n, dim] aligned with obs")

    @property
    def n_agents(self) -> int:
        return self.obs.shape[0]


def init_policy_params(rng: np.random.Generator, z_dim: int, hidden: int = 1024,
                       ensemble: int = 2, encoder_depth: int = 1,
                       dtype=np.float32) -> Params:
    """Pairwise encoder block(s) + per-member (two blocks + dueling) heads.

    The literal architecture uses one pairwise block; ``encoder_depth``
    stacks more, which helps small networks form relative-geometry
    features before aggregation.
    """
    if encoder_depth < 1:
        raise ValueError("encoder_depth must be >= 1")
    pair_dim = 2 * (OBS_DIM + z_dim)
    params: Params = {}
    params.update(prefix_params("enc", init_block(rng, pair_dim, hidden, dtype)))
    for d in range(1, encoder_depth):
        params.update(prefix_params(f"enc{d}", init_block(rng, hidden, hidden, dtype)))
    for m in range(ensemble):
        params.update(prefix_params(f"q{m}.b1", init_block(rng, hidden, hidden, dtype)))
        params.update(prefix_params(f"q{m}.b2", init_block(rng, hidden, hidden, dtype)))
        params.update(prefix_params(f"q{m}.out",
                                    init_linear(rng, hidden, 1 + N_ACTIONS, dtype,
                                                scale=float(1.0 / np.sqrt(hidden)))))
    return params


def ensemble_size(params: Params) -> int:
    return sum(1 for k in params if k.endswith(".out.w") and k.startswith("q"))


def encoder_depth_of(params: Params) -> int:
    return 1 + sum(1 for k in params if k.startswith("enc") and k.endswith(".w")
                   and k != "enc.w")


def target_copy(params: Params) -> Params:
    return copy.deepcopy(params)


# ---------------------------------------------------------------------------
# batched training path

def _pair_inputs(obs: np.ndarray, z: np.ndarray) -> np.ndarray:
    """[..., n, n, 2*(4+dim)] tensor of (o_i || z_i || o_j || z_j) rows."""
    a = np.concatenate([obs, z], axis=-1)
    n = a.shape[-2]
    left = np.broadcast_to(a[..., :, None, :], a.shape[:-2] + (n, n, a.shape[-1]))
    right = np.broadcast_to(a[..., None, :, :], left.shape)
    return np.concatenate([left, right], axis=-1)


def encode_forward(params: Params, obs: np.ndarray, z: np.ndarray):
    """All agents' encoded states ``[..., n, hidden]`` plus backward cache."""
    if obs.shape[-1] != OBS_DIM:
        raise ValueError(f"obs must end in dim {OBS_DIM}")
    pair_dim = params["enc.w"].shape[1]
    x = _pair_inputs(obs, z)
    if x.shape[-1] != pair_dim:
        raise ValueError(
            f"embedding dim mismatch: pair input is {x.shape[-1]}, encoder expects {pair_dim}")
    h, cache = block_forward(params, "enc", x)
    caches = [cache]
    for d in range(1, encoder_depth_of(params)):
        h, cache = block_forward(params, f"enc{d}", h)
        caches.append(cache)
    n = h.shape[-2]
    s = np.mean(h, axis=-2, dtype=np.float64).astype(h.dtype)
    return s, (caches, n)


def encode_backward(ds: np.ndarray, cache, grads) -> None:
    block_caches, n = cache
    dh = np.broadcast_to(ds[..., :, None, :] / n,
                         ds.shape[:-1] + (n, ds.shape[-1]))
    dh = np.ascontiguousarray(dh)
    for d in reversed(range(1, len(block_caches))):
        dh = block_backward(dh, block_caches[d], f"enc{d}", grads)
    block_backward(dh, block_caches[0], "enc", grads)


def encode(params: Params, team: TeamObservation, i: int) -> np.ndarray:
    """Encoded state for one agent (spec-level convenience)."""
    if not 0 <= i < team.n_agents:
        raise IndexError(f"agent index {i} out of range")
    s, _ = encode_forward(params, team.obs, team.z)
    return s[i]


def dueling_combine(out: np.ndarray) -> np.ndarray:
    """q = value + advantage - mean(advantage) over the action axis."""
    v, adv = out[..., :1], out[..., 1:]
    return v + adv - np.mean(adv, axis=-1, keepdims=True, dtype=np.float64).astype(out.dtype)


def q_values(params: Params, s: np.ndarray):
    """Per-member and clipped (elementwise-min) q values for encoded states."""
    members = []
    for m in range(ensemble_size(params)):
        q, _ = _head_forward(params, s, m)
        members.append(q)
    stacked = np.stack(members, axis=-2)
    return stacked, stacked.min(axis=-2)


def _head_forward(params: Params, s: np.ndarray, member: int):
    h1, c1 = block_forward(params, f"q{member}.b1", s)
    h2, c2 = block_forward(params, f"q{member}.b2", h1)
    out, c3 = linear_forward(params, f"q{member}.out", h2)
    return dueling_combine(out), (c1, c2, c3, out)


def _head_backward(dq: np.ndarray, cache, member: int, grads) -> np.ndarray:
    c1, c2, c3, out = cache
    dout = np.empty_like(out)
    dout[..., 0] = dq.sum(axis=-1)
    dout[..., 1:] = dq - np.mean(dq, axis=-1, keepdims=True)
    dh2 = linear_backward(dout, c3, f"q{member}.out", grads)
    dh1 = block_backward(dh2, c2, f"q{member}.b2", grads)
    return block_backward(dh1, c1, f"q{member}.b1", grads)


def policy_q_forward(params: Params, obs: np.ndarray, z: np.ndarray):
    """Encode + all heads; returns (per-member q [..., M, 9], caches)."""
    s, enc_cache = encode_forward(params, obs, z)
    qs, head_caches = [], []
    for m in range(ensemble_size(params)):
        q, c = _head_forward(params, s, m)
        qs.append(q)
        head_caches.append(c)
    return np.stack(qs, axis=-2), (enc_cache, head_caches)


def policy_q_backward(dq_members: np.ndarray, caches, params: Params, grads) -> None:
    enc_cache, head_caches = caches
    ds = None
    for m, c in enumerate(head_caches):
        d = _head_backward(np.ascontiguousarray(dq_members[..., m, :]), c, m, grads)
        ds = d if ds is None else ds + d
    encode_backward(ds, enc_cache, grads)


# ---------------------------------------------------------------------------
# action sampling

def boltzmann_action(q: np.ndarray, temperature: float,
                     rng: np.random.Generator) -> int:
    """Sample an action index from softmax(q / temperature).

    Consumes exactly one uniform draw from ``rng``, so action streams can
    be replayed agent-by-agent.
    """
    p = softmax(np.asarray(q, dtype=np.float64), temperature)
    cdf = np.cumsum(p)
    u = rng.random()
    return int(min(np.searchsorted(cdf, u, side="right"), len(q) - 1))


# ---------------------------------------------------------------------------
# low-latency inference

class PolicyInference:
    """Frozen-parameter inference engine.

    Weights are re-laid-out once at construction ([out, in] contiguous,
    ensemble block1 stacked) and all hot-path GEMMs run in the
    weights-times-columns orientation.  Encoder projections of task
    embeddings are cached by vector content, since tasks persist across
    many control ticks.
    """

    def __init__(self, params: Params, max_cached_tasks: int = 256):
        self.ensemble = ensemble_size(params)
        w = params["enc.w"]
        pair_dim = w.shape[1]
        self.z_dim = pair_dim // 2 - OBS_DIM
        self.hidden = w.shape[0]
        zd = self.z_dim
        self._wo_i = np.ascontiguousarray(w[:, :OBS_DIM])
        self._wz_i = np.ascontiguousarray(w[:, OBS_DIM:OBS_DIM + zd])
        self._wo_j = np.ascontiguousarray(w[:, OBS_DIM + zd:2 * OBS_DIM + zd])
        self._wz_j = np.ascontiguousarray(w[:, 2 * OBS_DIM + zd:])
        self._enc_b = params["enc.b"][:, None].copy()
        self._enc_g = params["enc.g"][:, None].copy()
        self._enc_beta = params["enc.beta"][:, None].copy()
        self._enc_extra = [
            (np.ascontiguousarray(params[f"enc{d}.w"]),
             params[f"enc{d}.b"][:, None].copy(),
             params[f"enc{d}.g"][:, None].copy(),
             params[f"enc{d}.beta"][:, None].copy())
            for d in range(1, encoder_depth_of(params))]
        self._w1 = np.ascontiguousarray(
            np.concatenate([params[f"q{m}.b1.w"] for m in range(self.ensemble)], axis=0))
        self._b1 = np.concatenate(
            [params[f"q{m}.b1.b"] for m in range(self.ensemble)])[:, None].copy()
        self._g1 = np.concatenate(
            [params[f"q{m}.b1.g"] for m in range(self.ensemble)])[:, None].copy()
        self._beta1 = np.concatenate(
            [params[f"q{m}.b1.beta"] for m in range(self.ensemble)])[:, None].copy()
        self._w2 = [np.ascontiguousarray(params[f"q{m}.b2.w"]) for m in range(self.ensemble)]
        self._b2 = [params[f"q{m}.b2.b"][:, None].copy() for m in range(self.ensemble)]
        self._g2 = [params[f"q{m}.b2.g"][:, None].copy() for m in range(self.ensemble)]
        self._beta2 = [params[f"q{m}.b2.beta"][:, None].copy() for m in range(self.ensemble)]
        self._wd = [np.ascontiguousarray(params[f"q{m}.out.w"]) for m in range(self.ensemble)]
        self._bd = [params[f"q{m}.out.b"][:, None].copy() for m in range(self.ensemble)]
        self._max_cached = max_cached_tasks
        self._zcache: dict[bytes, tuple[np.ndarray, np.ndarray]] = {}

    def _z_projection(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        key = z.tobytes()
        hit = self._zcache.get(key)
        if hit is not None:
            return hit
        z32 = np.asarray(z, dtype=np.float32)
        if z32.shape != (self.z_dim,):
            raise ValueError(f"task embedding must have dim {self.z_dim}, got {z32.shape}")
        proj = (self._wz_i @ z32, self._wz_j @ z32)
        if len(self._zcache) >= self._max_cached:
            self._zcache.pop(next(iter(self._zcache)))
        self._zcache[key] = proj
        return proj

    @staticmethod
    def _ln_leaky(x: np.ndarray, g: np.ndarray, beta: np.ndarray) -> np.ndarray:
        # feature axis is axis 0 in the transposed inference layout
        mu = x.mean(axis=0, keepdims=True)
        xc = x - mu
        var = np.mean(xc * xc, axis=0, keepdims=True)
        y = g * (xc / np.sqrt(var + LN_EPS)) + beta
        return np.where(y > 0, y, LEAKY_SLOPE * y)

    def team_q(self, obs: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Clipped q values [n, 9] for a whole team in one pass."""
        obs32 = np.ascontiguousarray(obs, dtype=np.float32)
        n = obs32.shape[0]
        zi = np.empty((self.hidden, n), np.float32)
        zj = np.empty((self.hidden, n), np.float32)
        for t in range(n):
            pi, pj = self._z_projection(np.ascontiguousarray(z[t]))
            zi[:, t] = pi
            zj[:, t] = pj
        obs_t = obs32.T.copy()
        left = self._wo_i @ obs_t + zi + self._enc_b
        right = self._wo_j @ obs_t + zj
        pairs = left[:, :, None] + right[:, None, :]          # [h, i, j]
        pairs = self._ln_leaky(pairs, self._enc_g[..., None], self._enc_beta[..., None])
        for w_e, b_e, g_e, beta_e in self._enc_extra:
            flat = pairs.reshape(self.hidden, n * n)
            pairs = self._ln_leaky(w_e @ flat + b_e, g_e, beta_e).reshape(
                self.hidden, n, n)
        s = np.mean(pairs, axis=2, dtype=np.float64).astype(np.float32)
        h1 = self._ln_leaky_members(self._w1 @ s + self._b1, self._g1, self._beta1)
        q = None
        hid = self.hidden
        for m in range(self.ensemble):
            h1_m = h1[m * hid:(m + 1) * hid]
            h2 = self._ln_leaky(self._w2[m] @ h1_m + self._b2[m], self._g2[m], self._beta2[m])
            out = self._wd[m] @ h2 + self._bd[m]
            adv = out[1:]
            q_m = out[:1] + adv - np.mean(adv, axis=0, keepdims=True, dtype=np.float64).astype(np.float32)
            q = q_m if q is None else np.minimum(q, q_m)
        return np.ascontiguousarray(q.T)

    def _ln_leaky_members(self, x: np.ndarray, g: np.ndarray, beta: np.ndarray) -> np.ndarray:
        # normalize each member's slice separately
        hid = self.hidden
        out = np.empty_like(x)
        for m in range(self.ensemble):
            sl = slice(m * hid, (m + 1) * hid)
            out[sl] = self._ln_leaky(x[sl], g[sl], beta[sl])
        return out

    def act_team(self, team: TeamObservation, temperature: float,
                 rng: np.random.Generator) -> np.ndarray:
        """Boltzmann actions for every agent; one uniform draw per agent,
        in agent-index order."""
        q = self.team_q(team.obs, team.z)
        return np.array([boltzmann_action(q[i], temperature, rng)
                         for i in range(len(q))], dtype=np.int64)

    def act_decentralized(self, own_obs: np.ndarray, own_z: np.ndarray,
                          neighbors: list[tuple[np.ndarray, np.ndarray]],
                          temperature: float, rng: np.random.Generator,
                          return_q: bool = False):
        """One agent's action from its own observation plus neighbor data.

        Equivalent to that agent's slice of :meth:`act_team` (identical
        q bits given the same inputs) — everything is computable on-robot.
        """
        obs = np.stack([np.asarray(own_obs, dtype=np.float32)]
                       + [np.asarray(o, dtype=np.float32) for o, _ in neighbors])
        z = np.stack([np.asarray(own_z, dtype=np.float32)]
                     + [np.asarray(zz, dtype=np.float32) for _, zz in neighbors])
        q = self.team_q(obs, z)
        action = boltzmann_action(q[0], temperature, rng)
        return (action, q[0]) if return_q else action


def act_team(params: Params, team: TeamObservation, temperature: float,
             rng: np.random.Generator) -> np.ndarray:
    """One-shot convenience wrapper; reuse :class:`PolicyInference` in loops."""
    return PolicyInference(params).act_team(team, temperature, rng)


def act_decentralized(params: Params, own_obs, own_z, neighbors,
                      temperature: float, rng: np.random.Generator,
                      return_q: bool = False):
    return PolicyInference(params).act_decentralized(
        own_obs, own_z, neighbors, temperature, rng, return_q)
