"""Offline TD objective family: Max Q, Mean Q, Soft Q, and CQL.

All four differ only in how the next-state value is estimated from the
target network's clipped q vector — a one-line change.  Mean Q IS the
policy-weighted (expected-SARSA-style) value under uniform weights, and
the mean-kind estimator literally calls that shared code path, so the two
agree bitwise.  Soft Q interpolates: temperature -> 0 recovers Max Q,
temperature -> infinity recovers Mean Q.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import MultiAgentBatch, N_ACTIONS
from .nn import NonFiniteError, Params, check_finite, logsumexp, softmax
from .policy import policy_q_backward, policy_q_forward

KINDS = ("max", "mean", "soft", "cql")


@dataclass(frozen=True)
class ObjectiveConfig:
    """Which bootstrap estimator to use, plus its kind-specific knobs."""

    kind: str
    temperature: float | None = None
    cql_alpha: float | None = None
    gamma: float = 0.95

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind == "soft":
            if self.temperature is None or self.temperature <= 0:
                raise ValueError("soft objective requires temperature > 0")
        elif self.temperature is not None:
            raise ValueError(f"temperature is only valid for soft, not {self.kind}")
        if self.kind == "cql":
            if self.cql_alpha is None or self.cql_alpha < 0:
                raise ValueError("cql objective requires cql_alpha >= 0")
        elif self.cql_alpha is not None:
            raise ValueError(f"cql_alpha is only valid for cql, not {self.kind}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")

    @property
    def label(self) -> str:
        if self.kind == "soft":
            return f"soft:{self.temperature:g}"
        if self.kind == "cql":
            return f"cql:{self.cql_alpha:g}"
        return self.kind


def parse_objective(text: str, gamma: float = 0.95) -> ObjectiveConfig:
    """Parse CLI syntax: ``max | mean | soft:<tau> | cql:<alpha>``."""
    kind, _, arg = text.partition(":")
    if kind == "soft":
        return ObjectiveConfig("soft", temperature=float(arg), gamma=gamma)
    if kind == "cql":
        return ObjectiveConfig("cql", cql_alpha=float(arg), gamma=gamma)
    if arg:
        raise ValueError(f"{kind} objective takes no argument, got {text!r}")
    return ObjectiveConfig(kind, gamma=gamma)


def expected_sarsa_value(q_next: np.ndarray, policy_weights: np.ndarray) -> np.ndarray:
    """Policy-weighted next-state value, sum_a w_a * q[a].

    Weights must lie on the simplex (sum to 1 within 1e-9).
    """
    w = np.asarray(policy_weights)
    if w.shape[-1] != q_next.shape[-1]:
        raise ValueError("weights and q vector length differ")
    total = np.sum(w, axis=-1)
    if np.any(np.abs(total - 1.0) > 1e-9):
        raise ValueError(f"policy weights must sum to 1, got {total}")
    return np.einsum("...a,...a->...", q_next, w)


def next_value(q_next: np.ndarray, config: ObjectiveConfig) -> np.ndarray:
    """Bootstrap value of the next state under the configured estimator."""
    if config.kind in ("max", "cql"):
        return np.max(q_next, axis=-1)
    if config.kind == "mean":
        w = np.full(q_next.shape[-1], 1.0 / q_next.shape[-1], dtype=q_next.dtype)
        return expected_sarsa_value(q_next, w)
    w = softmax(q_next, config.temperature)
    return np.einsum("...a,...a->...", q_next, w)


@dataclass(frozen=True)
class TdStats:
    """Per-update diagnostics for the training monitor."""

    loss: float
    mean_chosen_q: float
    mean_target: float
    max_abs_q: float
    cql_penalty: float = 0.0


def td_loss(batch: MultiAgentBatch, params: Params, target_params: Params,
            config: ObjectiveConfig) -> tuple[float, dict, TdStats]:
    """Squared TD error against a stop-gradient clipped-double-Q target.

    Per agent: target = r + (1 - d) * gamma * estimator(min-ensemble
    target q at the next state).  Every ensemble member regresses on the
    same target; for CQL, alpha * mean(logsumexp_a q(s, a) - q(s, a_data))
    is added per member.  Raises :class:`NonFiniteError` when values blow
    up (the overextrapolation detector).
    """
    q_next_members, _ = policy_q_forward(target_params, batch.next_obs, batch.z)
    q_next = q_next_members.min(axis=-2)
    nv = next_value(q_next.astype(np.float64), config)
    target = batch.rewards + (1.0 - batch.dones) * config.gamma * nv
    check_finite("td target", target)

    q_members, caches = policy_q_forward(params, batch.obs, batch.z)
    m_count = q_members.shape[-2]
    rows = batch.batch_size * batch.n_agents
    a = batch.actions[..., None, None]
    chosen = np.take_along_axis(
        q_members, np.broadcast_to(a, q_members.shape[:-1] + (1,)), axis=-1)[..., 0]
    err = chosen - target[..., None].astype(chosen.dtype)

    dq = np.zeros_like(q_members)
    np.put_along_axis(dq, np.broadcast_to(a, q_members.shape[:-1] + (1,)),
                      (2.0 * err / (rows * m_count))[..., None], axis=-1)
    loss = float(np.mean(err.astype(np.float64) ** 2))

    penalty = 0.0
    if config.kind == "cql":
        lse = logsumexp(q_members.astype(np.float64))
        penalty = float(np.mean(lse - chosen.astype(np.float64)))
        loss += config.cql_alpha * penalty
        probs = softmax(q_members.astype(np.float64), 1.0)
        dcql = probs * (config.cql_alpha / (rows * m_count))
        np.put_along_axis(
            dcql, np.broadcast_to(a, q_members.shape[:-1] + (1,)),
            np.take_along_axis(dcql, np.broadcast_to(a, q_members.shape[:-1] + (1,)), axis=-1)
            - config.cql_alpha / (rows * m_count), axis=-1)
        dq = dq + dcql.astype(dq.dtype)

    if not np.isfinite(loss):
        raise NonFiniteError(
            f"non-finite TD loss (max |q| = {np.max(np.abs(q_members)):.3g}, "
            f"max |target| = {np.max(np.abs(target)):.3g}) — likely overextrapolation")

    grads: dict = {}
    policy_q_backward(dq, caches, params, grads)
    stats = TdStats(
        loss=loss,
        mean_chosen_q=float(np.mean(chosen, dtype=np.float64)),
        mean_target=float(np.mean(target)),
        max_abs_q=float(np.max(np.abs(q_members))),
        cql_penalty=penalty,
    )
    return loss, grads, stats
