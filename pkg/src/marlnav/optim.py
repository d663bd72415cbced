"""AdamW with linear warmup, plus Polyak target averaging."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import Grads, Params


@dataclass(frozen=True)
class WarmupSchedule:
    """Linear warmup to ``base_lr`` over ``warmup_steps``, constant after.

    Step 0 maps to lr 0; step ``warmup_steps`` to ``base_lr``.  With
    ``warmup_steps == 0`` the schedule is constant from the start.
    """

    base_lr: float
    warmup_steps: int = 0

    def __call__(self, step: int) -> float:
        if self.warmup_steps <= 0 or step >= self.warmup_steps:
            return self.base_lr
        return self.base_lr * step / self.warmup_steps


@dataclass
class AdamW:
    """Decoupled-weight-decay Adam over a flat parameter dict.

    ``lr(step)`` comes from the schedule; decay is applied as
    ``p -= lr * weight_decay * p`` after the moment update.
    """

    schedule: WarmupSchedule
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-4
    step_count: int = 0
    _m: Params = field(default_factory=dict, repr=False)
    _v: Params = field(default_factory=dict, repr=False)

    def step(self, params: Params, grads: Grads) -> float:
        """One in-place update; returns the learning rate used."""
        lr = self.schedule(self.step_count)
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for k, p in params.items():
            g = np.asarray(grads[k], dtype=p.dtype)
            if k not in self._m:
                self._m[k] = np.zeros_like(p)
                self._v[k] = np.zeros_like(p)
            m, v = self._m[k], self._v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                p -= lr * self.weight_decay * p
        return lr


def polyak_update(target: Params, online: Params, tau: float) -> None:
    """In-place ``target = (1 - tau) * target + tau * online``."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    for k, t in target.items():
        t *= 1.0 - tau
        t += tau * online[k]
