"""Offline training orchestration.

One "epoch" is one gradient update on one freshly sampled joint batch —
with on-the-fly combinatorial sampling there is no dataset pass to speak
of.  Each epoch also Polyak-averages the target network; evaluation
rollouts run every ``eval_cadence`` epochs and at the end.

The trainer tracks a running mean of the chosen-action q values against
the analytic return bound; Max Q is expected to breach it on random-walk
data (that breach IS the overextrapolation finding, recorded with its
epoch), while Mean/Soft Q should stay inside.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import save_params
from .corpus import CorpusSplit
from .data import (ACTION_SPEED, ArenaConfig, BatchSampler, TransitionLog)
from .nn import NonFiniteError
from .objectives import ObjectiveConfig, parse_objective, td_loss
from .optim import AdamW, WarmupSchedule, polyak_update
from .policy import PolicyInference, init_policy_params, target_copy
from .sim import EvalReport, KinematicEnv, evaluate

log = logging.getLogger(__name__)


def return_bound(arena: ArenaConfig, gamma: float, dt: float = 1.0) -> float:
    """Analytic ceiling on |Q| for collision-free random-walk data.

    Per-step reward is at most (max step length) * (1 + 2 * max speed);
    the geometric series bounds the discounted return, and one collision
    penalty of slack is added on top.
    """
    r_max = ACTION_SPEED * dt * (1.0 + 2.0 * ACTION_SPEED)
    return r_max / (1.0 - gamma) + arena.collision_penalty


@dataclass(frozen=True)
class RunConfig:
    """Full experiment descriptor; defaults follow the shared RL table."""

    objective: ObjectiveConfig
    batch_size: int = 256
    lr: float = 1e-4
    warmup: int = 1000
    weight_decay: float = 1e-4
    polyak: float = 0.0005
    hidden: int = 1024
    ensemble: int = 2
    encoder_depth: int = 1
    n_agents: int = 3
    epochs: int = 20_000
    eval_cadence: int = 1000
    eval_episodes: int = 5
    eval_steps: int = 50
    eval_temperature: float = 0.01
    eval_threshold: float = 0.25
    eval_radius: float = 0.25
    seed: int = 0
    subset_fraction: float = 1.0
    log_every: int = 100

    def __post_init__(self):
        for name in ("batch_size", "hidden", "ensemble", "n_agents", "epochs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.subset_fraction <= 1.0:
            raise ValueError("subset_fraction must be in (0, 1]")

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["objective"] = self.objective.label
        d["gamma"] = self.objective.gamma
        return d

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        raw = json.loads(Path(path).read_text())
        gamma = raw.pop("gamma", 0.95)
        raw["objective"] = parse_objective(raw["objective"], gamma=gamma)
        return cls(**raw)


@dataclass
class TrainLog:
    """Per-checkpoint scalar records plus evaluation snapshots."""

    records: list[dict] = field(default_factory=list)
    evals: list[dict] = field(default_factory=list)
    breach_epoch: int | None = None
    diverged_epoch: int | None = None

    def save(self, path: str | Path) -> None:
        with open(path, "w") as f:
            for rec in self.records:
                f.write(json.dumps({"type": "train", **rec}) + "\n")
            for rec in self.evals:
                f.write(json.dumps({"type": "eval", **rec}) + "\n")
            f.write(json.dumps({
                "type": "summary",
                "breach_epoch": self.breach_epoch,
                "diverged_epoch": self.diverged_epoch,
            }) + "\n")


@dataclass
class TrainResult:
    params: dict
    target_params: dict
    train_log: TrainLog
    config: RunConfig

    @property
    def diverged(self) -> bool:
        return self.train_log.diverged_epoch is not None


def subsample(log_data: TransitionLog, fraction: float, seed: int = 0) -> TransitionLog:
    """Uniform subsample without replacement, original order preserved."""
    if not 0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    n = len(log_data)
    keep = max(1, round(n * fraction))
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=keep, replace=False))
    return TransitionLog(
        s_p=log_data.s_p[idx], s_v=log_data.s_v[idx], a=log_data.a[idx],
        sp_p=log_data.sp_p[idx], sp_v=log_data.sp_v[idx], period=log_data.period)


def train(config: RunConfig, log_data: TransitionLog, split: CorpusSplit,
          store, arena: ArenaConfig = ArenaConfig(),
          eval_env: KinematicEnv | None = None,
          out_dir: str | Path | None = None) -> TrainResult:
    """Run one offline training job; deterministic for a fixed config."""
    seq = np.random.SeedSequence(config.seed)
    init_rng, sample_rng = (np.random.default_rng(s) for s in seq.spawn(2))

    if config.subset_fraction < 1.0:
        log_data = subsample(log_data, config.subset_fraction, config.seed)

    z_dim = store.dim
    params = init_policy_params(init_rng, z_dim, config.hidden, config.ensemble,
                                config.encoder_depth)
    target_params = target_copy(params)
    sampler = BatchSampler(log_data, list(split.train), store,
                           config.n_agents, config.batch_size, arena)
    opt = AdamW(WarmupSchedule(config.lr, config.warmup),
                weight_decay=config.weight_decay)
    bound = return_bound(arena, config.objective.gamma)
    if eval_env is None:
        eval_env = KinematicEnv(arena=dataclasses.replace(arena, radius=config.eval_radius))

    train_log = TrainLog()
    q_running = 0.0
    started = time.perf_counter()
    for epoch in range(config.epochs):
        batch = sampler.sample(sample_rng)
        try:
            loss, grads, stats = td_loss(batch, params, target_params, config.objective)
        except NonFiniteError as e:
            log.warning("run diverged at epoch %d: %s", epoch, e)
            train_log.diverged_epoch = epoch
            train_log.records.append({"epoch": epoch, "diverged": True, "error": str(e)})
            break
        lr = opt.step(params, grads)
        polyak_update(target_params, params, config.polyak)

        q_running = 0.99 * q_running + 0.01 * stats.mean_chosen_q
        breached = q_running > bound or stats.mean_chosen_q > bound
        if breached and train_log.breach_epoch is None:
            train_log.breach_epoch = epoch
            log.info("%s: running mean q %.2f breached bound %.2f at epoch %d",
                     config.objective.label, q_running, bound, epoch)
        if epoch % config.log_every == 0 or epoch == config.epochs - 1:
            train_log.records.append({
                "epoch": epoch, "loss": loss, "lr": lr,
                "mean_q": stats.mean_chosen_q, "mean_q_running": q_running,
                "mean_target": stats.mean_target, "breached": bool(breached),
            })
        if config.eval_cadence and (epoch + 1) % config.eval_cadence == 0:
            _run_eval(train_log, epoch + 1, params, eval_env, split, store, config)
            if out_dir is not None:
                ckpt_dir = Path(out_dir)
                ckpt_dir.mkdir(parents=True, exist_ok=True)
                save_params(ckpt_dir / f"policy_{epoch + 1:07d}.ckpt", params,
                            {"config": config.to_json(), "epoch": epoch + 1})

    if config.eval_cadence and not train_log.diverged_epoch \
            and config.epochs % config.eval_cadence != 0:
        _run_eval(train_log, config.epochs, params, eval_env, split, store, config)
    log.info("%s: %d epochs in %.1f s", config.objective.label,
             config.epochs, time.perf_counter() - started)

    result = TrainResult(params, target_params, train_log, config)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        meta = {"config": config.to_json(), "z_dim": z_dim,
                "diverged": result.diverged,
                "breach_epoch": train_log.breach_epoch}
        save_params(out_dir / "policy.ckpt", params, meta)
        train_log.save(out_dir / "train_log.jsonl")
    return result


def _run_eval(train_log: TrainLog, epoch: int, params, eval_env, split, store,
              config: RunConfig) -> EvalReport:
    engine = PolicyInference(params)
    report = evaluate(eval_env, engine, split, store, config.n_agents,
                      episodes=config.eval_episodes, steps=config.eval_steps,
                      threshold=config.eval_threshold, arena=eval_env.arena,
                      temperature=config.eval_temperature, seed=config.seed)
    for side in ("train", "test"):
        train_log.evals.append({
            "epoch": epoch, "split": side,
            "episodes": len(getattr(report, side)),
            "successes": report.successes(side),
            "collisions": report.collisions(side),
            "mean_distance": report.mean_distance(side),
        })
    return report


def sweep(configs: list[RunConfig], log_data: TransitionLog, split: CorpusSplit,
          store, arena: ArenaConfig = ArenaConfig(),
          out_dir: str | Path | None = None) -> list[dict]:
    """Train every config and tabulate final evaluation metrics."""
    rows = []
    for config in configs:
        result = train(config, log_data, split, store, arena,
                       out_dir=None if out_dir is None
                       else Path(out_dir) / config.objective.label.replace(":", "_"))
        final_evals = {e["split"]: e for e in result.train_log.evals[-2:]}
        rows.append({
            "objective": config.objective.label,
            "diverged_epoch": result.train_log.diverged_epoch,
            "breach_epoch": result.train_log.breach_epoch,
            **{f"{side}_{k}": final_evals.get(side, {}).get(k)
               for side in ("train", "test")
               for k in ("successes", "episodes", "collisions", "mean_distance")},
        })
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        with open(Path(out_dir) / "sweep.jsonl", "w") as f:
            for row in rows:
                f.write(json.dumps(row) + "\n")
    return rows


def format_sweep_table(rows: list[dict]) -> str:
    headers = ["objective", "test succ", "test coll", "test dist",
               "train succ", "breach", "diverged"]
    lines = ["  ".join(f"{h:>11}" for h in headers)]
    for r in rows:
        def fmt(x, nd=2):
            return "-" if x is None else (f"{x:.{nd}f}" if isinstance(x, float) else str(x))
        succ = f"{fmt(r['test_successes'])}/{fmt(r['test_episodes'])}"
        tsucc = f"{fmt(r['train_successes'])}/{fmt(r['train_episodes'])}"
        lines.append("  ".join(f"{v:>11}" for v in (
            r["objective"], succ, fmt(r["test_collisions"]),
            fmt(r["test_mean_distance"]), tsucc,
            fmt(r["breach_epoch"]), fmt(r["diverged_epoch"]))))
    return "\n".join(lines)
