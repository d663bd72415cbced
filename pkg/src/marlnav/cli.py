"""Command-line entry points.

Subcommand groups mirror the pipeline: ``corpus`` -> ``embed`` ->
``data`` -> ``train``/``sweep`` -> ``sim``/``serve``.  Run
``marlnav <group> --help`` for details.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import embeddings as emb_mod
from .checkpoint import load_params, save_params
from .data import ArenaConfig, collect_random, load_log, permutation_count, save_log
from .embeddings import (DecoderHParams, SyntheticEmbedder, eval_decoder,
                         fetch_remote, load_embeddings, save_embeddings,
                         train_decoder)
from .objectives import parse_objective
from .policy import PolicyInference
from .sim import KinematicEnv, evaluate, rollout
from .server import SessionServer, TaskResolver
from .train import RunConfig, format_sweep_table, sweep, train

log = logging.getLogger(__name__)


def _add_arena_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--arena-side", type=float, default=3.8)
    p.add_argument("--radius", type=float, default=0.4)
    p.add_argument("--k", type=float, default=corpus_mod.DEFAULT_K)


def _arena(args) -> ArenaConfig:
    return ArenaConfig(side=args.arena_side, radius=args.radius, k=args.k)


def _load_split(args) -> corpus_mod.CorpusSplit:
    tasks = corpus_mod.load_corpus(args.corpus)
    rule = corpus_mod.HoldoutRule(test_size=args.test_size)
    return corpus_mod.split_corpus(tasks, rule, seed=args.split_seed)


def _load_store(args, tasks):
    if args.embeddings:
        return load_embeddings(args.embeddings)
    embedder = SyntheticEmbedder(dim=args.dim, seed=args.embed_seed,
                                 noise=args.noise, k=args.k)
    return embedder.build_store(tasks)


def _add_store_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--embeddings", help="embedding file; omit for the synthetic provider")
    p.add_argument("--dim", type=int, default=64, help="synthetic embedding dim")
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--embed-seed", type=int, default=0)


# -- corpus ------------------------------------------------------------------

def cmd_corpus_generate(args) -> int:
    tasks = corpus_mod.generate_corpus(k=args.k)
    corpus_mod.save_corpus(args.out, tasks)
    print(f"wrote {len(tasks)} tasks to {args.out}")
    return 0


def cmd_corpus_split(args) -> int:
    tasks = corpus_mod.load_corpus(args.corpus)
    rule = corpus_mod.HoldoutRule(
        test_size=args.test_size,
        exclude_templates=tuple(args.exclude_template or ()),
        exclude_locations=tuple(args.exclude_location or ()))
    split = corpus_mod.split_corpus(tasks, rule, seed=args.seed)
    corpus_mod.save_corpus(args.train_out, list(split.train))
    corpus_mod.save_corpus(args.test_out, list(split.test))
    print(f"train: {len(split.train)} -> {args.train_out}")
    print(f"test:  {len(split.test)} -> {args.test_out}")
    return 0


# -- embeddings ----------------------------------------------------------------

def cmd_embed_synth(args) -> int:
    tasks = corpus_mod.load_corpus(args.corpus)
    embedder = SyntheticEmbedder(dim=args.dim, seed=args.embed_seed,
                                 noise=args.noise, k=args.k)
    save_embeddings(args.out, embedder.build_store(tasks))
    print(f"wrote {len(tasks)} synthetic embeddings (dim {args.dim}) to {args.out}")
    return 0


def cmd_embed_load(args) -> int:
    store = load_embeddings(args.file)
    print(f"{args.file}: {len(store)} embeddings, dim {store.dim}")
    return 0


def cmd_embed_fetch(args) -> int:
    tasks = corpus_mod.load_corpus(args.corpus)
    store = fetch_remote(args.endpoint, [t.text for t in tasks],
                         timeout=args.timeout)
    save_embeddings(args.out, store)
    print(f"fetched {len(store)} embeddings from {args.endpoint} -> {args.out}")
    return 0


def cmd_embed_decode_eval(args) -> int:
    tasks = corpus_mod.load_corpus(args.corpus)
    split = corpus_mod.split_corpus(
        tasks, corpus_mod.HoldoutRule(test_size=args.test_size), seed=args.split_seed)
    store = _load_store(args, tasks)
    hp = DecoderHParams(steps=args.steps, seed=args.seed)
    decoder = train_decoder(store, split, hp)
    train_err = eval_decoder(decoder, store, list(split.train))
    test_err = eval_decoder(decoder, store, list(split.test))
    print(f"decoder mean position error: train {train_err:.4f} m, "
          f"test {test_err:.4f} m ({len(split.test)} held-out tasks)")
    return 0


# -- data ---------------------------------------------------------------------

def cmd_data_collect(args) -> int:
    env = KinematicEnv(arena=_arena(args), beta_v=args.beta_v,
                       noise_std=args.env_noise)
    log_data = collect_random(env, args.steps, seed=args.seed)
    save_log(args.out, log_data)
    print(f"collected {len(log_data)} transitions "
          f"({log_data.duration_minutes:.0f} min at {1/log_data.period:g} Hz) -> {args.out}")
    return 0


def cmd_data_stats(args) -> int:
    log_data = load_log(args.file)
    speeds = np.linalg.norm(log_data.sp_v, axis=1)
    counts = np.bincount(log_data.a, minlength=9)
    print(f"{args.file}: {len(log_data)} transitions, "
          f"{log_data.duration_minutes:.1f} min at period {log_data.period}s")
    print(f"action counts: {counts.tolist()}")
    print(f"speed: mean {speeds.mean():.3f} m/s, max {speeds.max():.3f} m/s")
    print(f"joint 5-agent configurations: {permutation_count(len(log_data), 5):.3e}")
    return 0


# -- training -------------------------------------------------------------------

def cmd_train(args) -> int:
    config = RunConfig.from_file(args.config)
    arena = _arena(args)
    log_data = load_log(args.log)
    tasks = corpus_mod.load_corpus(args.corpus)
    split = corpus_mod.split_corpus(
        tasks, corpus_mod.HoldoutRule(test_size=args.test_size), seed=args.split_seed)
    store = _load_store(args, tasks)
    result = train(config, log_data, split, store, arena, out_dir=args.out)
    last = [e for e in result.train_log.evals if e["split"] == "test"]
    if last:
        print(f"final test: {last[-1]['successes']}/{last[-1]['episodes']} tasks, "
              f"{last[-1]['collisions']} collisions, "
              f"mean distance {last[-1]['mean_distance']:.3f} m")
    if result.diverged:
        print(f"run diverged at epoch {result.train_log.diverged_epoch}")
    print(f"artifacts in {args.out}")
    return 0


def cmd_sweep(args) -> int:
    grid = json.loads(Path(args.grid).read_text())
    base = {k: v for k, v in grid.items() if k != "objectives"}
    gamma = base.pop("gamma", 0.95)
    configs = [RunConfig(objective=parse_objective(o, gamma=gamma), **base)
               for o in grid["objectives"]]
    arena = _arena(args)
    log_data = load_log(args.log)
    tasks = corpus_mod.load_corpus(args.corpus)
    split = corpus_mod.split_corpus(
        tasks, corpus_mod.HoldoutRule(test_size=args.test_size), seed=args.split_seed)
    store = _load_store(args, tasks)
    rows = sweep(configs, log_data, split, store, arena, out_dir=args.out)
    print(format_sweep_table(rows))
    return 0


# -- simulation -------------------------------------------------------------------

def _engine(args) -> PolicyInference:
    params, meta = load_params(args.checkpoint)
    return PolicyInference(params)


def cmd_sim_rollout(args) -> int:
    arena = dataclasses.replace(_arena(args), radius=args.eval_radius)
    env = KinematicEnv(arena=arena, beta_v=args.beta_v, noise_std=args.env_noise)
    tasks = corpus_mod.load_corpus(args.corpus)
    store = _load_store(args, tasks)
    rng = np.random.default_rng(args.seed)
    picked = [tasks[i] for i in
              rng.choice(len(tasks), size=args.agents, replace=False)]
    traj, metrics = rollout(env, _engine(args), picked, store, args.steps, rng,
                            arena=arena, record=bool(args.out))
    for t, task in enumerate(picked):
        print(f"agent {t}: {task.text!r} -> goal {task.goal}")
    print(f"mean distance {metrics.mean_distance:.3f} m, final "
          f"{metrics.final_distance:.3f} m, collisions {metrics.collisions}, "
          f"success {metrics.success}")
    if args.out:
        traj.save(args.out)
        print(f"trajectory -> {args.out}")
    return 0


def cmd_sim_evaluate(args) -> int:
    arena = dataclasses.replace(_arena(args), radius=args.eval_radius)
    env = KinematicEnv(arena=arena, beta_v=args.beta_v, noise_std=args.env_noise)
    split = _load_split(args)
    tasks = corpus_mod.load_corpus(args.corpus)
    store = _load_store(args, tasks)
    report = evaluate(env, _engine(args), split, store, args.agents,
                      episodes=args.episodes, steps=args.steps, seed=args.seed,
                      arena=arena)
    for side in (args.split,) if args.split else ("train", "test"):
        results = getattr(report, side)
        print(f"{side}: {report.successes(side)}/{len(results)} tasks solved, "
              f"{report.collisions(side)} collisions, "
              f"mean distance {report.mean_distance(side):.3f} m")
        if args.verbose:
            for r in results:
                print(f"  {'ok ' if r.metrics.success else 'MISS'} "
                      f"final {r.metrics.final_distance:.3f} m  {r.text}")
    return 0


# -- serving ------------------------------------------------------------------

def cmd_serve(args) -> int:
    params, meta = load_params(args.checkpoint)
    engine = PolicyInference(params)
    tasks = corpus_mod.load_corpus(args.corpus) if args.corpus else []
    store = load_embeddings(args.embeddings) if args.embeddings else None
    embedder = None
    if args.provider == "synth":
        embedder = SyntheticEmbedder(dim=engine.z_dim, seed=args.embed_seed,
                                     noise=args.noise, k=args.k)
    resolver = TaskResolver.for_corpus(tasks, store, embedder, k=args.k)
    arena = ArenaConfig(side=args.arena_side, radius=args.eval_radius, k=args.k)
    env = KinematicEnv(arena=arena, beta_v=args.beta_v, noise_std=args.env_noise)
    server = SessionServer(engine, resolver, env, host=args.host, port=args.port,
                           default_agents=args.agents,
                           default_tick_period=args.tick_period)
    host, port = server.address
    print(f"serving on http://{host}:{port}  (Ctrl-C to stop)", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="marlnav", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="group", required=True)

    corpus_p = sub.add_parser("corpus", help="task corpus tools")
    corpus_sub = corpus_p.add_subparsers(dest="cmd", required=True)
    p = corpus_sub.add_parser("generate")
    p.add_argument("--k", type=float, default=corpus_mod.DEFAULT_K)
    p.add_argument("--out", default="corpus.jsonl")
    p.set_defaults(func=cmd_corpus_generate)
    p = corpus_sub.add_parser("split")
    p.add_argument("--corpus", default="corpus.jsonl")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-size", type=int, default=8)
    p.add_argument("--exclude-template", type=int, action="append")
    p.add_argument("--exclude-location", type=int, action="append")
    p.add_argument("--train-out", default="train_tasks.jsonl")
    p.add_argument("--test-out", default="test_tasks.jsonl")
    p.set_defaults(func=cmd_corpus_split)

    embed_p = sub.add_parser("embed", help="embedding providers and decoder")
    embed_sub = embed_p.add_subparsers(dest="cmd", required=True)
    p = embed_sub.add_parser("synth")
    p.add_argument("--corpus", default="corpus.jsonl")
    p.add_argument("--dim", type=int, default=768)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--embed-seed", type=int, default=0)
    p.add_argument("--k", type=float, default=corpus_mod.DEFAULT_K)
    p.add_argument("--out", default="embeddings.jsonl")
    p.set_defaults(func=cmd_embed_synth)
    p = embed_sub.add_parser("load")
    p.add_argument("file")
    p.set_defaults(func=cmd_embed_load)
    p = embed_sub.add_parser("fetch")
    p.add_argument("--corpus", default="corpus.jsonl")
    p.add_argument("--endpoint", required=True)
    p.add_argument("--timeout", type=float, default=10.0)
    p.add_argument("--out", default="embeddings.jsonl")
    p.set_defaults(func=cmd_embed_fetch)
    p = embed_sub.add_parser("decode-eval")
    p.add_argument("--corpus", default="corpus.jsonl")
    p.add_argument("--test-size", type=int, default=8)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=20_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=float, default=corpus_mod.DEFAULT_K)
    _add_store_args(p)
    p.set_defaults(func=cmd_embed_decode_eval)

    data_p = sub.add_parser("data", help="transition log tools")
    data_sub = data_p.add_subparsers(dest="cmd", required=True)
    p = data_sub.add_parser("collect")
    p.add_argument("--steps", type=int, default=5400)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--beta-v", type=float, default=0.3)
    p.add_argument("--env-noise", type=float, default=0.02)
    p.add_argument("--out", default="transitions.jsonl")
    _add_arena_args(p)
    p.set_defaults(func=cmd_data_collect)
    p = data_sub.add_parser("stats")
    p.add_argument("file")
    p.set_defaults(func=cmd_data_stats)

    p = sub.add_parser("train", help="offline training run")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--log", default="transitions.jsonl")
    p.add_argument("--corpus", default="corpus.jsonl")
    p.add_argument("--test-size", type=int, default=8)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--out", default="runs/run0")
    _add_store_args(p)
    _add_arena_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="objective comparison sweep")
    p.add_argument("--grid", required=True,
                   help='JSON: {"objectives": ["mean", "soft:1", ...], ...shared knobs}')
    p.add_argument("--log", default="transitions.jsonl")
    p.add_argument("--corpus", default="corpus.jsonl")
    p.add_argument("--test-size", type=int, default=8)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--out", default="runs/sweep")
    _add_store_args(p)
    _add_arena_args(p)
    p.set_defaults(func=cmd_sweep)

    sim_p = sub.add_parser("sim", help="rollouts and evaluation")
    sim_sub = sim_p.add_subparsers(dest="cmd", required=True)
    for name in ("rollout", "evaluate"):
        p = sim_sub.add_parser(name)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--corpus", default="corpus.jsonl")
        p.add_argument("--agents", type=int, default=3)
        p.add_argument("--steps", type=int, default=50)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--beta-v", type=float, default=0.3)
        p.add_argument("--env-noise", type=float, default=0.02)
        p.add_argument("--eval-radius", type=float, default=0.25)
        _add_store_args(p)
        _add_arena_args(p)
        if name == "rollout":
            p.add_argument("--out", help="trajectory JSONL")
            p.set_defaults(func=cmd_sim_rollout)
        else:
            p.add_argument("--split", choices=("train", "test"))
            p.add_argument("--episodes", type=int, default=None)
            p.add_argument("--test-size", type=int, default=8)
            p.add_argument("--split-seed", type=int, default=0)
            p.set_defaults(func=cmd_sim_evaluate)

    p = sub.add_parser("serve", help="host a live policy session service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus")
    p.add_argument("--embeddings")
    p.add_argument("--provider", choices=("synth", "file"), default="synth")
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--embed-seed", type=int, default=0)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8642)
    p.add_argument("--agents", type=int, default=3)
    p.add_argument("--tick-period", type=float, default=1.0)
    p.add_argument("--arena-side", type=float, default=3.8)
    p.add_argument("--eval-radius", type=float, default=0.25)
    p.add_argument("--k", type=float, default=corpus_mod.DEFAULT_K)
    p.add_argument("--beta-v", type=float, default=0.3)
    p.add_argument("--env-noise", type=float, default=0.02)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
