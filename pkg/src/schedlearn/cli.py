"""Experiment runner: ``bench``, ``train``, and ``eval`` subcommands.

Each command reads one JSON config file and writes machine-readable
outputs (CSV / JSON / JSON lines) into an output directory.  Every output
embeds the SHA-256 of the canonical config and the seed, and rerunning
with identical inputs reproduces the data artifacts byte for byte (the
manifest's wall-time field is the single exception).

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from .bench import SpikyRewardModel, SweepConfig, run_sweep, write_variance_csv
from .policy import (
    DirichletPolicy,
    FeaturePolicy,
    allocation_to_schedule,
    load_policy,
    save_policy,
)
from .rng import RandomStream
from .sampler import SamplerConfig, ToySamplerEnv, uniform_schedule
from .trainer import TrainerConfig, evaluate_mean_schedule, train

__all__ = ["main", "ConfigError"]


class ConfigError(ValueError):
    """Invalid or unreadable experiment configuration."""


def _load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigError("config root must be a JSON object")
    return config


def _config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _resolve(config: dict, args) -> tuple[dict, int, Path, int]:
    """Apply CLI overrides; returns (config, seed, out_dir, threads)."""
    config = dict(config)
    if args.seed is not None:
        config["seed"] = args.seed
    if args.out is not None:
        config["out_dir"] = args.out
    if args.threads is not None:
        config["threads"] = args.threads
    seed = int(config.get("seed", 0))
    if not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be a 64-bit unsigned integer, got {seed}")
    out_dir = Path(config.get("out_dir", "runs/out"))
    threads = int(config.get("threads", 1))
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    return config, seed, out_dir, threads


def _section(config: dict, name: str) -> dict:
    section = config.get(name, {})
    if not isinstance(section, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    return section


def _build_sweep_config(config: dict, seed: int) -> SweepConfig:
    section = _section(config, "bench")
    model_section = section.get("reward_model", {})
    try:
        sweep = SweepConfig(
            contexts_grid=tuple(section.get("contexts_grid", (8, 16, 32))),
            rollouts_grid=tuple(section.get("rollouts_grid", (2, 4, 8, 16))),
            horizon_grid=tuple(section.get("horizon_grid", (4, 16, 64))),
            batches_per_cell=int(section.get("batches_per_cell", 500)),
            concentration=float(section.get("concentration", 2.0)),
            baseline_kinds=tuple(section.get("baselines", ("rloo", "xctx", "js"))),
            seed=seed,
            model=SpikyRewardModel(**model_section),
        )
        sweep.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid bench config: {exc}") from exc
    return sweep


def _build_sampler_config(config: dict) -> SamplerConfig:
    section = _section(config, "sampler")
    try:
        sampler = SamplerConfig(
            n_components=int(section.get("n_components", 3)),
            mean_range=tuple(section.get("mean_range", (-2.0, 2.0))),
            std_range=tuple(section.get("std_range", (0.02, 1.0))),
            reference_steps=int(section.get("reference_steps", 2048)),
            train_pool=int(section.get("train_pool", 256)),
        )
        sampler.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid sampler config: {exc}") from exc
    return sampler


def _build_trainer_config(section: dict, kind: str, seed: int) -> TrainerConfig:
    try:
        cfg = TrainerConfig(
            baseline_kind=kind,
            n_contexts=int(section.get("contexts_per_batch", 16)),
            n_rollouts=int(section.get("rollouts_per_context", 2)),
            learning_rate=float(section.get("learning_rate", 0.005)),
            weight_decay=float(section.get("weight_decay", 1e-4)),
            grad_clip_norm=float(section.get("grad_clip_norm", 1.0)),
            iterations=int(section.get("iterations", 2000)),
            seed=seed,
            between_anchor=section.get("between_anchor", "loo-mean"),
        )
        cfg.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid train config: {exc}") from exc
    return cfg


def _init_policy(section: dict, env: ToySamplerEnv, seed: int):
    n_steps = int(section.get("n_steps", 5))
    if n_steps < 1:
        raise ConfigError("n_steps must be >= 1")
    variant = section.get("policy", "feature-net")
    if variant == "analytic":
        return DirichletPolicy.uniform(n_steps, float(section.get("init_concentration", 2.0)))
    if variant == "feature-net":
        policy = FeaturePolicy.init(
            env.feature_dim,
            n_steps,
            RandomStream(seed).child(4),
            hidden_width=int(section.get("hidden_width", 64)),
            init_scale=float(section.get("init_scale", 0.05)),
        )
        # start near the symmetric concentration used by the benchmark
        policy.b2[:] = float(section.get("init_bias", 1.8546))
        return policy
    raise ConfigError(f"unknown policy variant {variant!r}")


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_bench(args) -> int:
    config, seed, out_dir, threads = _resolve(_load_config(args.config), args)
    sweep = _build_sweep_config(config, seed)
    digest = _config_hash(config)
    out_dir.mkdir(parents=True, exist_ok=True)

    started = time.time()
    report = run_sweep(sweep, threads=threads)
    wall = time.time() - started

    csv_path = out_dir / "variance.csv"
    write_variance_csv(report, csv_path, header_meta={"config_sha256": digest, "seed": seed})
    manifest = {
        "schema": "schedlearn-bench-manifest-v1",
        "config": config,
        "config_sha256": digest,
        "seed": seed,
        "wall_time_seconds": wall,
        "cells": [
            {
                "B": cell.n_contexts,
                "K": cell.n_rollouts,
                "L": cell.horizon,
                "baseline": cell.baseline,
                "variance": cell.variance,
                "ratio_to_rloo": cell.ratio_to_rloo,
            }
            for cell in report.cells
        ],
    }
    _write_json(out_dir / "bench_manifest.json", manifest)

    _print_bench_table(report)
    print(f"wrote {csv_path} ({len(report.cells)} rows) in {wall:.1f}s")
    return 0


def _print_bench_table(report) -> None:
    config = report.config
    kinds = [k for k in config.baseline_kinds if k != "rloo"]
    print("K   B  | " + " | ".join(f"L={h}: rloo -> js (ratio)" for h in config.horizon_grid))
    for k in config.rollouts_grid:
        for b in config.contexts_grid:
            parts = []
            for h in config.horizon_grid:
                rloo = report.variance(b, k, h, "rloo")
                if "js" in config.baseline_kinds:
                    js = report.variance(b, k, h, "js")
                    parts.append(f"{rloo:8.3f} -> {js:8.3f} ({js / rloo:.3f})")
                else:
                    parts.append(f"{rloo:8.3f}")
            print(f"{k:<3} {b:<2} | " + " | ".join(parts))
    for kind in kinds:
        ratios = report.ratios(kind)
        print(f"mean {kind}/rloo variance ratio: {np.mean(ratios):.4f}")


def cmd_train(args) -> int:
    config, seed, out_dir, _ = _resolve(_load_config(args.config), args)
    digest = _config_hash(config)
    section = _section(config, "train")
    kinds = list(section.get("baseline_kinds", ["js"]))
    sampler_cfg = _build_sampler_config(config)
    out_dir.mkdir(parents=True, exist_ok=True)

    started = time.time()
    runs: dict[str, dict] = {}
    for kind in kinds:
        env = ToySamplerEnv(sampler_cfg, RandomStream(seed).child(0))
        policy = _init_policy(section, env, seed)
        trainer_cfg = _build_trainer_config(section, kind, seed)
        policy, trace = train(trainer_cfg, env, policy)
        held_out = env.sample_fresh_contexts(
            int(section.get("eval_contexts", 128)), RandomStream(seed).child(1)
        )
        evaluation = evaluate_mean_schedule(policy, env, held_out)
        checkpoint = out_dir / f"policy_{kind}.json"
        save_policy(policy, checkpoint)
        runs[kind] = {
            "reward_trace": trace,
            "evaluation": {
                "held_out_contexts": len(held_out),
                "learned_mean_reward": evaluation["learned_mean_reward"],
                "uniform_mean_reward": evaluation["uniform_mean_reward"],
                "improvement": evaluation["learned_mean_reward"]
                - evaluation["uniform_mean_reward"],
            },
            "checkpoint": checkpoint.name,
        }
        print(
            f"[{kind}] final batch reward {trace[-1]:.4f}"
            if trace
            else f"[{kind}] no iterations",
        )
        print(
            f"[{kind}] held-out: learned {evaluation['learned_mean_reward']:.4f} "
            f"vs uniform {evaluation['uniform_mean_reward']:.4f}"
        )
    manifest = {
        "schema": "schedlearn-train-manifest-v1",
        "config": config,
        "config_sha256": digest,
        "seed": seed,
        "runs": runs,
        "wall_time_seconds": time.time() - started,
    }
    _write_json(out_dir / "train_manifest.json", manifest)
    print(f"wrote {out_dir / 'train_manifest.json'}")
    return 0


def cmd_eval(args) -> int:
    config, seed, out_dir, _ = _resolve(_load_config(args.config), args)
    digest = _config_hash(config)
    try:
        policy = load_policy(args.checkpoint)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load checkpoint {args.checkpoint}: {exc}") from exc

    section = _section(config, "eval")
    n_contexts = int(section.get("contexts", 32))
    n_samples = int(section.get("samples_per_context", 8))
    sampler_cfg = _build_sampler_config(config)
    env = ToySamplerEnv(sampler_cfg, RandomStream(seed).child(0))
    contexts = env.sample_fresh_contexts(n_contexts, RandomStream(seed).child(2))

    lines = [
        {
            "schema": "schedlearn-eval-v1",
            "config_sha256": digest,
            "seed": seed,
            "checkpoint": str(args.checkpoint),
            "contexts": n_contexts,
            "samples_per_context": n_samples,
        }
    ]
    sample_stream = RandomStream(seed).child(3)
    for j, ctx in enumerate(contexts):
        features = env.features(ctx)
        alpha = policy.forward(features)
        mean_schedule = allocation_to_schedule(alpha / alpha.sum())
        sampled = [
            allocation_to_schedule(policy.sample(features, sample_stream.child(j, i)))
            for i in range(n_samples)
        ]
        rewards = env.reward_batch([ctx] * n_samples, sampled) if n_samples else []
        lines.append(
            {
                "context": {
                    "weights": ctx.mixture.weights.tolist(),
                    "means": ctx.mixture.means.tolist(),
                    "stds": ctx.mixture.stds.tolist(),
                    "initial_noise": ctx.initial_noise,
                },
                "alpha": alpha.tolist(),
                "mean_timesteps": mean_schedule.timesteps.tolist(),
                "mean_schedule_reward": env.reward(ctx, mean_schedule),
                "uniform_reward": env.reward(ctx, uniform_schedule(policy.n_steps)),
                "sampled_timesteps": [s.timesteps.tolist() for s in sampled],
                "sampled_rewards": [float(r) for r in rewards],
            }
        )
    text = "\n".join(json.dumps(line, sort_keys=True) for line in lines) + "\n"
    sys.stdout.write(text)
    if args.out is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "eval.jsonl").write_text(text, encoding="utf-8")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="schedlearn",
        description="Schedule-learning experiments: variance benchmark, training, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="path to a JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--threads", type=int, default=None, help="cap worker threads")

    p_bench = sub.add_parser("bench", help="run the estimator-variance sweep")
    add_common(p_bench)
    p_bench.set_defaults(func=cmd_bench)

    p_train = sub.add_parser("train", help="train schedule policies on the toy sampler")
    add_common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="dump per-context schedules and rewards")
    add_common(p_eval)
    p_eval.add_argument("--checkpoint", required=True, help="policy checkpoint to evaluate")
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure contract
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
