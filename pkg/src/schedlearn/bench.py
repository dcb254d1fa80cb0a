"""Controlled variance study for the baseline estimators.

Rewards follow a spiky two-level random-effects model
r = mu_c + eps + spike (context effect, heteroskedastic within-context
noise with a log-normal scale, and sparse heavy outliers), while schedule
allocations are drawn from a fixed symmetric Dirichlet policy whose score
has a closed form.  Because the rewards do not depend on the sampled
allocation, the true gradient is zero and the per-dimension variance of
the batch estimator isolates the effect of the baseline alone.

Each sweep cell (B contexts, K rollouts, horizon L) reuses identical
reward and score draws across all baseline kinds, so comparisons are
paired.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import baselines
from .rng import RandomStream
from .special import digamma, sample_dirichlet

__all__ = [
    "SpikyRewardModel",
    "SweepConfig",
    "CellResult",
    "VarianceReport",
    "sample_spiky_rewards",
    "measure_estimator_variance",
    "run_sweep",
    "write_variance_csv",
]

# Baseline kinds the benchmark understands; "true-mean" uses the latent
# context means (available only in simulation) and lower-bounds what any
# estimated contextual baseline can achieve.
BENCH_KINDS = ("none", "rloo", "xctx", "js", "true-mean")

_LOG_TAU_FLOOR = np.log(1e-12)


@dataclass(frozen=True)
class SpikyRewardModel:
    """Generative reward model: r = mu_c + eps^(c,i) + spike^(c,i)."""

    mu_scale: float = 1.0          # std of the context effect mu_c
    log_scale_mean: float = 0.0    # LogNormal parameters of the noise scale s_c
    log_scale_std: float = 1.0
    spike_prob: float = 0.15
    spike_magnitude: float = 8.0

    def validate(self) -> None:
        if not 0.0 <= self.spike_prob <= 1.0:
            raise ValueError("spike_prob must lie in [0, 1]")
        if self.mu_scale < 0 or self.log_scale_std < 0:
            raise ValueError("scales must be non-negative")


@dataclass(frozen=True)
class SweepConfig:
    contexts_grid: tuple[int, ...] = (8, 16, 32)
    rollouts_grid: tuple[int, ...] = (2, 4, 8, 16)
    horizon_grid: tuple[int, ...] = (4, 16, 64)
    batches_per_cell: int = 500
    concentration: float = 2.0
    baseline_kinds: tuple[str, ...] = ("rloo", "xctx", "js")
    seed: int = 0
    model: SpikyRewardModel = field(default_factory=SpikyRewardModel)

    def validate(self) -> None:
        for grid in (self.contexts_grid, self.rollouts_grid, self.horizon_grid):
            if not grid or any(int(v) < 1 for v in grid):
                raise ValueError("sweep grids must be non-empty and positive")
        if self.batches_per_cell < 2:
            raise ValueError("batches_per_cell must be >= 2")
        if self.concentration <= 0:
            raise ValueError("concentration must be positive")
        for kind in self.baseline_kinds:
            if kind not in BENCH_KINDS:
                raise ValueError(f"unknown baseline kind {kind!r}")
        self.model.validate()


@dataclass(frozen=True)
class CellResult:
    n_contexts: int
    n_rollouts: int
    horizon: int
    baseline: str
    variance: float
    ratio_to_rloo: float


@dataclass
class VarianceReport:
    config: SweepConfig
    cells: list[CellResult]

    def variance(self, n_contexts: int, n_rollouts: int, horizon: int, kind: str) -> float:
        for cell in self.cells:
            if (
                cell.n_contexts == n_contexts
                and cell.n_rollouts == n_rollouts
                and cell.horizon == horizon
                and cell.baseline == kind
            ):
                return cell.variance
        raise KeyError((n_contexts, n_rollouts, horizon, kind))

    def ratios(self, kind: str, n_rollouts: int | None = None) -> list[float]:
        return [
            cell.ratio_to_rloo
            for cell in self.cells
            if cell.baseline == kind
            and (n_rollouts is None or cell.n_rollouts == n_rollouts)
        ]


def sample_spiky_rewards(
    model: SpikyRewardModel,
    n_contexts: int,
    n_rollouts: int,
    stream: RandomStream,
    n_batches: int | None = None,
    return_means: bool = False,
):
    """Draw rewards of shape (B, K), or (n_batches, B, K) when stacked."""
    model.validate()
    if n_contexts < 1 or n_rollouts < 1:
        raise ValueError("n_contexts and n_rollouts must be >= 1")
    gen = stream.gen
    ctx_shape = (n_contexts,) if n_batches is None else (int(n_batches), n_contexts)
    full_shape = ctx_shape + (n_rollouts,)
    mu = model.mu_scale * gen.standard_normal(ctx_shape)
    noise_scale = np.exp(
        model.log_scale_mean + model.log_scale_std * gen.standard_normal(ctx_shape)
    )
    eps = noise_scale[..., None] * gen.standard_normal(full_shape)
    spikes = model.spike_magnitude * (gen.uniform(size=full_shape) < model.spike_prob)
    rewards = mu[..., None] + eps + spikes
    if return_means:
        return rewards, mu
    return rewards


def _cell_draws(
    n_contexts: int,
    n_rollouts: int,
    horizon: int,
    stream: RandomStream,
    n_batches: int,
    concentration: float,
    model: SpikyRewardModel,
):
    rewards, mu = sample_spiky_rewards(
        model, n_contexts, n_rollouts, stream, n_batches=n_batches, return_means=True
    )
    n_total = n_batches * n_contexts * n_rollouts
    taus = sample_dirichlet(
        np.full(horizon, concentration), stream, size=n_total
    ).reshape(n_batches, n_contexts, n_rollouts, horizon)
    # Closed-form score of the symmetric Dirichlet policy.
    scores = (
        digamma(horizon * concentration)
        - digamma(concentration)
        + np.maximum(np.log(taus), _LOG_TAU_FLOOR)
    )
    return rewards, mu, scores


def _baseline_stack(rewards: np.ndarray, mu: np.ndarray, kind: str) -> np.ndarray:
    if kind == "none":
        return np.zeros_like(rewards)
    if kind == "rloo":
        return baselines.rloo_stack(rewards)
    if kind == "xctx":
        return baselines.xctx_stack(rewards)
    if kind == "js":
        return baselines.js_stack(rewards)
    if kind == "true-mean":
        return np.broadcast_to(mu[..., None], rewards.shape)
    raise ValueError(f"unknown baseline kind {kind!r}")


def _variance_from_draws(rewards, mu, scores, kind: str) -> float:
    """Per-dimension variance of the batch gradient under one baseline."""
    n_batches, n_contexts, n_rollouts, _ = scores.shape
    centered = rewards - _baseline_stack(rewards, mu, kind)
    grads = np.einsum("nbk,nbkl->nl", centered, scores) / (n_contexts * n_rollouts)
    return float(grads.var(axis=0, ddof=1).mean())


def measure_estimator_variance(
    n_contexts: int,
    n_rollouts: int,
    horizon: int,
    baseline_kind: str,
    stream: RandomStream,
    n_batches: int = 500,
    concentration: float = 2.0,
    model: SpikyRewardModel | None = None,
) -> float:
    """Average per-dimension variance of the estimator over fresh batches."""
    model = model or SpikyRewardModel()
    rewards, mu, scores = _cell_draws(
        n_contexts, n_rollouts, horizon, stream, n_batches, concentration, model
    )
    return _variance_from_draws(rewards, mu, scores, baseline_kind)


def _run_cell(config: SweepConfig, n_contexts: int, n_rollouts: int, horizon: int):
    stream = RandomStream(config.seed).child(n_contexts, n_rollouts, horizon)
    rewards, mu, scores = _cell_draws(
        n_contexts,
        n_rollouts,
        horizon,
        stream,
        config.batches_per_cell,
        config.concentration,
        config.model,
    )
    kinds = dict.fromkeys(("rloo",) + tuple(config.baseline_kinds))
    variances = {
        kind: _variance_from_draws(rewards, mu, scores, kind) for kind in kinds
    }
    rloo_var = variances["rloo"]
    return [
        CellResult(
            n_contexts=n_contexts,
            n_rollouts=n_rollouts,
            horizon=horizon,
            baseline=kind,
            variance=variances[kind],
            ratio_to_rloo=variances[kind] / rloo_var,
        )
        for kind in config.baseline_kinds
    ]


def run_sweep(config: SweepConfig, threads: int = 1) -> VarianceReport:
    """Evaluate the full (B, K, L) grid with paired draws per cell.

    Cells are independent; their streams derive from (seed, B, K, L), so
    results do not depend on execution order or thread count.
    """
    config.validate()
    cells = [
        (b, k, h)
        for k in config.rollouts_grid
        for b in config.contexts_grid
        for h in config.horizon_grid
    ]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda c: _run_cell(config, *c), cells))
    else:
        results = [_run_cell(config, *cell) for cell in cells]
    flat = [cell for group in results for cell in group]
    return VarianceReport(config=config, cells=flat)


def write_variance_csv(report: VarianceReport, path, header_meta: dict | None = None) -> None:
    """Write one row per (cell, baseline); floats carry 6 significant digits."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if header_meta:
            meta = " ".join(f"{k}={v}" for k, v in sorted(header_meta.items()))
            fh.write(f"# {meta}\n")
        writer = csv.writer(fh)
        writer.writerow(["B", "K", "L", "baseline", "variance", "ratio_to_rloo"])
        for cell in report.cells:
            writer.writerow(
                [
                    cell.n_contexts,
                    cell.n_rollouts,
                    cell.horizon,
                    cell.baseline,
                    f"{cell.variance:.6g}",
                    f"{cell.ratio_to_rloo:.6g}",
                ]
            )
