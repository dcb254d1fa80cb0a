"""Toy probability-flow sampler over 1-D Gaussian mixtures.

A frozen "sampler" integrates the deterministic probability-flow ODE of
the linear interpolation path x_t = (1 - t) x0 + t x1, where x0 follows a
small Gaussian mixture (the data) and x1 is standard normal (the noise).
The marginal velocity has a closed form: a posterior-responsibility-
weighted mixture of per-component affine velocities.  Explicit Euler
steps traverse a schedule from t = 1 down through its timesteps to t = 0.

The terminal reward is the negative absolute gap between the coarse
integration and a fine uniform reference grid, so schedules that place
steps where the flow bends (near sharp mixture components at small t)
earn higher reward.  This gives learned, context-dependent schedules
genuine headroom over the uniform default at small step budgets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .policy import Schedule, allocation_to_schedule, uniform_allocation
from .rng import RandomStream
from .special import sample_dirichlet

__all__ = [
    "GaussianMixture",
    "SamplerContext",
    "RewardSpec",
    "SamplerConfig",
    "ToySamplerEnv",
    "marginal_velocity",
    "mixture_responsibilities",
    "uniform_schedule",
    "integrate",
    "integrate_many",
    "terminal_reward",
]


@dataclass(frozen=True)
class GaussianMixture:
    """Mixture weights, means, and standard deviations per component."""

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        m = np.asarray(self.means, dtype=np.float64)
        s = np.asarray(self.stds, dtype=np.float64)
        if not (w.shape == m.shape == s.shape) or w.ndim != 1 or w.size < 1:
            raise ValueError("weights, means, stds must be equal-length vectors")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be positive and sum to one")
        if np.any(s <= 0):
            raise ValueError("standard deviations must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "stds", s)

    @property
    def n_components(self) -> int:
        return self.weights.size


@dataclass(frozen=True)
class SamplerContext:
    """A mixture (the "prompt") plus the initial noise draw x_T."""

    mixture: GaussianMixture
    initial_noise: float


@dataclass(frozen=True)
class RewardSpec:
    """Reference grid resolution defining the terminal reward."""

    reference_steps: int = 2048

    def __post_init__(self):
        if self.reference_steps < 2:
            raise ValueError("reference_steps must be >= 2")


def uniform_schedule(n_steps: int) -> Schedule:
    """The default evenly spaced schedule for a budget of n_steps."""
    return allocation_to_schedule(uniform_allocation(n_steps))


def _component_moments(t, means, stds):
    """Marginal mean and variance of each component at time t."""
    omt = 1.0 - t
    m = omt * means
    s2 = omt * omt * stds * stds + t * t
    return m, s2


def _velocity(x, t, weights, means, stds):
    """Vectorized marginal velocity.

    x: (...,); t: scalar or (...,); mixture parameters: (..., C) or (C,).
    """
    xx = np.asarray(x, dtype=np.float64)[..., None]
    tt = np.asarray(t, dtype=np.float64)
    if tt.ndim:
        tt = tt[..., None]
    m, s2 = _component_moments(tt, means, stds)
    # log responsibilities with max subtraction (components sharpen as t -> 0)
    logw = np.log(weights) - 0.5 * (xx - m) ** 2 / s2 - 0.5 * np.log(s2)
    logw = logw - logw.max(axis=-1, keepdims=True)
    resp = np.exp(logw)
    resp /= resp.sum(axis=-1, keepdims=True)
    vel_k = -means + (tt - (1.0 - tt) * stds * stds) / s2 * (xx - m)
    return (resp * vel_k).sum(axis=-1)


def marginal_velocity(x, t: float, mixture: GaussianMixture):
    """Marginal probability-flow velocity at state x and time t in [0, 1]."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("x must be finite")
    out = _velocity(arr, t, mixture.weights, mixture.means, mixture.stds)
    return float(out) if arr.ndim == 0 else out


def mixture_responsibilities(x, t: float, mixture: GaussianMixture) -> np.ndarray:
    """Posterior component responsibilities at (x, t); they sum to one."""
    m, s2 = _component_moments(t, mixture.means, mixture.stds)
    logw = np.log(mixture.weights) - 0.5 * (x - m) ** 2 / s2 - 0.5 * np.log(s2)
    logw -= logw.max()
    resp = np.exp(logw)
    return resp / resp.sum()


def _times(schedule: Schedule) -> np.ndarray:
    return np.concatenate(([1.0], schedule.timesteps, [0.0]))


def integrate(schedule: Schedule, ctx: SamplerContext) -> float:
    """Explicit Euler transport from t = 1 to t = 0 along the schedule."""
    times = _times(schedule)
    x = float(ctx.initial_noise)
    mix = ctx.mixture
    for j in range(times.size - 1):
        x += (times[j + 1] - times[j]) * marginal_velocity(x, times[j], mix)
    return x


def integrate_many(times: np.ndarray, x0, weights, means, stds) -> np.ndarray:
    """Euler integration of many trajectories sharing a step count.

    times: (N, S+1) descending grids from 1.0 to 0.0; x0: (N,);
    mixture parameter arrays: (N, C).
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    for j in range(times.shape[1] - 1):
        t = times[:, j]
        dt = times[:, j + 1] - t
        x += dt * _velocity(x, t, weights, means, stds)
    return x


def terminal_reward(schedule: Schedule, ctx: SamplerContext, spec: RewardSpec) -> float:
    """Negative absolute deviation from the fine-grid reference endpoint."""
    x_coarse = integrate(schedule, ctx)
    x_ref = integrate(uniform_schedule(spec.reference_steps), ctx)
    return -abs(x_coarse - x_ref)


@dataclass(frozen=True)
class SamplerConfig:
    """Context-generator settings for the toy environment."""

    n_components: int = 3
    mean_range: tuple[float, float] = (-2.0, 2.0)
    std_range: tuple[float, float] = (0.05, 1.0)
    reference_steps: int = 2048
    train_pool: int = 256

    def validate(self) -> None:
        if not 2 <= self.n_components <= 4:
            raise ValueError("n_components must be between 2 and 4")
        if self.std_range[0] <= 0 or self.std_range[0] > self.std_range[1]:
            raise ValueError("std_range must be positive and ordered")
        if self.mean_range[0] > self.mean_range[1]:
            raise ValueError("mean_range must be ordered")
        if self.train_pool < 0:
            raise ValueError("train_pool must be >= 0")


class ToySamplerEnv:
    """Rollout environment bridging the trainer and the toy sampler.

    Training contexts are drawn with replacement from a finite pool built
    at construction (mirroring a fixed training set), which lets the env
    precompute the expensive fine-grid reference endpoint once per pool
    member.  ``train_pool=0`` disables pooling and samples fresh contexts.
    """

    def __init__(self, config: SamplerConfig, stream: RandomStream):
        config.validate()
        self.config = config
        self.spec = RewardSpec(config.reference_steps)
        self.pool: list[SamplerContext] = []
        self._pool_refs: dict[int, float] = {}
        if config.train_pool:
            pool_stream = stream.child(0)
            self.pool = [
                self.sample_context(pool_stream.child(j))
                for j in range(config.train_pool)
            ]
            refs = self._reference_many(self.pool)
            self._pool_refs = {id(ctx): float(r) for ctx, r in zip(self.pool, refs)}

    # -- context generation -------------------------------------------------

    def sample_mixture(self, stream: RandomStream) -> GaussianMixture:
        cfg = self.config
        gen = stream.gen
        weights = sample_dirichlet(np.ones(cfg.n_components), stream)
        means = gen.uniform(*cfg.mean_range, size=cfg.n_components)
        log_lo, log_hi = np.log(cfg.std_range[0]), np.log(cfg.std_range[1])
        stds = np.exp(gen.uniform(log_lo, log_hi, size=cfg.n_components))
        # canonical component order keeps the feature layout consistent
        order = np.argsort(means)
        return GaussianMixture(
            weights=weights[order], means=means[order], stds=stds[order]
        )

    def sample_context(self, stream: RandomStream) -> SamplerContext:
        mixture = self.sample_mixture(stream)
        noise = float(stream.gen.standard_normal())
        return SamplerContext(mixture=mixture, initial_noise=noise)

    def sample_contexts(self, n: int, stream: RandomStream) -> list[SamplerContext]:
        if self.pool:
            idx = stream.gen.integers(0, len(self.pool), size=n)
            return [self.pool[i] for i in idx]
        return [self.sample_context(stream.child(j)) for j in range(n)]

    def sample_fresh_contexts(self, n: int, stream: RandomStream) -> list[SamplerContext]:
        """Contexts drawn outside the training pool (held-out evaluation)."""
        return [self.sample_context(stream.child(j)) for j in range(n)]

    # -- policy interface ----------------------------------------------------

    def features(self, ctx: SamplerContext) -> np.ndarray:
        """Fixed-order context summary: means, log-weights, log-stds, then
        mean and standard deviation of the (scalar) initial noise draw."""
        mix = ctx.mixture
        return np.concatenate(
            [
                mix.means,
                np.log(mix.weights),
                np.log(mix.stds),
                [ctx.initial_noise, 0.0],
            ]
        )

    @property
    def feature_dim(self) -> int:
        return 3 * self.config.n_components + 2

    # -- rewards --------------------------------------------------------------

    def reward(self, ctx: SamplerContext, schedule: Schedule, stream=None) -> float:
        """Terminal reward of one rollout; integration is deterministic,
        so the stream argument is accepted but unused."""
        return float(self.reward_batch([ctx], [schedule])[0])

    def reward_batch(self, contexts, schedules) -> np.ndarray:
        if len(contexts) != len(schedules):
            raise ValueError("contexts and schedules must align")
        if not contexts:
            return np.empty(0)
        steps = {s.n_steps for s in schedules}
        if len(steps) != 1:
            raise ValueError("batched rewards need a shared schedule length")
        times = np.stack([_times(s) for s in schedules])
        weights, means, stds, x0 = self._stack_params(contexts)
        x_end = integrate_many(times, x0, weights, means, stds)
        refs = self._references(contexts)
        return -np.abs(x_end - refs)

    # -- internals -------------------------------------------------------------

    def _stack_params(self, contexts):
        weights = np.stack([c.mixture.weights for c in contexts])
        means = np.stack([c.mixture.means for c in contexts])
        stds = np.stack([c.mixture.stds for c in contexts])
        x0 = np.array([c.initial_noise for c in contexts])
        return weights, means, stds, x0

    def _reference_many(self, contexts) -> np.ndarray:
        ref_times = _times(uniform_schedule(self.spec.reference_steps))
        times = np.broadcast_to(ref_times, (len(contexts), ref_times.size))
        weights, means, stds, x0 = self._stack_params(contexts)
        return integrate_many(times, x0, weights, means, stds)

    def _references(self, contexts) -> np.ndarray:
        # Deduplicate by object identity: batches repeat pool members and
        # random-search batches repeat a single context many times.
        unique: dict[int, SamplerContext] = {}
        for ctx in contexts:
            key = id(ctx)
            if key not in self._pool_refs and key not in unique:
                unique[key] = ctx
        if unique:
            fresh = self._reference_many(list(unique.values()))
            values = dict(zip(unique.keys(), fresh))
        else:
            values = {}
        return np.array(
            [
                self._pool_refs.get(id(ctx), values.get(id(ctx), np.nan))
                for ctx in contexts
            ]
        )
