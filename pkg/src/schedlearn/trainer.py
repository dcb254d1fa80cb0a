"""Batched score-function gradient training with adaptive moments.

One training iteration samples B contexts and K rollouts per context,
scores them with the policy, subtracts the configured reward baseline,
and averages (r - b) * dlogpi with the 1/(B*K_c) weighting of the inner
double loop.  Gradients are clipped to a maximum norm and applied with an
adaptive-moment update using decoupled weight decay.

Environments are duck-typed.  Required surface::

    env.sample_contexts(n, stream) -> list of contexts
    env.features(ctx)              -> 1-D feature array for the policy
    env.reward(ctx, schedule, stream) -> float

An optional vectorized ``env.reward_batch(contexts, schedules)`` is used
when present.  Rollout streams are derived per (iteration, context,
rollout), so evaluation order cannot change any draw; contributions are
reduced in fixed (c, i) order with numpy's pairwise summation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .baselines import compute_baseline
from .policy import allocation_to_schedule
from .rng import RandomStream

__all__ = [
    "RolloutError",
    "TrainerConfig",
    "GradientEstimate",
    "AdamState",
    "adam_init",
    "optimizer_step",
    "clip_gradient",
    "estimate_gradient",
    "train",
    "evaluate_mean_schedule",
]

_BETA1 = 0.9
_BETA2 = 0.999
_EPS = 1e-8


class RolloutError(RuntimeError):
    """A rollout produced a non-finite reward; carries (context, rollout)."""

    def __init__(self, message: str, context_index: int, rollout_index: int):
        super().__init__(message)
        self.context_index = context_index
        self.rollout_index = rollout_index


@dataclass
class TrainerConfig:
    baseline_kind: str = "js"
    n_contexts: int = 8          # contexts per batch
    n_rollouts: int = 2          # rollouts per context
    learning_rate: float = 0.01
    weight_decay: float = 1e-4
    grad_clip_norm: float = 1.0
    iterations: int = 1000
    seed: int = 0
    between_anchor: str = "loo-mean"

    def validate(self) -> None:
        if self.n_contexts < 1:
            raise ValueError("n_contexts must be >= 1")
        if self.baseline_kind != "none" and self.n_rollouts < 2:
            raise ValueError(
                f"baseline kind {self.baseline_kind!r} needs n_rollouts >= 2"
            )
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


@dataclass
class GradientEstimate:
    """Flat parameter gradient plus the provenance of its batch."""

    grad: np.ndarray
    baseline_kind: str
    n_contexts: int
    rollouts: tuple[int, ...]
    stream_key: tuple
    mean_reward: float


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


def adam_init(n_params: int) -> AdamState:
    return AdamState(m=np.zeros(n_params), v=np.zeros(n_params), step=0)


def clip_gradient(grad: np.ndarray, max_norm: float) -> np.ndarray:
    """Scale ``grad`` to 2-norm ``max_norm`` if it exceeds it."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = float(np.linalg.norm(grad))
    if norm > max_norm:
        return grad * (max_norm / norm)
    return grad


def optimizer_step(
    state: AdamState,
    params: np.ndarray,
    grad: np.ndarray,
    learning_rate: float,
    weight_decay: float = 0.0,
) -> tuple[AdamState, np.ndarray]:
    """Bias-corrected adaptive-moment update with decoupled weight decay.

    The decay term ``lr * wd * p`` is subtracted separately from the
    moment-based step, so zero gradients still shrink the parameters.
    """
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise ValueError("parameter, gradient, and state shapes must match")
    t = state.step + 1
    m = _BETA1 * state.m + (1.0 - _BETA1) * grad
    v = _BETA2 * state.v + (1.0 - _BETA2) * grad * grad
    m_hat = m / (1.0 - _BETA1**t)
    v_hat = v / (1.0 - _BETA2**t)
    new_params = params - learning_rate * (
        m_hat / (np.sqrt(v_hat) + _EPS) + weight_decay * params
    )
    return AdamState(m=m, v=v, step=t), new_params


def _rollout_rewards(env, contexts, schedules, entries, stream):
    """Evaluate rewards, preferring the vectorized env path."""
    if hasattr(env, "reward_batch"):
        flat_ctx = [contexts[c] for c, _ in entries]
        return np.asarray(env.reward_batch(flat_ctx, schedules), dtype=np.float64)
    out = np.empty(len(entries))
    for j, ((c, i), sched) in enumerate(zip(entries, schedules)):
        out[j] = env.reward(contexts[c], sched, stream.child(c, i, 1))
    return out


def estimate_gradient(
    policy,
    contexts,
    env,
    baseline_kind: str,
    stream: RandomStream,
    n_rollouts,
    between_anchor: str = "loo-mean",
) -> GradientEstimate:
    """One-batch score-function gradient with the requested baseline.

    ``n_rollouts`` is an int (uniform) or a per-context sequence; every
    (c, i) rollout draws from ``stream.child(c, i, 0)``, making the result
    independent of evaluation order.
    """
    if not contexts:
        raise ValueError("contexts must be non-empty")
    n_ctx = len(contexts)
    if np.ndim(n_rollouts) == 0:
        rollouts = (int(n_rollouts),) * n_ctx
    else:
        rollouts = tuple(int(k) for k in n_rollouts)
        if len(rollouts) != n_ctx:
            raise ValueError("per-context rollout counts must match contexts")

    feats = [env.features(ctx) for ctx in contexts]
    entries = [(c, i) for c in range(n_ctx) for i in range(rollouts[c])]
    taus = [
        policy.sample(feats[c], stream.child(c, i, 0)) for c, i in entries
    ]
    schedules = [allocation_to_schedule(tau) for tau in taus]
    rewards_flat = _rollout_rewards(env, contexts, schedules, entries, stream)
    for (c, i), r in zip(entries, rewards_flat):
        if not np.isfinite(r):
            raise RolloutError(
                f"non-finite reward {r!r} at context {c}, rollout {i}", c, i
            )

    batch = []
    pos = 0
    for k in rollouts:
        batch.append(rewards_flat[pos : pos + k])
        pos += k
    baseline = compute_baseline(batch, baseline_kind, between_anchor=between_anchor)

    contribs = np.empty((len(entries), policy.n_params))
    for j, ((c, i), tau) in enumerate(zip(entries, taus)):
        advantage = batch[c][i] - baseline[c][i]
        weight = advantage / (n_ctx * rollouts[c])
        contribs[j] = weight * policy.score(feats[c], tau)
    grad = contribs.sum(axis=0)  # fixed (c, i) order, pairwise summation
    return GradientEstimate(
        grad=grad,
        baseline_kind=baseline_kind,
        n_contexts=n_ctx,
        rollouts=rollouts,
        stream_key=(stream.seed, stream.path),
        mean_reward=float(rewards_flat.mean()),
    )


def train(config: TrainerConfig, env, policy) -> tuple[object, list[float]]:
    """Run the fixed-iteration training loop; returns (policy, reward trace).

    Fully reproducible from ``config.seed``: iteration ``t`` derives its
    context and rollout streams from ``RandomStream(seed).child(t, ...)``.
    """
    config.validate()
    root = RandomStream(config.seed)
    state = adam_init(policy.n_params)
    trace: list[float] = []
    for it in range(config.iterations):
        it_stream = root.child(it)
        contexts = env.sample_contexts(config.n_contexts, it_stream.child(0))
        estimate = estimate_gradient(
            policy,
            contexts,
            env,
            config.baseline_kind,
            it_stream.child(1),
            config.n_rollouts,
            between_anchor=config.between_anchor,
        )
        # optimizer_step descends; maximize reward by stepping on -grad(J)
        loss_grad = clip_gradient(-estimate.grad, config.grad_clip_norm)
        state, flat = optimizer_step(
            state,
            policy.get_flat(),
            loss_grad,
            config.learning_rate,
            config.weight_decay,
        )
        if not np.all(np.isfinite(flat)):
            raise RuntimeError(f"non-finite parameters after iteration {it}")
        policy.set_flat(flat)
        policy.project()
        trace.append(estimate.mean_reward)
    return policy, trace


def evaluate_mean_schedule(policy, env, contexts) -> dict:
    """Compare the policy's mean schedule against the uniform default.

    For each context the deterministic schedule built from the mean
    allocation alpha / sum(alpha) is integrated and compared with the
    uniform grid at the same budget.
    """
    from .policy import uniform_allocation

    learned = []
    uniform_scheds = []
    for ctx in contexts:
        alpha = policy.forward(env.features(ctx))
        learned.append(allocation_to_schedule(alpha / alpha.sum()))
        uniform_scheds.append(allocation_to_schedule(uniform_allocation(policy.n_steps)))
    r_learned = _batch_rewards(env, contexts, learned)
    r_uniform = _batch_rewards(env, contexts, uniform_scheds)
    return {
        "learned_mean_reward": float(np.mean(r_learned)),
        "uniform_mean_reward": float(np.mean(r_uniform)),
        "learned_rewards": [float(v) for v in r_learned],
        "uniform_rewards": [float(v) for v in r_uniform],
    }


def _batch_rewards(env, contexts, schedules):
    if hasattr(env, "reward_batch"):
        return np.asarray(env.reward_batch(contexts, schedules), dtype=np.float64)
    return np.array(
        [env.reward(ctx, sched, None) for ctx, sched in zip(contexts, schedules)]
    )
