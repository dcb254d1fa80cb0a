"""Reward baselines for variance-reduced score-function gradients.

A reward batch holds B contexts with K_c scalar rollout rewards each
(possibly ragged).  All baselines are leave-one-out constructions: the
value attached to rollout (c, i) never uses reward r[c][i], which keeps
the gradient estimator unbiased.

* ``rloo_baseline``: mean of the other rollouts within the same context.
* ``xctx_baseline``: mean of all other rollouts in the whole batch.
* ``js_baseline``: per-context convex combination of the two,
  b = (1 - a_c) * rloo + a_c * xctx, where the shrinkage weight a_c is the
  empirical-Bayes posterior weight under a two-level random-effects model
  with within-context variance sigma^2 and across-context variance
  delta^2, estimated by method of moments.

``optimal_baseline_oracle`` is the Monte-Carlo plug-in of the scalar
baseline that minimizes the estimator variance, used for verification.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "InsufficientRolloutsError",
    "InsufficientContextsError",
    "DegenerateWeightsError",
    "VarianceComponents",
    "BASELINE_KINDS",
    "as_reward_batch",
    "rloo_baseline",
    "xctx_baseline",
    "estimate_variance_components",
    "shrinkage_coefficients",
    "js_baseline",
    "compute_baseline",
    "optimal_baseline_oracle",
]

BASELINE_KINDS = ("none", "rloo", "xctx", "js")

# How the per-context anchor in the across-context moment estimator is
# formed: "loo-mean" averages the per-sample leave-one-out values
# b_xctx[c][i] over i; "exclude-context" averages all rewards outside
# context c.  The former is the default, the latter is exposed for
# sensitivity checks.
BETWEEN_ANCHORS = ("loo-mean", "exclude-context")


class InsufficientRolloutsError(ValueError):
    """A context has too few rollouts for a leave-one-out baseline."""


class InsufficientContextsError(ValueError):
    """Too few contexts for across-context variance estimation."""


class DegenerateWeightsError(ValueError):
    """All score norms vanish; the optimal baseline is undefined."""


@dataclass(frozen=True)
class VarianceComponents:
    """Method-of-moments estimates of the reward variance decomposition."""

    sigma2_hat: float  # within-context variance
    delta2_hat: float  # across-context variance (clamped at zero)


def as_reward_batch(batch) -> list[np.ndarray]:
    """Normalize a batch to a list of 1-D float arrays and validate it."""
    rows = [np.asarray(row, dtype=np.float64) for row in batch]
    if not rows:
        raise InsufficientContextsError("reward batch has no contexts")
    for c, row in enumerate(rows):
        if row.ndim != 1 or row.size == 0:
            raise ValueError(f"context {c} must hold a non-empty 1-D reward vector")
        if not np.all(np.isfinite(row)):
            raise ValueError(f"context {c} holds non-finite rewards")
    return rows


def rloo_baseline(batch) -> list[np.ndarray]:
    """Leave-one-out mean of the other rollouts in the same context."""
    rows = as_reward_batch(batch)
    out = []
    for c, row in enumerate(rows):
        if row.size < 2:
            raise InsufficientRolloutsError(
                f"context {c} has {row.size} rollout(s); leave-one-out needs >= 2"
            )
        out.append((row.sum() - row) / (row.size - 1))
    return out


def xctx_baseline(batch) -> list[np.ndarray]:
    """Leave-one-out mean over all rollouts in the batch, across contexts."""
    rows = as_reward_batch(batch)
    total = sum(float(row.sum()) for row in rows)
    n = sum(row.size for row in rows)
    if n < 2:
        raise InsufficientRolloutsError(
            f"batch has {n} rollout(s) in total; leave-one-out needs >= 2"
        )
    return [(total - row) / (n - 1) for row in rows]


def _between_anchor(rows, xctx_rows, kind: str) -> np.ndarray:
    if kind == "loo-mean":
        return np.array([row.mean() for row in xctx_rows])
    if kind == "exclude-context":
        total = sum(float(row.sum()) for row in rows)
        n = sum(row.size for row in rows)
        return np.array([(total - row.sum()) / (n - row.size) for row in rows])
    raise ValueError(f"unknown between-context anchor {kind!r}")


def estimate_variance_components(
    batch, between_anchor: str = "loo-mean"
) -> VarianceComponents:
    """Method-of-moments estimates of (sigma^2, delta^2) from a batch.

    sigma^2 is the pooled within-context sample variance.  delta^2 is the
    dispersion of per-context means around their cross-context anchors,
    de-biased by sigma^2 / mean(K_c) and clamped at zero.
    """
    rows = as_reward_batch(batch)
    if len(rows) < 2:
        raise InsufficientContextsError(
            f"variance components need >= 2 contexts, got {len(rows)}"
        )
    for c, row in enumerate(rows):
        if row.size < 2:
            raise InsufficientRolloutsError(
                f"context {c} has {row.size} rollout(s); variance estimation needs >= 2"
            )
    dof = sum(row.size - 1 for row in rows)
    sigma2 = sum(float(((row - row.mean()) ** 2).sum()) for row in rows) / dof

    anchors = _between_anchor(rows, xctx_baseline(rows), between_anchor)
    means = np.array([row.mean() for row in rows])
    k_bar = np.mean([row.size for row in rows])
    between = ((means - anchors) ** 2).sum() / (len(rows) - 1)
    delta2 = max(0.0, between - sigma2 / k_bar)
    return VarianceComponents(sigma2_hat=sigma2, delta2_hat=float(delta2))


def shrinkage_coefficients(batch, vc: VarianceComponents) -> np.ndarray:
    """Per-context shrinkage weights a_c = q_c / (q_c + delta^2).

    q_c = sigma^2 / (K_c - 1) is the error variance of the leave-one-out
    within-context mean.  The degenerate 0/0 case falls back to a_c = 0
    (pure within-context baseline).
    """
    rows = as_reward_batch(batch)
    sizes = np.array([row.size for row in rows], dtype=np.float64)
    q = vc.sigma2_hat / (sizes - 1.0)
    denom = q + vc.delta2_hat
    with np.errstate(invalid="ignore"):
        alpha = np.where(denom > 0.0, q / np.where(denom > 0.0, denom, 1.0), 0.0)
    return alpha


def js_baseline(batch, between_anchor: str = "loo-mean") -> list[np.ndarray]:
    """James-Stein shrinkage baseline.

    b[c][i] = (1 - a_c) * rloo[c][i] + a_c * xctx[c][i], with both parts
    leave-one-out for the same rollout (c, i).  Shrinkage weights are
    re-estimated from the batch; they are treated as detached constants,
    matching the gradient-side convention.
    """
    rows = as_reward_batch(batch)
    if len(rows) == 2:
        warnings.warn(
            "James-Stein shrinkage is only guaranteed to improve MSE for >= 3 "
            "contexts; got 2",
            stacklevel=2,
        )
    vc = estimate_variance_components(rows, between_anchor=between_anchor)
    alpha = shrinkage_coefficients(rows, vc)
    rloo = rloo_baseline(rows)
    xctx = xctx_baseline(rows)
    return [
        (1.0 - a) * b_r + a * b_x for a, b_r, b_x in zip(alpha, rloo, xctx)
    ]


def compute_baseline(batch, kind: str, between_anchor: str = "loo-mean"):
    """Dispatch a baseline computation by kind; "none" gives zeros."""
    if kind == "none":
        rows = as_reward_batch(batch)
        return [np.zeros_like(row) for row in rows]
    if kind == "rloo":
        return rloo_baseline(batch)
    if kind == "xctx":
        return xctx_baseline(batch)
    if kind == "js":
        return js_baseline(batch, between_anchor=between_anchor)
    raise ValueError(f"unknown baseline kind {kind!r}")


def optimal_baseline_oracle(rewards, scores) -> float:
    """Monte-Carlo plug-in of the variance-optimal scalar baseline.

    b* = sum_k r_k ||g_k||^2 / sum_k ||g_k||^2 over rollouts k, where g_k
    is the score vector of rollout k.
    """
    r = np.asarray(rewards, dtype=np.float64)
    g = [np.asarray(s, dtype=np.float64) for s in scores]
    if r.ndim != 1 or len(g) != r.size or r.size < 2:
        raise ValueError("need equal-length rewards and scores with >= 2 rollouts")
    w = np.array([float(v @ v) for v in g])
    if not w.any():
        raise DegenerateWeightsError("all score norms are zero")
    return float((r * w).sum() / w.sum())


# ---------------------------------------------------------------------------
# Vectorized rectangular fast paths.
#
# The synthetic benchmark evaluates thousands of equally-sized batches at
# once; these helpers operate on stacked reward arrays of shape
# (..., B, K) and agree exactly with the per-batch functions above
# (asserted in the test suite).
# ---------------------------------------------------------------------------


def rloo_stack(r: np.ndarray) -> np.ndarray:
    k = r.shape[-1]
    if k < 2:
        raise InsufficientRolloutsError("stacked RLOO needs K >= 2")
    return (r.sum(axis=-1, keepdims=True) - r) / (k - 1)


def xctx_stack(r: np.ndarray) -> np.ndarray:
    n = r.shape[-1] * r.shape[-2]
    if n < 2:
        raise InsufficientRolloutsError("stacked cross-context needs >= 2 rollouts")
    total = r.sum(axis=(-1, -2), keepdims=True)
    return (total - r) / (n - 1)


def js_stack(r: np.ndarray, between_anchor: str = "loo-mean") -> np.ndarray:
    b = r.shape[-2]
    k = r.shape[-1]
    if b < 2:
        raise InsufficientContextsError("stacked JS needs B >= 2")
    if k < 2:
        raise InsufficientRolloutsError("stacked JS needs K >= 2")
    rloo = rloo_stack(r)
    xctx = xctx_stack(r)
    means = r.mean(axis=-1)
    sigma2 = ((r - means[..., None]) ** 2).sum(axis=(-1, -2)) / (b * (k - 1))
    if between_anchor == "loo-mean":
        anchors = xctx.mean(axis=-1)
    elif between_anchor == "exclude-context":
        total = r.sum(axis=(-1, -2), keepdims=False)
        anchors = (total[..., None] - r.sum(axis=-1)) / (k * (b - 1))
    else:
        raise ValueError(f"unknown between-context anchor {between_anchor!r}")
    between = ((means - anchors) ** 2).sum(axis=-1) / (b - 1)
    delta2 = np.maximum(0.0, between - sigma2 / k)
    q = sigma2 / (k - 1)
    denom = q + delta2
    alpha = np.where(denom > 0.0, q / np.where(denom > 0.0, denom, 1.0), 0.0)
    alpha = alpha[..., None, None]
    return (1.0 - alpha) * rloo + alpha * xctx
