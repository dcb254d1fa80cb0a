"""Dirichlet schedule policies.

A policy defines a Dirichlet distribution over interval allocations on
the (L+1)-simplex.  A sampled allocation ``tau`` is turned into a strictly
decreasing schedule of L timesteps by cumulative summation, with the last
interval acting as a stopping margin above t = 0.  Two parameterizations
are provided:

* ``DirichletPolicy`` holds the concentration vector directly and is
  context-independent (the analytic variant used by the synthetic
  benchmark).
* ``FeaturePolicy`` maps a context feature vector through a two-layer
  perceptron (tanh hidden layer) to concentrations via
  ``softplus(z) + 1e-3``; gradients are computed by manual
  backpropagation, so the package needs no autodiff dependency.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .rng import RandomStream
from .special import digamma, log_gamma, sample_dirichlet

__all__ = [
    "ALPHA_OFFSET",
    "Schedule",
    "allocation_to_schedule",
    "uniform_allocation",
    "dirichlet_log_prob",
    "score_wrt_alpha",
    "DirichletPolicy",
    "FeaturePolicy",
    "save_policy",
    "load_policy",
    "policy_from_dict",
]

# Positivity offset added after softplus; doubles as the smallest legal
# concentration for the analytic variant.
ALPHA_OFFSET = 1e-3

# Floor applied to log(tau) inside densities and scores: Gamma draws can
# underflow for very small concentrations.
_LOG_TAU_FLOOR = np.log(1e-12)

CHECKPOINT_SCHEMA = "schedlearn-policy-v1"


@dataclass(frozen=True)
class Schedule:
    """Descending timesteps in (0, 1) plus the final stopping margin.

    ``timesteps[ell] = 1 - sum(tau[:ell + 1])`` and the last timestep equals
    ``stopping_margin`` because the implicit terminal point is t = 0.
    """

    timesteps: np.ndarray
    stopping_margin: float

    @property
    def n_steps(self) -> int:
        return len(self.timesteps)


def allocation_to_schedule(tau) -> Schedule:
    """Convert a simplex allocation of L+1 intervals into a Schedule."""
    tau = np.asarray(tau, dtype=np.float64)
    if tau.ndim != 1 or tau.size < 2:
        raise ValueError("allocation must be a vector of at least 2 intervals")
    timesteps = 1.0 - np.cumsum(tau[:-1])
    return Schedule(timesteps=timesteps, stopping_margin=float(tau[-1]))


def uniform_allocation(n_steps: int) -> np.ndarray:
    """The flat allocation whose schedule is the uniform default grid."""
    return np.full(n_steps + 1, 1.0 / (n_steps + 1))


def _check_same_shape(tau: np.ndarray, alpha: np.ndarray) -> None:
    if tau.shape != alpha.shape:
        raise ValueError(f"shape mismatch: tau {tau.shape} vs alpha {alpha.shape}")


def dirichlet_log_prob(tau, alpha) -> float:
    """Log-density of the Dirichlet distribution at allocation ``tau``.

    ln Gamma(sum a) - sum ln Gamma(a_j) + sum (a_j - 1) ln tau_j, with
    ln tau floored to keep the value finite for underflowed components.
    """
    tau = np.asarray(tau, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    _check_same_shape(tau, alpha)
    log_tau = np.maximum(np.log(tau), _LOG_TAU_FLOOR)
    return float(
        log_gamma(alpha.sum()) - log_gamma(alpha).sum() + ((alpha - 1.0) * log_tau).sum()
    )


def score_wrt_alpha(tau, alpha) -> np.ndarray:
    """Gradient of the Dirichlet log-density w.r.t. the concentrations.

    Componentwise: psi(sum a) - psi(a_j) + ln tau_j.
    """
    tau = np.asarray(tau, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    _check_same_shape(tau, alpha)
    log_tau = np.maximum(np.log(tau), _LOG_TAU_FLOOR)
    return digamma(alpha.sum()) - digamma(alpha) + log_tau


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


class DirichletPolicy:
    """Context-independent policy holding the concentrations directly.

    The trainable parameters are the concentrations themselves, so the
    score w.r.t. the parameters is exactly ``score_wrt_alpha``.  After
    unconstrained optimizer updates, :meth:`project` clamps the
    concentrations back to the legal region (>= ALPHA_OFFSET).
    """

    variant = "analytic"

    def __init__(self, alpha):
        alpha = np.asarray(alpha, dtype=np.float64).copy()
        if alpha.ndim != 1 or alpha.size < 2:
            raise ValueError("alpha must be a vector of dimension >= 2")
        if np.any(alpha < ALPHA_OFFSET):
            raise ValueError(f"concentrations must be >= {ALPHA_OFFSET}")
        self.alpha = alpha

    @classmethod
    def uniform(cls, n_steps: int, value: float = 1.0) -> "DirichletPolicy":
        return cls(np.full(n_steps + 1, float(value)))

    @property
    def n_steps(self) -> int:
        return self.alpha.size - 1

    @property
    def n_params(self) -> int:
        return self.alpha.size

    def get_flat(self) -> np.ndarray:
        return self.alpha.copy()

    def set_flat(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != self.alpha.shape:
            raise ValueError("parameter vector has the wrong length")
        self.alpha = flat.copy()

    def project(self) -> None:
        np.maximum(self.alpha, ALPHA_OFFSET, out=self.alpha)

    def forward(self, features=None) -> np.ndarray:
        return self.alpha.copy()

    def score(self, features, tau) -> np.ndarray:
        return score_wrt_alpha(tau, self.alpha)

    def sample(self, features, stream: RandomStream) -> np.ndarray:
        return sample_dirichlet(self.forward(features), stream)

    def to_dict(self) -> dict:
        return {
            "schema": CHECKPOINT_SCHEMA,
            "variant": self.variant,
            "n_steps": self.n_steps,
            "alpha": self.alpha.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DirichletPolicy":
        return cls(np.asarray(data["alpha"], dtype=np.float64))


class FeaturePolicy:
    """Two-layer perceptron mapping context features to concentrations.

    forward: h = tanh(W1 x + b1); alpha = softplus(W2 h + b2) + 1e-3.
    The flat parameter layout is [W1 (row-major), b1, W2 (row-major), b2].
    """

    variant = "feature-net"

    def __init__(self, w1, b1, w2, b2):
        self.w1 = np.asarray(w1, dtype=np.float64).copy()
        self.b1 = np.asarray(b1, dtype=np.float64).copy()
        self.w2 = np.asarray(w2, dtype=np.float64).copy()
        self.b2 = np.asarray(b2, dtype=np.float64).copy()
        h, d = self.w1.shape
        if self.b1.shape != (h,) or self.w2.shape[1] != h:
            raise ValueError("inconsistent layer shapes")
        if self.b2.shape != (self.w2.shape[0],):
            raise ValueError("inconsistent output shapes")

    @classmethod
    def init(
        cls,
        feature_dim: int,
        n_steps: int,
        stream: RandomStream,
        hidden_width: int = 64,
        init_scale: float = 0.1,
    ) -> "FeaturePolicy":
        """Random from-scratch initialization.

        Small random weights keep the initial concentrations near
        softplus(0) + 1e-3 (a near-uniform mean schedule) while leaving
        gradients nonzero in both layers.
        """
        gen = stream.gen
        w1 = gen.standard_normal((hidden_width, feature_dim)) / np.sqrt(feature_dim)
        b1 = np.zeros(hidden_width)
        w2 = init_scale * gen.standard_normal((n_steps + 1, hidden_width)) / np.sqrt(hidden_width)
        b2 = np.zeros(n_steps + 1)
        return cls(w1, b1, w2, b2)

    @property
    def feature_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_width(self) -> int:
        return self.w1.shape[0]

    @property
    def n_steps(self) -> int:
        return self.b2.size - 1

    @property
    def n_params(self) -> int:
        return self.w1.size + self.b1.size + self.w2.size + self.b2.size

    def get_flat(self) -> np.ndarray:
        return np.concatenate(
            [self.w1.ravel(), self.b1, self.w2.ravel(), self.b2]
        )

    def set_flat(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_params,):
            raise ValueError("parameter vector has the wrong length")
        i = 0
        for arr in (self.w1, self.b1, self.w2, self.b2):
            arr[...] = flat[i : i + arr.size].reshape(arr.shape)
            i += arr.size

    def project(self) -> None:
        # softplus + offset already guarantees valid concentrations
        pass

    def _forward_parts(self, features):
        x = np.asarray(features, dtype=np.float64)
        if x.shape != (self.feature_dim,):
            raise ValueError(
                f"feature vector has dimension {x.shape}, expected ({self.feature_dim},)"
            )
        a1 = self.w1 @ x + self.b1
        h = np.tanh(a1)
        z = self.w2 @ h + self.b2
        alpha = _softplus(z) + ALPHA_OFFSET
        return x, h, z, alpha

    def forward(self, features) -> np.ndarray:
        return self._forward_parts(features)[3]

    def score(self, features, tau) -> np.ndarray:
        """d log pi / d theta via backprop of score_wrt_alpha through the net."""
        x, h, z, alpha = self._forward_parts(features)
        g_alpha = score_wrt_alpha(tau, alpha)
        g_z = g_alpha * _sigmoid(z)  # softplus' = sigmoid
        g_w2 = np.outer(g_z, h)
        g_b2 = g_z
        g_h = self.w2.T @ g_z
        g_a1 = g_h * (1.0 - h * h)
        g_w1 = np.outer(g_a1, x)
        g_b1 = g_a1
        return np.concatenate([g_w1.ravel(), g_b1, g_w2.ravel(), g_b2])

    def sample(self, features, stream: RandomStream) -> np.ndarray:
        return sample_dirichlet(self.forward(features), stream)

    def to_dict(self) -> dict:
        return {
            "schema": CHECKPOINT_SCHEMA,
            "variant": self.variant,
            "feature_dim": self.feature_dim,
            "hidden_width": self.hidden_width,
            "n_steps": self.n_steps,
            "w1": self.w1.tolist(),
            "b1": self.b1.tolist(),
            "w2": self.w2.tolist(),
            "b2": self.b2.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FeaturePolicy":
        return cls(data["w1"], data["b1"], data["w2"], data["b2"])


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def policy_from_dict(data: dict):
    """Rebuild a policy from its checkpoint dictionary."""
    if data.get("schema") != CHECKPOINT_SCHEMA:
        raise ValueError(f"unrecognized checkpoint schema: {data.get('schema')!r}")
    variant = data.get("variant")
    if variant == DirichletPolicy.variant:
        return DirichletPolicy.from_dict(data)
    if variant == FeaturePolicy.variant:
        return FeaturePolicy.from_dict(data)
    raise ValueError(f"unknown policy variant: {variant!r}")


def save_policy(policy, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(policy.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_policy(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"corrupt policy checkpoint {path}: {exc}") from exc
    return policy_from_dict(data)
