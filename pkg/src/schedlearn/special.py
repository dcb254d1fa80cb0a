"""Special functions and Gamma/Dirichlet sampling primitives.

``digamma`` and ``log_gamma`` are evaluated by shifting the argument upward
with the recurrences psi(x+1) = psi(x) + 1/x and lnG(x+1) = lnG(x) + ln x
until the asymptotic (Stirling-type) series converges to double precision.
Gamma variates use the Marsaglia-Tsang squeeze/rejection method, boosted to
shape+1 for shapes below one; Dirichlet variates are normalized independent
Gamma draws.
"""

from __future__ import annotations

import numpy as np

from .rng import RandomStream

__all__ = ["digamma", "log_gamma", "sample_gamma", "sample_dirichlet"]

# Asymptotic series coefficients B_{2n}/(2n): psi(x) ~ ln x - 1/(2x) - sum c_n x^{-2n}.
_PSI_COEFFS = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)
_PSI_SHIFT = 8.0

# Stirling series coefficients B_{2n}/(2n(2n-1)):
# lnG(x) ~ (x-1/2) ln x - x + ln(2*pi)/2 + sum c_n x^{-(2n-1)}.
_LGAM_COEFFS = (
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
)
_LGAM_SHIFT = 10.0
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)

# Gamma draws at very small shapes underflow to zero; a floor keeps the
# Dirichlet simplex open without measurably distorting the distribution.
_GAMMA_FLOOR = 1e-300


def _validate_positive(x: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(x)) or np.any(x <= 0.0):
        raise ValueError(f"{name} must be positive and finite")


def digamma(x):
    """Digamma function psi(x) = d/dx ln Gamma(x) for x > 0.

    Accepts scalars or arrays; relative error below 1e-10 on [1e-3, 1e6].
    """
    arr = np.asarray(x, dtype=np.float64)
    _validate_positive(arr, "x")
    scalar = arr.ndim == 0
    w = np.atleast_1d(arr).copy()
    acc = np.zeros_like(w)
    # Shift into the asymptotic regime; at most ceil(_PSI_SHIFT) passes.
    mask = w < _PSI_SHIFT
    while mask.any():
        acc[mask] -= 1.0 / w[mask]
        w[mask] += 1.0
        mask = w < _PSI_SHIFT
    inv2 = 1.0 / (w * w)
    series = np.zeros_like(w)
    for c in reversed(_PSI_COEFFS):
        series = (series + c) * inv2
    out = acc + np.log(w) - 0.5 / w - series
    return float(out[0]) if scalar else out


def log_gamma(x):
    """Natural log of the Gamma function for x > 0.

    Accepts scalars or arrays; relative error below 1e-12 on [1e-3, 1e6]
    away from the zeros of ln Gamma at x = 1 and x = 2, where the error is
    absolute at machine level.
    """
    arr = np.asarray(x, dtype=np.float64)
    _validate_positive(arr, "x")
    scalar = arr.ndim == 0
    w = np.atleast_1d(arr).copy()
    acc = np.zeros_like(w)
    mask = w < _LGAM_SHIFT
    while mask.any():
        acc -= np.where(mask, np.log(w), 0.0)
        w[mask] += 1.0
        mask = w < _LGAM_SHIFT
    inv = 1.0 / w
    inv2 = inv * inv
    series = np.zeros_like(w)
    for c in reversed(_LGAM_COEFFS):
        series = series * inv2 + c
    series *= inv
    out = acc + (w - 0.5) * np.log(w) - w + _HALF_LOG_2PI + series
    return float(out[0]) if scalar else out


def sample_gamma(shape, stream: RandomStream, size: int | None = None):
    """Draw Gamma(shape, 1) variates.

    ``shape`` may be a scalar or an array; with ``size=None`` the output has
    ``shape``'s own shape, otherwise ``size`` rows are drawn and the result
    has shape ``(size,) + np.shape(shape)``.
    """
    a = np.asarray(shape, dtype=np.float64)
    _validate_positive(a, "shape")
    scalar = a.ndim == 0 and size is None
    if size is None:
        out_shape = a.shape
    else:
        out_shape = (int(size),) + a.shape
    alpha = np.broadcast_to(a, out_shape).reshape(-1)
    gen = stream.gen

    boost = alpha < 1.0
    d = np.where(boost, alpha + 1.0, alpha) - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = np.empty(alpha.size, dtype=np.float64)
    pending = np.arange(alpha.size)
    while pending.size:
        z = gen.standard_normal(pending.size)
        u = gen.uniform(size=pending.size)
        t = 1.0 + c[pending] * z
        valid = t > 0.0
        v = t * t * t
        z2 = z * z
        dv = d[pending] * v
        squeeze = u < 1.0 - 0.0331 * z2 * z2
        with np.errstate(divide="ignore", invalid="ignore"):
            log_accept = 0.5 * z2 + d[pending] - dv + d[pending] * np.log(
                np.where(valid, v, 1.0)
            )
            accept = valid & (squeeze | (np.log(u) < log_accept))
        out[pending[accept]] = dv[accept]
        pending = pending[~accept]
    if boost.any():
        u = gen.uniform(size=int(boost.sum()))
        out[boost] *= np.exp(np.log(u) / alpha[boost])
    out = np.maximum(out, _GAMMA_FLOOR)
    if scalar:
        return float(out[0])
    return out.reshape(out_shape)


def sample_dirichlet(concentrations, stream: RandomStream, size: int | None = None):
    """Draw points on the open simplex from Dirichlet(concentrations).

    Returns a vector summing to one (renormalized after the Gamma draws);
    with ``size=N`` an ``(N, dim)`` array of independent draws.
    """
    alpha = np.asarray(concentrations, dtype=np.float64)
    if alpha.ndim != 1 or alpha.size < 2:
        raise ValueError("concentrations must be a vector of dimension >= 2")
    _validate_positive(alpha, "concentrations")
    g = sample_gamma(alpha, stream, size=size)
    return g / g.sum(axis=-1, keepdims=True)
