"""Entrywise empirical quantiles of sampler draws.

Samples are arrays of shape ``(..., m, d)``: ``m`` i.i.d. draws of a
``d``-dimensional sampler output, optionally batched over calibration pairs.
The returned bundle drops the ``m`` axis.
"""

from __future__ import annotations

import math

import numpy as np

from .core import IntervalBundle
from .exceptions import DimensionError, InsufficientSamplesError

__all__ = ["calibrated_ranks", "naive_ranks", "min_samples", "calibrated_quantiles", "naive_quantiles"]

# (m+1)*alpha/2 is often an integer in exact arithmetic; keep float noise from moving a rank
_RANK_EPS = 1e-9


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


def min_samples(alpha: float) -> int:
    """Smallest ``m`` for which the calibrated ranks fall inside ``1..m``."""
    _check_alpha(alpha)
    m = max(1, math.ceil(2.0 / alpha) - 2)
    while math.floor((m + 1) * alpha / 2.0 + _RANK_EPS) < 1:
        m += 1
    return m


def calibrated_ranks(m: int, alpha: float) -> tuple[int, int]:
    """1-indexed order-statistic ranks ``floor((m+1)a/2)`` and ``ceil((m+1)(1-a/2))``."""
    _check_alpha(alpha)
    r_lo = math.floor((m + 1) * alpha / 2.0 + _RANK_EPS)
    r_hi = math.ceil((m + 1) * (1.0 - alpha / 2.0) - _RANK_EPS)
    if r_lo < 1 or r_hi > m:
        raise InsufficientSamplesError(
            f"m={m} samples are too few for alpha={alpha}; need m >= {min_samples(alpha)}"
        )
    return r_lo, r_hi


def naive_ranks(m: int, alpha: float) -> tuple[int, int]:
    """Nearest-rank ``ceil(m * level)`` at levels ``a/2`` and ``1 - a/2``."""
    _check_alpha(alpha)
    r_lo = max(1, math.ceil(m * alpha / 2.0 - _RANK_EPS))
    r_hi = min(m, max(1, math.ceil(m * (1.0 - alpha / 2.0) - _RANK_EPS)))
    return r_lo, r_hi


def _order_stats(samples, r_lo: int, r_hi: int) -> IntervalBundle:
    part = np.partition(samples, [r_lo - 1, r_hi - 1], axis=-2)
    return IntervalBundle(part[..., r_lo - 1, :], part[..., r_hi - 1, :])


def _as_samples(samples) -> np.ndarray:
    s = np.asarray(samples, dtype=float)
    if s.ndim < 2 or s.shape[-2] < 1 or s.shape[-1] < 1:
        raise DimensionError(f"samples must have shape (..., m, d) with m, d >= 1; got {s.shape}")
    if s.ndim > 3:
        raise DimensionError("at most one batch axis is supported")
    return s


def calibrated_quantiles(samples, alpha: float) -> IntervalBundle:
    """Per-coordinate order statistics giving finite-sample entrywise coverage.

    For a fresh draw exchangeable with the ``m`` samples, each coordinate falls
    in ``[lower_j, upper_j]`` with probability at least ``1 - alpha``. No
    interpolation is done; the endpoints are actual sample values.
    """
    s = _as_samples(samples)
    r_lo, r_hi = calibrated_ranks(s.shape[-2], alpha)
    return _order_stats(s, r_lo, r_hi)


def naive_quantiles(samples, alpha: float) -> IntervalBundle:
    s = _as_samples(samples)
    r_lo, r_hi = naive_ranks(s.shape[-2], alpha)
    return _order_stats(s, r_lo, r_hi)
