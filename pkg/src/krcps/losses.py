"""Interval losses: the 0/1 miscoverage fraction, its convex surrogate, and pinball.

All interval losses accept ``x`` of shape ``(d,)`` or ``(n, d)`` together with a
bundle of matching shape and return one value per row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import IntervalBundle, check_lambda
from .exceptions import DimensionError

__all__ = ["GammaParams", "loss01", "loss_gamma", "pinball_loss", "coverage_need"]

WIDTH_FLOOR = 1e-9


@dataclass(frozen=True)
class GammaParams:
    gamma: float
    width_floor: float = WIDTH_FLOOR

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not self.width_floor > 0:
            raise ValueError("width_floor must be > 0")

    @property
    def q(self) -> float:
        return self.gamma / (1.0 - self.gamma)


def _align(x, bundle: IntervalBundle) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (bundle.d,):
        raise DimensionError(f"x has trailing dimension {x.shape[-1:]}, bundle has d={bundle.d}")
    if bundle.lower.ndim == 2 and x.shape != bundle.lower.shape:
        raise DimensionError(f"x shape {x.shape} does not match per-pair bundle {bundle.lower.shape}")
    return x


def loss01(x, bundle: IntervalBundle, lam) -> np.ndarray | float:
    """Fraction of coordinates of ``x`` outside ``[lower - lam, upper + lam]``.

    Endpoints count as covered.
    """
    x = _align(x, bundle)
    lam = check_lambda(lam, bundle.d)
    outside = (x < bundle.lower - lam) | (x > bundle.upper + lam)
    out = outside.mean(axis=-1)
    return float(out) if out.ndim == 0 else out


def loss_gamma(x, bundle: IntervalBundle, lam, params: GammaParams) -> np.ndarray | float:
    """Convex upper bound on :func:`loss01`, valid for ``lam >= 0``.

    Per coordinate: ``[2(1+q)|x - c| / max(I, floor) - q]_+`` with ``I`` the
    widened interval length and ``c`` the base center, averaged over coordinates.
    """
    x = _align(x, bundle)
    lam = check_lambda(lam, bundle.d)
    if np.any(lam < 0):
        raise ValueError("loss_gamma is only defined (convex) for lam >= 0")
    q = params.q
    width = np.maximum(bundle.upper - bundle.lower + 2.0 * lam, params.width_floor)
    terms = np.maximum(2.0 * (1.0 + q) * np.abs(x - bundle.center) / width - q, 0.0)
    out = terms.mean(axis=-1)
    return float(out) if out.ndim == 0 else out


def coverage_need(x, bundle: IntervalBundle) -> np.ndarray:
    """Smallest ``lam_j`` covering ``x_j``: ``max(lower - x, x - upper)``.

    Coordinate ``j`` is covered at ``lam`` iff ``need_j <= lam_j``, which lets a
    sweep over many ``lam`` reuse one pass over the data.
    """
    x = _align(x, bundle)
    return np.maximum(bundle.lower - x, x - bundle.upper)


def pinball_loss(x, qhat, alpha: float):
    """Quantile loss at level ``alpha``; a residual of exactly zero costs nothing."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    x = np.asarray(x, dtype=float)
    qhat = np.asarray(qhat, dtype=float)
    over = x > qhat
    out = np.where(over, alpha * (x - qhat), (1.0 - alpha) * (qhat - x))
    return float(out) if out.ndim == 0 else out
