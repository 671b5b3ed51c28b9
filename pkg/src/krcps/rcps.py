"""Scalar RCPS sweep along a ray in lambda-space.

The sweep walks ``lam(t) = max(offset + t * eta, floor)`` for
``t = beta_max - k * d_beta``, ``k = 1, 2, ...``, evaluating the 0/1 risk and
its UCB on the calibration rows at each step, and stops the first time the
UCB reaches ``epsilon``; the previous grid point is returned. With
``offset = 0`` and ``eta = 1`` this is plain RCPS.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bounds import ucb
from .core import IntervalBundle, RiskSpec, check_lambda
from .exceptions import DimensionError, RiskControlError
from .losses import coverage_need

__all__ = ["SweepResult", "rcps_scalar", "empirical_risk01"]


@dataclass(frozen=True)
class SweepResult:
    value: float
    lam: np.ndarray
    empirical_risk: float
    ucb: float
    steps: int
    trace: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None

    @property
    def mean_lambda(self) -> float:
        return float(np.mean(self.lam))


def empirical_risk01(need: np.ndarray, lam: np.ndarray) -> float:
    """Mean 0/1 loss over rows of a precomputed :func:`coverage_need` matrix."""
    return np.count_nonzero(need > lam) / need.size


def rcps_scalar(
    x,
    bundle: IntervalBundle,
    spec: RiskSpec,
    *,
    eta=None,
    offset=None,
    floor: float | None = 0.0,
    record_trace: bool = False,
) -> SweepResult:
    """Smallest grid ``t`` whose UCB stays below ``epsilon`` for every larger grid ``t``.

    Parameters
    ----------
    x : array, shape (n, d)
        Ground truth of the calibration rows the bound is computed on.
    bundle : IntervalBundle
        Base intervals, shared ``(d,)`` or per row ``(n, d)``.
    spec : RiskSpec
        Supplies ``epsilon``, ``delta``, ``ucb_kind``, ``beta_max`` and ``d_beta``.
    eta, offset : array, shape (d,), optional
        Sweep direction (entrywise >= 0, default all ones) and offset (default 0).
    floor : float or None
        Entrywise clamp applied to ``lam(t)``. The sweep also ends, returning
        the current point, once every coordinate sits on the clamp. ``None``
        disables clamping; the sweep then ends when the loss saturates.
    record_trace : bool
        Keep every evaluated ``(t, risk, ucb)`` triple on the result.

    Raises
    ------
    RiskControlError
        If the first grid point below ``beta_max`` already fails, so no grid
        point is certified.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != bundle.d:
        raise DimensionError(f"x must have shape (n, {bundle.d}); got {x.shape}")
    n, d = x.shape
    if n == 0:
        raise ValueError("empty calibration set")
    eta = np.ones(d) if eta is None else check_lambda(eta, d)
    offset = np.zeros(d) if offset is None else check_lambda(offset, d)
    if np.any(eta < 0):
        raise ValueError("sweep direction must be entrywise nonnegative")
    if not np.any(eta > 0):
        raise ValueError("sweep direction must have a positive entry")

    need = coverage_need(x, bundle.rows(n))
    moving = eta > 0
    eps, delta, kind = spec.epsilon, spec.delta, spec.ucb_kind

    if floor is None:
        if eps > 1.0:
            raise ValueError("epsilon > 1 with no clamp floor: the sweep never terminates")
        # below t_sat every moving coordinate misses every row and the loss is flat
        t_sat = float(np.max((need.min(axis=0)[moving] - offset[moving]) / eta[moving]))
    else:
        t_sat = -np.inf

    ts, risks, ucbs = [], [], []
    prev = None
    k = 0
    while True:
        k += 1
        t = spec.beta_max - k * spec.d_beta
        lam = offset + t * eta
        if floor is not None:
            lam = np.maximum(lam, floor)
        rhat = empirical_risk01(need, lam)
        bound = ucb(kind, n, delta, rhat)
        if record_trace:
            ts.append(t)
            risks.append(rhat)
            ucbs.append(bound)
        if bound >= eps:
            if prev is None:
                raise RiskControlError(
                    f"cannot control risk at epsilon={eps}: UCB {bound:.6g} >= epsilon "
                    f"at the first step below beta_max={spec.beta_max}"
                )
            break
        prev = (t, lam, rhat, bound)
        if floor is not None and np.all(lam[moving] == floor):
            break
        if t < t_sat:
            break

    trace = (np.array(ts), np.array(risks), np.array(ucbs)) if record_trace else None
    t, lam, rhat, bound = prev
    lam = lam.copy()
    lam.setflags(write=False)
    return SweepResult(float(t), lam, float(rhat), float(bound), k, trace)
