"""Pointwise upper confidence bounds on the risk of a loss bounded in [0, 1].

Every bound here maps ``(n, delta, rhat)`` to a value ``R+`` such that, for a
*fixed* parameter, ``P[R <= R+] >= 1 - delta`` over the draw of the ``n``
calibration points. Nothing here is uniform over parameters.
"""

from __future__ import annotations

import enum
import math
from functools import lru_cache

import numpy as np
from scipy.special import gammaln, logsumexp

__all__ = [
    "UcbKind",
    "hoeffding_ucb",
    "bentkus_ucb",
    "hybrid_ucb",
    "ucb",
    "log_binom_cdf",
]

_BISECT_TOL = 1e-9


class UcbKind(str, enum.Enum):
    HOEFFDING = "hoeffding"
    BENTKUS = "bentkus"
    # pointwise min of both branches, each at the full delta
    HYBRID = "hybrid"
    # each branch at delta/2; valid by a union bound
    HYBRID_SPLIT = "hybrid-split"

    @classmethod
    def parse(cls, value: "str | UcbKind") -> "UcbKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower().replace("_", "-"))
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown UCB kind {value!r}; expected one of {names}") from None


def _check(n: int, delta: float, rhat: float) -> None:
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"delta must lie in [0, 1], got {delta!r}")
    if delta == 0.0:
        raise ValueError("delta = 0 gives an infinite bound")
    if not (0.0 <= rhat <= 1.0) or math.isnan(rhat):
        raise ValueError(f"rhat must lie in [0, 1], got {rhat!r}")


def hoeffding_ucb(n: int, delta: float, rhat: float) -> float:
    """``rhat + sqrt(log(1/delta) / (2n))``; not clamped to 1."""
    _check(n, delta, rhat)
    return rhat + math.sqrt(math.log(1.0 / delta) / (2.0 * n))


def log_binom_cdf(k: int, n: int, p: float) -> float:
    """``log P[Bin(n, p) <= k]``, summed in log space."""
    if k < 0:
        return -math.inf
    if k >= n or p <= 0.0:
        return 0.0
    if p >= 1.0:
        return -math.inf
    i = np.arange(k + 1, dtype=float)
    log_terms = (
        gammaln(n + 1.0)
        - gammaln(i + 1.0)
        - gammaln(n - i + 1.0)
        + i * math.log(p)
        + (n - i) * math.log1p(-p)
    )
    return min(0.0, float(logsumexp(log_terms)))


def _successes(n: int, rhat: float) -> int:
    # n * rhat is usually an integer count divided back out; absorb the roundoff
    return math.ceil(n * rhat - 1e-9)


@lru_cache(maxsize=65536)
def _bentkus_from_count(n: int, delta: float, k: int) -> float:
    if k >= n:
        return 1.0
    target = math.log(delta) - 1.0
    # k/n >= rhat, and the median of Bin(n, k/n) is k, so cdf(k/n) >= 1/2 > delta/e:
    # the bracket [k/n, 1] loses nothing against [rhat, 1]
    lo = k / n
    if log_binom_cdf(k, n, lo) <= target:
        return lo
    hi = 1.0
    # invariant: cdf(lo) > target >= cdf(hi)
    while hi - lo > _BISECT_TOL:
        mid = 0.5 * (lo + hi)
        if log_binom_cdf(k, n, mid) <= target:
            hi = mid
        else:
            lo = mid
    return hi


def bentkus_ucb(n: int, delta: float, rhat: float) -> float:
    """Smallest ``R`` in ``[rhat, 1]`` with ``BinCDF(ceil(n*rhat); n, R) <= delta/e``.

    Found by bisection to an absolute tolerance of 1e-9, returning the upper
    end of the final bracket so the bound errs conservative.
    """
    _check(n, delta, rhat)
    return _bentkus_from_count(int(n), float(delta), _successes(n, rhat))


def hybrid_ucb(n: int, delta: float, rhat: float, split: bool = False) -> float:
    """Pointwise minimum of the Hoeffding and Bentkus bounds.

    With ``split=True`` each branch runs at ``delta / 2``, which keeps the
    minimum a valid ``1 - delta`` bound. Without it, both branches use the
    full ``delta`` and the result is only a heuristic.
    """
    d = delta / 2.0 if split else delta
    return min(hoeffding_ucb(n, d, rhat), bentkus_ucb(n, d, rhat))


def ucb(kind: "UcbKind | str", n: int, delta: float, rhat: float) -> float:
    kind = UcbKind.parse(kind)
    if kind is UcbKind.HOEFFDING:
        return hoeffding_ucb(n, delta, rhat)
    if kind is UcbKind.BENTKUS:
        return bentkus_ucb(n, delta, rhat)
    return hybrid_ucb(n, delta, rhat, split=kind is UcbKind.HYBRID_SPLIT)
