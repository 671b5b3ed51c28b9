"""Domain types, interval algebra, and the calibration split."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bounds import UcbKind
from .exceptions import DimensionError

__all__ = [
    "IntervalBundle",
    "CalibrationSet",
    "Membership",
    "RiskSpec",
    "nested_intervals",
    "split_calibration",
    "check_lambda",
    "default_gamma_grid",
]


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class IntervalBundle:
    """Per-feature base endpoints ``lower <= upper``.

    Either a single bundle of shape ``(d,)`` shared by every calibration pair,
    or one row per pair with shape ``(n, d)``.
    """

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower, upper = _frozen(self.lower), _frozen(self.upper)
        if lower.shape != upper.shape or lower.ndim not in (1, 2) or lower.shape[-1] < 1:
            raise DimensionError(
                f"lower/upper must share shape (d,) or (n, d); got {lower.shape} and {upper.shape}"
            )
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ValueError("interval endpoints must be finite")
        if np.any(lower > upper):
            raise ValueError("every lower endpoint must be <= its upper endpoint")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def d(self) -> int:
        return self.lower.shape[-1]

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.upper + self.lower)

    @property
    def base_width(self) -> np.ndarray:
        return self.upper - self.lower

    def width(self, lam) -> np.ndarray:
        lam = check_lambda(lam, self.d)
        return self.upper - self.lower + 2.0 * lam

    def take(self, idx) -> "IntervalBundle":
        """Rows ``idx`` of a per-pair bundle; a shared bundle is returned as is."""
        if self.lower.ndim == 1:
            return self
        return IntervalBundle(self.lower[idx], self.upper[idx])

    def rows(self, n: int) -> "IntervalBundle":
        """Broadcast to ``(n, d)``."""
        if self.lower.ndim == 2:
            if self.lower.shape[0] != n:
                raise DimensionError(f"bundle has {self.lower.shape[0]} rows, expected {n}")
            return self
        return IntervalBundle(
            np.broadcast_to(self.lower, (n, self.d)), np.broadcast_to(self.upper, (n, self.d))
        )


def check_lambda(lam, d: int) -> np.ndarray:
    """Coerce ``lam`` to a finite length-``d`` vector; scalars broadcast."""
    arr = np.asarray(lam, dtype=float)
    if arr.ndim == 0:
        arr = np.full(d, float(arr))
    if arr.shape != (d,):
        raise DimensionError(f"lambda has shape {arr.shape}, expected ({d},)")
    if not np.all(np.isfinite(arr)):
        raise ValueError("lambda entries must be finite")
    return arr


def nested_intervals(bundle: IntervalBundle, lam) -> tuple[np.ndarray, np.ndarray]:
    """Closed intervals ``[lower - lam, upper + lam]``, returned as (lo, hi)."""
    lam = check_lambda(lam, bundle.d)
    return bundle.lower - lam, bundle.upper + lam


@dataclass(frozen=True)
class CalibrationSet:
    """Shuffled calibration pairs; rows ``[:n_opt]`` form S_opt, the rest S_RCPS.

    ``permutation[i]`` is the input index of stored row ``i``, so a per-pair
    bundle built in input order is aligned with ``bundle.take(permutation)``.
    """

    x: np.ndarray
    y: np.ndarray
    n_opt: int
    permutation: np.ndarray = field(default=None)

    def __post_init__(self):
        x, y = _frozen(self.x), _frozen(self.y)
        if x.ndim != 2 or x.shape != y.shape or x.shape[1] < 1:
            raise DimensionError(f"x and y must share shape (n, d) with d >= 1; got {x.shape}, {y.shape}")
        n = x.shape[0]
        if not 0 <= self.n_opt < n:
            raise ValueError(f"need 0 <= n_opt < n (so S_RCPS is nonempty); got n_opt={self.n_opt}, n={n}")
        perm = np.arange(n) if self.permutation is None else np.asarray(self.permutation, dtype=np.int64)
        if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
            raise ValueError("permutation must be a permutation of range(n)")
        perm.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "n_opt", int(self.n_opt))
        object.__setattr__(self, "permutation", perm)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def n_rcps(self) -> int:
        return self.n - self.n_opt

    @property
    def opt_index(self) -> slice:
        return slice(0, self.n_opt)

    @property
    def rcps_index(self) -> slice:
        return slice(self.n_opt, self.n)


def split_calibration(x, y, n_opt: int, seed) -> CalibrationSet:
    """Shuffle the pairs under ``seed`` and split off the first ``n_opt`` rows."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or x.shape != y.shape:
        raise DimensionError(f"x and y must share shape (n, d); got {x.shape}, {y.shape}")
    n = x.shape[0]
    if not 1 <= n_opt < n:
        raise ValueError(f"n_opt must satisfy 1 <= n_opt < n = {n}; got {n_opt}")
    perm = np.random.default_rng(seed).permutation(n)
    return CalibrationSet(x[perm], y[perm], n_opt, perm)


@dataclass(frozen=True)
class Membership:
    """Assignment of each of ``d`` features to one of ``K`` groups."""

    labels: np.ndarray
    K: int

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or labels.size < 1 or not np.issubdtype(labels.dtype, np.integer):
            raise ValueError("labels must be a nonempty 1-D integer array")
        if self.K < 1 or labels.min() < 0 or labels.max() >= self.K:
            raise ValueError(f"labels must lie in [0, {self.K})")
        sizes = np.bincount(labels, minlength=self.K)
        if np.any(sizes == 0):
            raise ValueError(f"every group needs at least one feature; sizes are {sizes.tolist()}")
        labels = labels.astype(np.int64)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_matrix(cls, matrix) -> "Membership":
        m = np.asarray(matrix)
        if m.ndim != 2 or not np.all((m == 0) | (m == 1)) or not np.all(m.sum(axis=1) == 1):
            raise ValueError("membership matrix must be d x K one-hot")
        return cls(np.argmax(m, axis=1), m.shape[1])

    @property
    def d(self) -> int:
        return self.labels.size

    @property
    def group_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.K)

    @property
    def matrix(self) -> np.ndarray:
        m = np.zeros((self.d, self.K), dtype=np.int64)
        m[np.arange(self.d), self.labels] = 1
        return m

    def expand(self, lam_groups) -> np.ndarray:
        """``M @ lam_groups``: broadcast group values to features."""
        lam_groups = np.asarray(lam_groups, dtype=float)
        if lam_groups.shape != (self.K,):
            raise DimensionError(f"expected {self.K} group values, got shape {lam_groups.shape}")
        return lam_groups[self.labels]


def default_gamma_grid() -> tuple[float, ...]:
    return tuple(float(g) for g in np.linspace(0.3, 0.7, 16))


@dataclass(frozen=True)
class RiskSpec:
    epsilon: float = 0.1
    delta: float = 0.1
    alpha: float = 0.1
    gamma_grid: Sequence[float] = field(default_factory=default_gamma_grid)
    K: int = 4
    d_opt: int = 50
    beta_max: float = 5.0
    d_beta: float = 1e-3
    ucb_kind: UcbKind = UcbKind.HYBRID_SPLIT
    seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("delta must lie in [0, 1]")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        grid = tuple(float(g) for g in self.gamma_grid)
        if not grid or any(not 0.0 <= g < 1.0 for g in grid):
            raise ValueError("gamma_grid must be nonempty with every entry in [0, 1)")
        if self.K < 1 or self.d_opt < 1:
            raise ValueError("K and d_opt must be >= 1")
        if not self.beta_max > 0:
            raise ValueError("beta_max must be > 0")
        if not self.d_beta > 0:
            raise ValueError("d_beta must be > 0")
        object.__setattr__(self, "gamma_grid", grid)
        object.__setattr__(self, "ucb_kind", UcbKind.parse(self.ucb_kind))
