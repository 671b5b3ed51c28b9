"""The grouped convex surrogate program.

    minimize    sum_k n_k * lam_k
    subject to  mean over (pairs, subsampled features) of loss_gamma(M lam) <= epsilon
                0 <= lam_k <= lam_box

The constraint is a sum of per-group terms ``G_k(lam_k)``, each convex and
nonincreasing, so the KKT conditions decouple: for a multiplier ``mu`` every
group independently solves ``min n_k lam + mu G_k(lam)``, and ``mu`` is tuned
until the constraint binds. Both searches are monotone one-dimensional
problems.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .core import IntervalBundle, Membership, RiskSpec
from .exceptions import DimensionError, InfeasibleError, NumericalError
from .losses import WIDTH_FLOOR

__all__ = [
    "PkInstance",
    "PkSolution",
    "GammaSearchResult",
    "allocate_subsample",
    "build_pk_instance",
    "solve_pk",
    "gamma_search",
]

TOL_FEAS = 1e-6
MAX_ITER = 50_000
_INNER_ITERS = 48


@dataclass(frozen=True)
class PkInstance:
    """A subsampled instance of the program.

    ``dist`` and ``width`` hold ``|x - c|`` and ``upper - lower`` for the
    ``n_opt`` optimization pairs restricted to the subsampled ``features``;
    ``groups[j]`` is the group of column ``j``; ``weights`` are the full-size
    group counts ``n_k``.
    """

    features: np.ndarray
    dist: np.ndarray
    width: np.ndarray
    groups: np.ndarray
    weights: np.ndarray
    epsilon: float
    gamma: float
    width_floor: float = WIDTH_FLOOR

    def __post_init__(self):
        if self.dist.shape != self.width.shape or self.dist.ndim != 2:
            raise DimensionError("dist and width must share shape (n_opt, d_opt)")
        if self.groups.shape != (self.dist.shape[1],):
            raise DimensionError("groups must label every subsampled column")
        K = self.weights.size
        if np.any(np.bincount(self.groups, minlength=K)[:K] == 0):
            raise ValueError("every group must keep at least one subsampled feature")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not (np.all(np.isfinite(self.dist)) and np.all(np.isfinite(self.width))):
            raise NumericalError("non-finite values in the instance")

    @property
    def K(self) -> int:
        return self.weights.size

    @property
    def q(self) -> float:
        return self.gamma / (1.0 - self.gamma)

    @property
    def lam_box(self) -> float:
        return 2.0 * float(self.width.max())

    def with_gamma(self, gamma: float) -> "PkInstance":
        return dataclasses.replace(self, gamma=float(gamma))

    def risk(self, lam_groups) -> float:
        """Surrogate empirical risk at group values ``lam_groups``."""
        lam = np.asarray(lam_groups, dtype=float)[self.groups]
        q = self.q
        w = np.maximum(self.width + 2.0 * lam, self.width_floor)
        return float(np.maximum(2.0 * (1.0 + q) * self.dist / w - q, 0.0).mean())

    def objective(self, lam_groups) -> float:
        return float(np.dot(self.weights, lam_groups))


def allocate_subsample(group_sizes, d_opt: int) -> np.ndarray:
    """Largest-remainder apportionment of ``d_opt`` over groups, at least one each."""
    sizes = np.asarray(group_sizes, dtype=np.int64)
    K, d = sizes.size, int(sizes.sum())
    if d_opt < K:
        raise ValueError(f"d_opt={d_opt} cannot give each of K={K} groups a feature")
    if d_opt >= d:
        return sizes.copy()
    quota = d_opt * sizes / d
    alloc = np.clip(np.floor(quota).astype(np.int64), 1, sizes)
    rem = quota - np.floor(quota)
    while alloc.sum() < d_opt:
        k = int(np.argmax(np.where(alloc < sizes, rem, -np.inf)))
        alloc[k] += 1
        rem[k] -= 1.0
    while alloc.sum() > d_opt:
        # the at-least-one rule overshot; give back from the weakest claims
        k = int(np.argmin(np.where(alloc > 1, rem, np.inf)))
        alloc[k] -= 1
        rem[k] += 1.0
    return alloc


def build_pk_instance(
    x_opt,
    bundle: IntervalBundle,
    membership: Membership,
    spec: RiskSpec,
    gamma: float,
    seed=None,
) -> PkInstance:
    """Subsample ``spec.d_opt`` features stratified by group and precompute the data."""
    x_opt = np.asarray(x_opt, dtype=float)
    if x_opt.ndim != 2 or x_opt.shape[1] != membership.d or bundle.d != membership.d:
        raise DimensionError("x_opt, bundle and membership disagree on d")
    n_opt, d = x_opt.shape
    if n_opt < 1:
        raise ValueError("S_opt is empty")
    sizes = membership.group_sizes
    alloc = allocate_subsample(sizes, min(spec.d_opt, d))
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    picked = []
    for k in range(membership.K):
        members = np.flatnonzero(membership.labels == k)
        if members.size == 0:
            raise InfeasibleError(f"group {k} has no features to subsample")
        if alloc[k] == members.size:
            picked.append(members)
        else:
            picked.append(np.sort(rng.choice(members, size=alloc[k], replace=False)))
    features = np.concatenate(picked)
    b = bundle.rows(n_opt)
    dist = np.abs(x_opt[:, features] - b.center[:, features])
    width = b.base_width[:, features]
    return PkInstance(
        features=features,
        dist=dist,
        width=width,
        groups=membership.labels[features],
        weights=sizes.astype(float),
        epsilon=float(spec.epsilon),
        gamma=float(gamma),
    )


@dataclass(frozen=True)
class PkSolution:
    lam: np.ndarray
    objective: float
    risk: float
    gamma: float
    iterations: int


class _Surrogate:
    """Per-group value and slope of the constraint, vectorized over groups."""

    def __init__(self, inst: PkInstance):
        self.inst = inst
        self.K = inst.K
        self.n_entries = inst.dist.size
        self.q = inst.q
        self.coef = 2.0 * (1.0 + self.q) * inst.dist
        self.width = inst.width
        self.groups = inst.groups
        self.floor = inst.width_floor

    def _per_group(self, cols: np.ndarray) -> np.ndarray:
        return np.bincount(self.groups, weights=cols.sum(axis=0), minlength=self.K) / self.n_entries

    def value(self, lam_groups: np.ndarray) -> float:
        w = np.maximum(self.width + 2.0 * lam_groups[self.groups], self.floor)
        return float(np.maximum(self.coef / w - self.q, 0.0).sum() / self.n_entries)

    def slope(self, lam_groups: np.ndarray) -> np.ndarray:
        """Right derivative of the constraint along each group's coordinate."""
        raw = self.width + 2.0 * lam_groups[self.groups]
        w = np.maximum(raw, self.floor)
        active = (self.coef / w - self.q > 0.0) & (raw >= self.floor)
        d = np.where(active, -2.0 * self.coef / (w * w), 0.0)
        return self._per_group(d)


def _inner(sur: _Surrogate, mu: float, weights: np.ndarray, box: float) -> np.ndarray:
    """Per group, the smallest ``lam`` in ``[0, box]`` with slope ``>= -n_k / mu``."""
    target = -weights / mu
    lo = np.zeros(sur.K)
    hi = np.full(sur.K, box)
    done = sur.slope(lo) >= target
    hi[done] = 0.0
    for _ in range(_INNER_ITERS):
        mid = 0.5 * (lo + hi)
        ok = sur.slope(mid) >= target
        hi = np.where(ok, mid, hi)
        lo = np.where(ok, lo, mid)
        if np.all(hi - lo <= 1e-13 * box):
            break
    return hi


def _polish(sur: _Surrogate, lam: np.ndarray, weights: np.ndarray, eps: float) -> np.ndarray:
    """Slide along ``-weights`` (clamped at 0) until the constraint binds."""
    if sur.value(lam) >= eps - 1e-12 or not np.any(lam > 0):
        return lam
    direction = weights / np.linalg.norm(weights)
    lo, hi = 0.0, float(np.max(lam / np.maximum(direction, 1e-300)))
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if sur.value(np.maximum(lam - mid * direction, 0.0)) <= eps:
            lo = mid
        else:
            hi = mid
    return np.maximum(lam - lo * direction, 0.0)


def solve_pk(inst: PkInstance) -> PkSolution:
    """Minimize the weighted sum of group offsets under the surrogate-risk constraint.

    The returned point is feasible, ``risk <= epsilon + 1e-6``, and each group
    value is optimal to within the inner bisection tolerance.

    Raises
    ------
    InfeasibleError
        If even ``lam_k = lam_box`` for every group violates the constraint.
    """
    sur = _Surrogate(inst)
    eps = inst.epsilon
    weights = inst.weights
    K = inst.K
    box = inst.lam_box

    zero = np.zeros(K)
    if sur.value(zero) <= eps:
        return PkSolution(zero, 0.0, sur.value(zero), inst.gamma, 0)
    full = np.full(K, box)
    if sur.value(full) > eps + TOL_FEAS:
        raise InfeasibleError(
            f"surrogate risk {sur.value(full):.6g} exceeds epsilon={eps} even at lam_box={box:.6g}"
        )

    def h(log_mu: float) -> tuple[float, np.ndarray]:
        lam = _inner(sur, math.exp(log_mu), weights, box)
        return sur.value(lam) - eps, lam

    iters = 0
    # bracket the multiplier: h(a) > 0 >= h(b)
    b = math.log(float(weights.sum()))
    fb, lam_b = h(b)
    a, fa = b, fb
    while fb > 0:
        a, fa = b, fb
        b += math.log(10.0)
        fb, lam_b = h(b)
        iters += 1
        if b > 700:
            # the multiplier ran off: only the box itself is feasible
            lam_b, fb = full, sur.value(full) - eps
            break
    if a == b:
        while fa <= 0:
            b, fb, lam_b = a, fa, h(a)[1]
            a -= math.log(10.0)
            fa, _ = h(a)
            iters += 1
            if a < -700:
                raise NumericalError("multiplier bracket collapsed toward zero")

    # Illinois-modified regula falsi in log(mu), keeping the bracket
    side = 0
    while fb < -1e-10 and b - a > 1e-12:
        iters += 1
        if iters > MAX_ITER:
            raise NumericalError("multiplier search did not converge")
        c = (a * fb - b * fa) / (fb - fa)
        if not a < c < b:
            c = 0.5 * (a + b)
        fc, lam_c = h(c)
        if fc > 0:
            a, fa = c, fc
            if side == -1:
                fb *= 0.5
            side = -1
        else:
            b, fb, lam_b = c, fc, lam_c
            if side == 1:
                fa *= 0.5
            side = 1

    lam = _polish(sur, lam_b, weights, eps)
    risk = sur.value(lam)
    if risk > eps + TOL_FEAS or not np.all(np.isfinite(lam)):
        raise NumericalError(f"solver ended infeasible: risk {risk:.6g} > epsilon {eps}")
    return PkSolution(lam, inst.objective(lam), risk, inst.gamma, iters)


@dataclass(frozen=True)
class GammaSearchResult:
    gamma: float
    solution: PkSolution
    per_gamma: tuple[tuple[float, float | None], ...]

    @property
    def lam(self) -> np.ndarray:
        return self.solution.lam


def gamma_search(x_opt, bundle: IntervalBundle, membership: Membership, spec: RiskSpec, seed=None) -> GammaSearchResult:
    """Solve once per ``gamma`` in ``spec.gamma_grid``; keep the smallest objective.

    Ties go to the smaller ``gamma``. Infeasible ``gamma`` values are skipped.
    """
    base = build_pk_instance(x_opt, bundle, membership, spec, spec.gamma_grid[0], seed)
    best: PkSolution | None = None
    record = []
    for g in sorted(spec.gamma_grid):
        try:
            sol = solve_pk(base.with_gamma(g))
        except InfeasibleError:
            record.append((g, None))
            continue
        record.append((g, sol.objective))
        if best is None or sol.objective < best.objective:
            best = sol
    if best is None:
        raise InfeasibleError("the surrogate program is infeasible for every gamma in the grid")
    return GammaSearchResult(best.gamma, best, tuple(record))
