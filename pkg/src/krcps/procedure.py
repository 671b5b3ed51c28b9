"""K-RCPS end to end, plus the conformalized map and its export."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import arrays
from .core import CalibrationSet, IntervalBundle, Membership, RiskSpec, nested_intervals
from .exceptions import DimensionError
from .losses import loss01
from .rcps import SweepResult, rcps_scalar
from .solver import GammaSearchResult, gamma_search

__all__ = [
    "KrcpsResult",
    "build_membership",
    "krcps",
    "rcps",
    "conformalize",
    "ConformalMap",
    "SCHEMA_VERSION",
]

SCHEMA_VERSION = 1


def build_membership(x_opt, bundle: IntervalBundle, K: int) -> Membership:
    """Group features by rank of their entrywise 0/1 risk at ``lam = 0``.

    Feature with 0-based risk rank ``r`` (stable, ties by index) goes to group
    ``floor(r * K / d)``, so groups are the empirical ``K``-quantile bins of
    the per-feature risk and ties are split by rank rather than merged.
    """
    x_opt = np.asarray(x_opt, dtype=float)
    if x_opt.ndim != 2 or x_opt.shape[0] < 1:
        raise ValueError("S_opt must be a nonempty (n_opt, d) array")
    d = x_opt.shape[1]
    if bundle.d != d:
        raise DimensionError(f"bundle has d={bundle.d}, x has d={d}")
    if not 1 <= K <= d:
        raise ValueError(f"K must lie in [1, d={d}], got {K}")
    b = bundle.rows(x_opt.shape[0])
    risk = ((x_opt < b.lower) | (x_opt > b.upper)).mean(axis=0)
    rank = np.empty(d, dtype=np.int64)
    rank[np.argsort(risk, kind="stable")] = np.arange(d)
    return Membership(rank * K // d, K)


@dataclass(frozen=True)
class KrcpsResult:
    lam: np.ndarray
    membership: Membership
    search: GammaSearchResult
    sweep: SweepResult

    @property
    def beta(self) -> float:
        return self.sweep.value

    @property
    def gamma(self) -> float:
        return self.search.gamma

    @property
    def lam_groups(self) -> np.ndarray:
        return self.search.lam


def _split_views(calib: CalibrationSet, bundle: IntervalBundle):
    if bundle.d != calib.d:
        raise DimensionError(f"bundle has d={bundle.d}, calibration set has d={calib.d}")
    if bundle.lower.ndim == 2 and bundle.lower.shape[0] != calib.n:
        raise DimensionError("a per-pair bundle needs one row per calibration pair")
    opt, rc = calib.opt_index, calib.rcps_index
    return (calib.x[opt], bundle.take(opt)), (calib.x[rc], bundle.take(rc))


def krcps(calib: CalibrationSet, bundle: IntervalBundle, spec: RiskSpec) -> KrcpsResult:
    """Run K-RCPS on a split calibration set.

    ``bundle`` is aligned with ``calib`` rows (after the split shuffle). The
    membership, the surrogate program and the choice of ``gamma`` only see
    S_opt; the sweep along ``M lam_K + beta * 1``, clamped at zero, only sees
    S_RCPS and its UCB uses ``n_rcps`` samples.
    """
    if calib.n_opt < 1:
        raise ValueError("K-RCPS needs a nonempty S_opt")
    (x_opt, b_opt), (x_rc, b_rc) = _split_views(calib, bundle)
    membership = build_membership(x_opt, b_opt, spec.K)
    search = gamma_search(x_opt, b_opt, membership, spec)
    offset = membership.expand(search.lam)
    sweep = rcps_scalar(x_rc, b_rc, spec, offset=offset, floor=0.0)
    return KrcpsResult(sweep.lam, membership, search, sweep)


def rcps(x, bundle: IntervalBundle, spec: RiskSpec) -> SweepResult:
    """Plain scalar RCPS over all rows of ``x``: ``lam = t * 1`` clamped at 0."""
    return rcps_scalar(x, bundle, spec, floor=0.0)


@dataclass(frozen=True)
class ConformalMap:
    lower: np.ndarray
    upper: np.ndarray
    lam: np.ndarray
    metadata: dict

    def mean_interval_length(self) -> float:
        return float(np.mean(self.upper - self.lower))

    def risk(self, x) -> float:
        """Mean 0/1 loss of ``x`` against these intervals."""
        b = IntervalBundle(self.lower, self.upper)
        return float(np.mean(loss01(x, b, np.zeros(b.d))))

    def export(self, stem, binary: bool = False) -> tuple[Path, Path]:
        """Write the lambda map (``stem.csv`` or ``stem.bin``) and ``stem.json``."""
        stem = Path(stem)
        array_path = stem.with_suffix(".bin" if binary else ".csv")
        (arrays.write_binary if binary else arrays.write_csv)(array_path, self.lam)
        meta_path = stem.with_suffix(".json")
        meta_path.write_text(json.dumps(self.metadata, indent=2, sort_keys=True) + "\n")
        return array_path, meta_path

    @staticmethod
    def load(stem, bundle: IntervalBundle) -> "ConformalMap":
        stem = Path(stem)
        meta = json.loads(stem.with_suffix(".json").read_text())
        path = stem.with_suffix(".bin")
        if not path.exists():
            path = stem.with_suffix(".csv")
        lam = arrays.read_array(path)[0]
        return conformalize(bundle, lam, meta)


def conformalize(bundle: IntervalBundle, lam, metadata: dict | None = None) -> ConformalMap:
    """The final intervals ``[lower - lam, upper + lam]`` with their provenance."""
    lo, hi = nested_intervals(bundle, lam)
    meta = {"schema_version": SCHEMA_VERSION}
    meta.update(metadata or {})
    return ConformalMap(lo, hi, np.asarray(lam, dtype=float).reshape(bundle.d), meta)


def krcps_metadata(spec: RiskSpec, result: KrcpsResult | None = None) -> dict:
    meta = {
        "epsilon": spec.epsilon,
        "delta": spec.delta,
        "alpha": spec.alpha,
        "K": spec.K,
        "seed": spec.seed,
        "ucb_kind": spec.ucb_kind.value,
        "gamma_star": None,
        "lambda_groups": [],
    }
    if result is not None:
        meta["gamma_star"] = result.gamma
        meta["lambda_groups"] = [float(v) for v in result.lam_groups]
    return meta
