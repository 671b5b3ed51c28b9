"""Synthetic problems whose posteriors, risks and scores are known exactly.

The Gaussian model is ``x ~ N(mu, tau2 I)`` and ``y = x + N(0, diag(sigma0_2))``,
independent across coordinates, so ``p(x | y)`` is Gaussian in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson
from scipy.special import gammaln, log_ndtr, ndtr

from .core import IntervalBundle, check_lambda
from .exceptions import NumericalError
from .quantiles import calibrated_ranks

__all__ = [
    "GaussianModel",
    "SdeConfig",
    "draw_pairs",
    "exact_posterior_sampler",
    "posterior_miss_probability",
    "calibrated_true_risk",
    "analytic_score",
    "GaussianScore",
    "path_rng",
    "reverse_sde_sample",
    "reverse_sde_sample_batch",
    "fig1_toy",
    "fig1_bundle",
    "fig1_true_risk",
]


@dataclass(frozen=True)
class GaussianModel:
    prior_mean: np.ndarray
    prior_var: float
    noise_var: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.prior_mean, dtype=float))
        noise = np.broadcast_to(np.asarray(self.noise_var, dtype=float), mu.shape).copy()
        if mu.ndim != 1 or mu.size < 1:
            raise ValueError("prior_mean must be a nonempty vector")
        if self.prior_var < 0 or np.any(noise < 0):
            raise ValueError("variances must be nonnegative")
        if self.prior_var + noise.min() <= 0:
            raise ValueError("prior_var + noise_var must be positive")
        object.__setattr__(self, "prior_mean", mu)
        object.__setattr__(self, "noise_var", noise)
        object.__setattr__(self, "prior_var", float(self.prior_var))

    @classmethod
    def isotropic(cls, d: int, mu: float = 0.0, tau2: float = 1.0, sigma0_2: float = 0.5) -> "GaussianModel":
        return cls(np.full(d, float(mu)), tau2, np.full(d, float(sigma0_2)))

    @property
    def d(self) -> int:
        return self.prior_mean.size

    @property
    def shrink(self) -> np.ndarray:
        """Weight on ``y`` in the posterior mean: ``tau2 / (tau2 + sigma0_2)``."""
        return self.prior_var / (self.prior_var + self.noise_var)

    @property
    def posterior_var(self) -> np.ndarray:
        return self.prior_var * self.noise_var / (self.prior_var + self.noise_var)

    def posterior_mean(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return self.shrink * y + (1.0 - self.shrink) * self.prior_mean


def draw_pairs(model: GaussianModel, count: int, seed) -> tuple[np.ndarray, np.ndarray]:
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    x = model.prior_mean + math.sqrt(model.prior_var) * rng.standard_normal((count, model.d))
    y = x + np.sqrt(model.noise_var) * rng.standard_normal((count, model.d))
    return x, y


def exact_posterior_sampler(model: GaussianModel, y, m: int, seed) -> np.ndarray:
    """``m`` i.i.d. posterior draws per observation; ``(m, d)`` or ``(n, m, d)``."""
    y = np.asarray(y, dtype=float)
    rng = np.random.default_rng(seed)
    mean = model.posterior_mean(y)
    z = rng.standard_normal(y.shape[:-1] + (m, model.d))
    return mean[..., None, :] + np.sqrt(model.posterior_var) * z


def posterior_miss_probability(model: GaussianModel, y, bundle: IntervalBundle, lam) -> np.ndarray | float:
    """Conditional 0/1 risk ``E[loss01(x, I_lam(y)) | y]`` under the true posterior."""
    lam = check_lambda(lam, model.d)
    mean = model.posterior_mean(y)
    sd = np.sqrt(model.posterior_var)
    a = (bundle.lower - lam - mean) / sd
    b = (bundle.upper + lam - mean) / sd
    covered = np.where(b > a, ndtr(b) - ndtr(a), 0.0)
    out = (1.0 - covered).mean(axis=-1)
    return float(out) if out.ndim == 0 else out


_Z = np.linspace(-12.0, 12.0, 8001)


def _order_stat_density(m: int, r: int) -> np.ndarray:
    """Density of the ``r``-th of ``m`` standard normal order statistics on ``_Z``."""
    logc = gammaln(m + 1.0) - gammaln(r) - gammaln(m - r + 1.0)
    logpdf = logc + (r - 1) * log_ndtr(_Z) + (m - r) * log_ndtr(-_Z) - 0.5 * _Z**2 - 0.5 * math.log(2 * math.pi)
    return np.exp(logpdf)


def calibrated_true_risk(truth: GaussianModel, m: int, alpha: float, lam, sampler: GaussianModel | None = None) -> float:
    """Exact 0/1 risk of calibrated-quantile intervals widened by ``lam >= 0``.

    The expectation is over a fresh pair from ``truth`` and a fresh batch of
    ``m`` draws from the posterior of ``sampler`` (default: ``truth``). Writing
    each draw as ``m_s(y) + s * Z``, the endpoints are ``m_s(y) + s * Z_(r)``
    and ``x - m_s(y)`` is Gaussian and independent of the ``Z``; the risk then
    reduces to one-dimensional integrals against order-statistic densities.
    """
    sampler = truth if sampler is None else sampler
    lam = check_lambda(lam, truth.d)
    if np.any(lam < 0):
        raise ValueError("the closed form assumes lam >= 0 (non-inverted intervals)")
    r_lo, r_hi = calibrated_ranks(m, alpha)
    k = sampler.shrink
    bias = (1.0 - k) * (truth.prior_mean - sampler.prior_mean)
    spread = np.sqrt((1.0 - k) ** 2 * truth.prior_var + k**2 * truth.noise_var)
    s = np.sqrt(sampler.posterior_var)
    f_lo = _order_stat_density(m, r_lo)
    f_hi = _order_stat_density(m, r_hi)
    z = _Z[None, :]
    below = ndtr((s[:, None] * z - lam[:, None] - bias[:, None]) / spread[:, None])
    above = ndtr((bias[:, None] - s[:, None] * z - lam[:, None]) / spread[:, None])
    per_coord = simpson(below * f_lo, x=_Z, axis=1) + simpson(above * f_hi, x=_Z, axis=1)
    return float(np.mean(per_coord))


@dataclass(frozen=True)
class SdeConfig:
    sigma_min: float
    sigma_max: float
    sigma0: float
    steps: int

    def __post_init__(self):
        if not 0 < self.sigma_min < self.sigma_max:
            raise ValueError("need 0 < sigma_min < sigma_max")
        if not self.sigma_min < self.sigma0 <= self.sigma_max:
            raise ValueError("sigma0 must lie in (sigma_min, sigma_max]")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError("steps must be a positive integer")

    def sigma(self, t):
        t = np.asarray(t, dtype=float)
        s = self.sigma_min * (self.sigma_max / self.sigma_min) ** t
        # the power can miss sigma_max by an ulp; pin both ends
        return np.where(t == 1.0, self.sigma_max, np.where(t == 0.0, self.sigma_min, s))

    @property
    def t0(self) -> float:
        lo, hi = math.log(self.sigma_min), math.log(self.sigma_max)
        return (math.log(self.sigma0) - lo) / (hi - lo)


def analytic_score(model: GaussianModel, cfg: SdeConfig, x, t):
    """Score of the prior perturbed to noise level ``sigma(t)``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    return -(np.asarray(x, dtype=float) - model.prior_mean) / (model.prior_var + cfg.sigma(t) ** 2)


class GaussianScore:
    """``analytic_score`` bound to a model and schedule, callable as ``score(x, t)``."""

    def __init__(self, model: GaussianModel, cfg: SdeConfig):
        self.model = model
        self.cfg = cfg

    def __call__(self, x, t):
        return analytic_score(self.model, self.cfg, x, t)


def path_rng(seed: int, path: int) -> np.random.Generator:
    """Counter-based stream for one sample path, independent of scheduling."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(path,))))


_GUARD = 1e-8


def _reverse(y: np.ndarray, score, cfg: SdeConfig, noise: np.ndarray, likelihood_term: bool = True) -> np.ndarray:
    n = noise.shape[0]
    dt = 1.0 / cfg.steps
    g2_scale = 2.0 * math.log(cfg.sigma_max / cfg.sigma_min)
    s0_2 = cfg.sigma0**2
    x = np.array(y, dtype=float, copy=True)
    for step, i in enumerate(range(n, 0, -1)):
        t = i * dt
        sig = float(cfg.sigma(t))
        g2 = sig * sig * g2_scale
        drift = score(x, t)
        if likelihood_term:
            drift = drift + (y - x) / max(s0_2 - sig * sig, _GUARD * s0_2)
        x = x + g2 * drift * dt + math.sqrt(g2 * dt) * noise[step]
        if step % 64 == 0 and not np.all(np.isfinite(x)):
            raise NumericalError(f"reverse SDE state became non-finite at step i={i}")
    if not np.all(np.isfinite(x)):
        raise NumericalError("reverse SDE state became non-finite")
    return x


def _n_steps(cfg: SdeConfig) -> int:
    return math.floor(cfg.t0 * cfg.steps + 1e-12)


def reverse_sde_sample(y, score, cfg: SdeConfig, seed: int, path: int = 0, likelihood_term: bool = True) -> np.ndarray:
    """One Euler-Maruyama path of the conditional reverse-time VE SDE.

    Starts at ``x_n = y`` with ``n = floor(t0 / dt)`` and steps ``i = n..1``
    with the likelihood correction ``(y - x) / (sigma0^2 - sigma_i^2)``; the
    denominator is floored at ``1e-8 * sigma0^2``.

    Notes
    -----
    Starting the reverse chain at ``y`` already conditions on ``y``, so with
    an exact prior score the correction counts the observation twice. For the
    Gaussian model the default chain converges (as ``steps`` grows) to a law
    pulled toward ``y`` with a variance well below the posterior's.
    ``likelihood_term=False`` drops the correction and then targets
    ``p(x | y)`` itself, up to discretization error.
    """
    y = np.asarray(y, dtype=float)
    n = _n_steps(cfg)
    noise = path_rng(seed, path).standard_normal((n,) + y.shape)
    return _reverse(y, score, cfg, noise, likelihood_term)


def reverse_sde_sample_batch(
    y, score, cfg: SdeConfig, seed: int, n_paths: int, chunk: int = 512, likelihood_term: bool = True
) -> np.ndarray:
    """``n_paths`` paths, path ``p`` identical to ``reverse_sde_sample(..., path=p)``."""
    y = np.asarray(y, dtype=float)
    d = y.shape[-1]
    ys = np.broadcast_to(y, (n_paths, d))
    n = _n_steps(cfg)
    out = np.empty((n_paths, d))
    for start in range(0, n_paths, chunk):
        stop = min(start + chunk, n_paths)
        noise = np.stack([path_rng(seed, p).standard_normal((n, d)) for p in range(start, stop)], axis=1)
        out[start:stop] = _reverse(ys[start:stop], score, cfg, noise, likelihood_term)
    return out


FIG1_HALF_WIDTH = 1.0


def fig1_toy(mu, n: int, seed) -> np.ndarray:
    """``n`` draws of ``x ~ N(mu, I_2)``; the observation plays no role here."""
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (2,):
        raise ValueError("the toy problem is two-dimensional")
    return mu + np.random.default_rng(seed).standard_normal((n, 2))


def fig1_bundle() -> IntervalBundle:
    return IntervalBundle(np.full(2, -FIG1_HALF_WIDTH), np.full(2, FIG1_HALF_WIDTH))


def fig1_true_risk(mu, lam) -> float:
    mu = np.asarray(mu, dtype=float)
    lam = check_lambda(lam, mu.size)
    lo, hi = -FIG1_HALF_WIDTH - lam, FIG1_HALF_WIDTH + lam
    covered = np.where(hi > lo, ndtr(hi - mu) - ndtr(lo - mu), 0.0)
    return float(np.mean(1.0 - covered))
