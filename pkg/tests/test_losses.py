import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from krcps import GammaParams, IntervalBundle, loss01, loss_gamma, pinball_loss
from krcps.losses import coverage_need


def b1(lo, hi):
    return IntervalBundle([lo], [hi])


def test_loss01_inside_is_zero():
    b = IntervalBundle(np.zeros(3), np.ones(3))
    assert loss01([0.2, 0.5, 0.9], b, np.zeros(3)) == 0.0


def test_loss01_one_of_four():
    b = IntervalBundle(np.zeros(4), np.ones(4))
    assert loss01([0.5, 0.5, 0.5, 1.5], b, np.zeros(4)) == 0.25


def test_loss01_closed_endpoint():
    b = b1(0.0, 1.0)
    assert loss01([1.25], b, [0.25]) == 0.0
    assert loss01([-0.25], b, [0.25]) == 0.0
    assert loss01([np.nextafter(1.25, 2)], b, [0.25]) == 1.0


def test_loss01_batch_rows():
    b = IntervalBundle(np.zeros(2), np.ones(2))
    out = loss01(np.array([[0.5, 0.5], [2.0, 0.5], [2.0, -1.0]]), b, np.zeros(2))
    assert out.tolist() == [0.0, 0.5, 1.0]


def test_gamma_center_is_zero():
    b = IntervalBundle([0.0, 2.0], [1.0, 4.0])
    for g in (0.0, 0.3, 0.7):
        assert loss_gamma([0.5, 3.0], b, np.zeros(2), GammaParams(g)) == 0.0


@pytest.mark.parametrize("g", [0.0, 0.1, 0.5, 0.9, 0.99])
def test_gamma_equals_one_at_endpoint(g):
    assert loss_gamma([1.5], b1(0.5, 1.5), [0.0], GammaParams(g)) == pytest.approx(1.0, abs=1e-12)


def test_gamma_direct_value():
    assert loss_gamma([1.6], b1(0.5, 1.5), [0.0], GammaParams(0.5)) == pytest.approx(1.4, abs=1e-12)


def test_gamma_rejects_negative_lambda():
    with pytest.raises(ValueError):
        loss_gamma([0.0], b1(0, 1), [-0.1], GammaParams(0.5))
    with pytest.raises(ValueError):
        GammaParams(1.0)


def test_gamma_zero_width_uses_floor():
    v = loss_gamma([1e-12], b1(0.0, 0.0), [0.0], GammaParams(0.0))
    assert v == pytest.approx(2 * 1e-12 / 1e-9)


@settings(max_examples=500, deadline=None)
@given(st.floats(-5, 5), st.floats(-3, 3), st.floats(0, 3), st.floats(0, 3))
def test_gamma_zero_is_centered_l1(x, lo, w, lam):
    b = b1(lo, lo + w)
    got = loss_gamma([x], b, [lam], GammaParams(0.0))
    # reuse the stored endpoints so float rounding of lo + w cannot differ
    width = max(b.upper[0] - b.lower[0] + 2 * lam, 1e-9)
    center = (b.upper[0] + b.lower[0]) / 2
    assert got == pytest.approx(2 * abs(x - center) / width, rel=1e-12, abs=1e-300)


def _random_configs(rng, n, d):
    lower = rng.normal(size=(n, d)) * rng.choice([0.01, 1, 10], size=(n, 1))
    width = rng.exponential(size=(n, d)) * rng.choice([0.0, 1e-10, 1.0, 5.0], size=(n, 1))
    x = lower + width / 2 + rng.normal(size=(n, d)) * rng.choice([0.1, 1, 10], size=(n, 1))
    lam = rng.exponential(size=(n, d)) * rng.choice([0.0, 0.1, 2.0], size=(n, 1))
    return x, IntervalBundle(lower, lower + width), lam


def test_dominance_random_batch():
    rng = np.random.default_rng(1)
    n, d = 20_000, 5
    x, b, lam = _random_configs(rng, n, d)
    for g in (0.0, 0.3, 0.7, 0.95):
        lg = np.array([loss_gamma(x[i], IntervalBundle(b.lower[i], b.upper[i]), lam[i], GammaParams(g)) for i in range(0, n, 50)])
        l0 = np.array([loss01(x[i], IntervalBundle(b.lower[i], b.upper[i]), lam[i]) for i in range(0, n, 50)])
        assert np.all(lg >= l0 - 1e-12)


def test_entrywise_monotone():
    rng = np.random.default_rng(2)
    for _ in range(2000):
        d = 4
        lower = rng.normal(size=d)
        b = IntervalBundle(lower, lower + rng.exponential(size=d))
        x = rng.normal(size=d) * 2
        lam = rng.exponential(size=d)
        j = rng.integers(d)
        lam2 = lam.copy()
        lam2[j] += rng.exponential()
        p = GammaParams(rng.uniform(0, 0.95))
        assert loss01(x, b, lam2) <= loss01(x, b, lam)
        assert loss_gamma(x, b, lam2, p) <= loss_gamma(x, b, lam, p) + 1e-15


def test_coverage_need_matches_loss01():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(50, 6)) * 2
    b = IntervalBundle(-np.ones(6), np.ones(6))
    need = coverage_need(x, b.rows(50))
    for lam in (0.0, 0.3, 1.0):
        assert np.mean(need > lam) == pytest.approx(np.mean(loss01(x, b, np.full(6, lam))))


def test_pinball_examples():
    assert pinball_loss(1.0, 1.0, 0.3) == 0.0
    assert pinball_loss(2.0, 1.0, 0.9) == pytest.approx(0.9)
    assert pinball_loss(0.0, 1.0, 0.1) == pytest.approx(0.9)
    with pytest.raises(ValueError):
        pinball_loss(0.0, 1.0, 1.5)


def test_pinball_minimizer_is_quantile():
    rng = np.random.default_rng(4)
    x = rng.normal(size=4001)
    grid = np.linspace(-3, 3, 601)
    risk = [np.mean(pinball_loss(x, q, 0.8)) for q in grid]
    assert abs(grid[int(np.argmin(risk))] - np.quantile(x, 0.8)) < 0.02
