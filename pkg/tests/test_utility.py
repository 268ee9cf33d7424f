import math

import numpy as np
import pytest

from bandtrack.paths import SeedSpec, TimeGrid, brownian_increments
from bandtrack.utility import UtilitySpec, evaluate_utility, foc_residual, utility_loss


def test_exponential_utility_derivatives():
    u = UtilitySpec(2.0)
    x = np.linspace(-2, 2, 9)
    h = 1e-6
    np.testing.assert_allclose(u.dU(x), (u.U(x + h) - u.U(x - h)) / (2 * h), rtol=1e-6)
    np.testing.assert_allclose(u.d2U(x), (u.dU(x + h) - u.dU(x - h)) / (2 * h), rtol=1e-6)
    np.testing.assert_allclose(u.risk_aversion(x), 2.0)
    assert u.lower_risk_aversion == u.upper_risk_aversion == 2.0
    lo, hi = u.marginal_envelope(x)
    np.testing.assert_allclose(lo, u.dU(x))
    np.testing.assert_allclose(hi, u.dU(x))
    assert evaluate_utility(u, 0.0) == -1.0


@pytest.mark.parametrize("kw", [dict(r=0.0), dict(r=-1.0), dict(r=1.0, kind="power")])
def test_utility_spec_rejects_bad_input(kw):
    with pytest.raises(ValueError):
        UtilitySpec(**kw)


def test_foc_residual_is_zero_without_risk_premium():
    res = foc_residual(np.zeros(1000), np.ones(1000), UtilitySpec(1.0))
    assert res.rms == 0.0 and res.max_abs == 0.0


def test_foc_residual_of_merton_strategy_uses_exact_terminal_law():
    # with lambda = mu / sigma and theta = mu / (r sigma^2): U'(X_T) is proportional to
    # exp(-lambda W_T), exactly the shape of the density, so only sampling noise remains
    mu, sigma, r = 0.05, 0.2, 1.0
    lam, theta = mu / sigma, mu / (r * sigma**2)
    W = brownian_increments(SeedSpec(3, 0), TimeGrid(1.0, 50_000))[:, 0] * math.sqrt(50_000)
    X = theta * (mu + sigma * W)
    dens = np.exp(-lam * W - 0.5 * lam**2)
    good = foc_residual(X, dens, UtilitySpec(r))
    bad = foc_residual(2 * X, dens, UtilitySpec(r))
    assert good.rms < 0.01
    assert bad.rms > 5 * good.rms
    with pytest.raises(ValueError):
        foc_residual(X[:10], dens[:11], UtilitySpec(r))


def test_foc_residual_survives_large_wealth():
    x = np.array([-800.0, -790.0])
    res = foc_residual(x, np.array([1.0, 1.0]), UtilitySpec(1.0))
    assert math.isfinite(res.rms)


def test_utility_loss_paired_estimate():
    u = UtilitySpec(1.5)
    free = brownian_increments(SeedSpec(1, 0), TimeGrid(1.0, 10_000))[:, 0] * 100
    assert utility_loss(free, free, u).value == 0.0
    c = 0.01
    loss = utility_loss(free - c, free, u)
    exact = np.mean(np.exp(-u.r * free)) * (math.exp(u.r * c) - 1)
    assert loss.value == pytest.approx(exact, rel=1e-9)
    assert loss.ci[0] <= loss.value <= loss.ci[1]
    with pytest.raises(ValueError):
        utility_loss(free[:5], free, u)
