import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bandtrack.bounds import CostSpec, tracking_bound, turnover_bound, wealth_frictional, wealth_frictionless
from bandtrack.paths import NumericalAbort, Path, SeedSpec, TimeGrid, brownian_increments
from bandtrack.tracker import (
    BandConfig,
    refine_check,
    shares_statistics,
    track_monetary,
    track_shares,
    write_ledger_csv,
)


def clip_oracle(theta, delta):
    """Play operator written as a projection: v_k = clip(v_{k-1}, theta_k - delta, theta_k + delta)."""
    v, out = 0.0, []
    for th in theta:
        v = min(max(v, th - delta), th + delta)
        out.append(v)
    return np.array(out)


def brownian_path(seed, n, vol=1.0, T=1.0):
    g = TimeGrid(T, n)
    dW = brownian_increments(SeedSpec(seed, 0), g)[:, 0]
    return g, np.concatenate([[0.0], np.cumsum(vol * dW)])


def sine_target(grid, amp=1.0, omega=2 * math.pi):
    return Path(grid, amp * np.sin(omega * grid.times))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.02, 0.9), st.floats(-2.0, 2.0))
def test_band_matches_projection_oracle(seed, delta, theta0):
    g, th = brownian_path(seed, 300)
    th = th + theta0
    run = track_shares(Path(g, th), BandConfig(delta))
    pos = run.position.values[:, 0]
    np.testing.assert_allclose(pos, clip_oracle(th, delta), rtol=0, atol=1e-12)
    assert np.all(np.abs(th - pos) <= delta * (1 + 1e-12))
    # trades happen only on the boundary
    traded = np.abs(run.trades[:, 0]) > 0
    assert np.allclose(np.abs(th - pos)[traded], delta)
    assert np.all(np.abs(run.xi_realized.values) <= 1)
    assert run.turnover.values[-1, 0] == pytest.approx(np.sum(np.abs(run.trades)))
    assert np.allclose(run.vartheta.values[:, 0], pos)


def test_turnover_is_minimal_among_simple_alternatives():
    g, th = brownian_path(3, 2000)
    run = track_shares(Path(g, th), BandConfig(0.1))
    exact = np.sum(np.abs(np.diff(np.r_[0.0, th])))
    tighter = track_shares(Path(g, th), BandConfig(0.05)).turnover.values[-1, 0]
    assert run.turnover.values[-1, 0] < tighter < exact


def test_time_zero_jump():
    g = TimeGrid(1.0, 4)
    run = track_shares(Path(g, np.full(5, 0.5)), BandConfig(0.2))
    assert run.trades[0, 0] == pytest.approx(0.3)
    assert run.initial_jump == pytest.approx(0.3)
    assert run.turnover.values[-1, 0] == pytest.approx(0.3)
    inside = track_shares(Path(g, np.full(5, 0.1)), BandConfig(0.2))
    assert inside.initial_jump == 0.0 and inside.turnover.values[-1, 0] == 0.0


def test_sine_turnover_matches_hand_value():
    # sin(2 pi t), delta = 0.2: up to 0.8, down to -0.8, back up to -0.2 gives 0.8 + 1.6 + 0.6
    g = TimeGrid(1.0, 10_000)
    run = track_shares(sine_target(g), BandConfig(0.2))
    assert run.turnover.values[-1, 0] == pytest.approx(3.0, rel=0.01)
    assert run.terminal_liquidation == pytest.approx(0.2, abs=1e-3)


def test_ramp_turnover_and_wealth_are_exact():
    g = TimeGrid(1.0, 1000)
    theta = Path(g, g.times)
    run = track_shares(theta, BandConfig(0.2))
    assert run.turnover.values[-1, 0] == pytest.approx(0.8, abs=1e-12)
    S = Path(g, np.full(g.n_steps + 1, 3.0))
    X = wealth_frictional(run, S, 1.0, CostSpec(0.01))
    # no price moves: only costs, 0.8 of turnover and 0.8 liquidated at the end
    assert X.values[-1, 0] == pytest.approx(1.0 - 0.016, abs=1e-12)


def test_monetary_hand_example():
    g = TimeGrid(2.0, 2)
    run = track_monetary(Path(g, np.ones(3)), Path(g, np.array([1.0, 2.0, 4.0])), BandConfig(0.1, "monetary"))
    np.testing.assert_allclose(run.trades[:, 0], [0.9, -0.7, -1.1])
    np.testing.assert_allclose(run.position.values[:, 0], [0.9, 1.1, 1.1])
    assert run.turnover.values[-1, 0] == pytest.approx(2.7)


def test_monetary_with_constant_price_reproduces_shares_ledger():
    g, th = brownian_path(12, 5000)
    theta = Path(g, th)
    mon = track_monetary(theta, Path(g, np.full_like(th, 2.5)), BandConfig(0.1, "monetary"))
    sh = track_shares(theta, BandConfig(0.1))
    assert np.array_equal(mon.trades, sh.trades)
    a, b = io.StringIO(), io.StringIO()
    write_ledger_csv(mon, a)
    write_ledger_csv(sh, b)
    assert a.getvalue() == b.getvalue()


def test_monetary_rejects_nonpositive_prices_and_mode_mismatch():
    g = TimeGrid(1.0, 2)
    with pytest.raises(NumericalAbort):
        track_monetary(Path(g, np.ones(3)), Path(g, np.array([1.0, 0.0, 1.0])), BandConfig(0.1, "monetary"))
    with pytest.raises(ValueError):
        track_shares(Path(g, np.ones(3)), BandConfig(0.1, "monetary"))
    with pytest.raises(ValueError):
        BandConfig(0.0)


def test_stacked_and_multi_asset_runs_match_single_runs():
    g = TimeGrid(1.0, 200)
    paths = np.stack([np.vstack([np.zeros((1, 2)), np.cumsum(brownian_increments(SeedSpec(1, i), g, 2), axis=0)])
                      for i in range(3)])
    stacked = track_shares(Path(g, paths), BandConfig(0.1))
    for i in range(3):
        for c in range(2):
            single = track_shares(Path(g, paths[i, :, c]), BandConfig(0.1))
            np.testing.assert_array_equal(stacked.trades[i, :, c], single.trades[:, 0])
    total = sum(track_shares(Path(g, paths[0, :, c]), BandConfig(0.1)).turnover.values[-1, 0] for c in range(2))
    assert stacked.turnover.values[0, -1, 0] == pytest.approx(total)


def test_refine_check_converges_for_sine():
    # step sizes that miss the extrema of the sine, so each refinement gains turnover
    rows = refine_check(sine_target, BandConfig(0.2), [7e-3, 7e-4, 7e-5])
    assert math.isnan(rows[0]["cauchy_diff"])
    diffs = [abs(r["cauchy_diff"]) for r in rows[1:]]
    assert diffs[1] < diffs[0]
    assert rows[-1]["turnover"] == pytest.approx(3.0, rel=0.01)
    with pytest.raises(ValueError):
        refine_check(sine_target, BandConfig(0.2), [1e-3, 1e-2])


def test_ledger_csv_layout(tmp_path):
    g = TimeGrid(1.0, 3)
    run = track_shares(Path(g, np.array([0.0, 0.3, 0.1, -0.4])), BandConfig(0.2))
    out = tmp_path / "ledger.csv"
    write_ledger_csv(run, out)
    lines = out.read_text().splitlines()
    assert lines[0] == "t,asset,trade,position,target,turnover"
    assert len(lines) == 5
    assert lines[2].split(",")[2] == repr(0.3 - 0.2)


@pytest.mark.parametrize("theta0,eps", [(0.0, 0.0), (0.0, 0.01), (0.7, 0.003)])
def test_compiled_statistics_agree_with_library_route(theta0, eps):
    g = TimeGrid(1.0, 4000)
    dW = brownian_increments(SeedSpec(21, 0), g, 2)
    th = theta0 + np.concatenate([[0.0], np.cumsum(dW[:, 0])])
    S = 1.0 + 0.2 * np.concatenate([[0.0], np.cumsum(0.6 * dW[:, 0] + 0.8 * dW[:, 1])])
    delta = 0.1
    st_ = shares_statistics(th, S, delta, eps)

    theta, price = Path(g, th), Path(g, S)
    run = track_shares(theta, BandConfig(delta))
    tb = turnover_bound(theta, run, delta)
    cost = CostSpec(eps)
    Xf = wealth_frictional(run, price, 0.0, cost)
    X0 = wealth_frictionless(theta, price, 0.0)
    trk = tracking_bound(run, price, cost, Xf, X0)

    assert st_["turnover"] == pytest.approx(run.turnover.values[-1, 0], rel=1e-12)
    assert st_["position_T"] == pytest.approx(run.position.values[-1, 0], abs=1e-12)
    assert st_["gain_target"] == pytest.approx(X0.values[-1, 0], rel=1e-10)
    lib_fric = Xf.values[-1, 0]
    fast_fric = st_["gain_tracker"] - eps * (st_["turnover"] + abs(st_["position_T"]))
    assert fast_fric == pytest.approx(lib_fric, rel=1e-10, abs=1e-12)
    # the compiled slack starts at t = 0 and includes the jump exactly as the library does
    assert st_["lemma_slack"] == pytest.approx(tb.slack_min, rel=1e-9)
    assert st_["identity_residual"] == pytest.approx(tb.identity_residual, rel=1e-9)
    assert st_["tracking_slack"] == pytest.approx(trk.slack_min, rel=1e-9)
    assert st_["qv_theta"] == pytest.approx(np.sum(np.diff(th) ** 2))
