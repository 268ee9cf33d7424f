"""Wealth with and without proportional costs, and the pathwise bounds.

The turnover bound uses ``phi(z) = z^2 / 2``, so ``phi' = z`` and ``phi'' = 1``
and every integrand below is the realized band position
``Z = (theta - position) / delta`` taken at the left endpoint.  With this
choice the discrete analogue of the Ito identity behind the bound reads

    turnover_t = delta (phi(Z_0) - phi(Z_t)) + sum Z_k dtheta_k
                 + sum dtheta_k^2 / (2 delta) - sum trade_k^2 / (2 delta),

so the residual of the continuous-time identity is ``-sum trade^2 / (2 delta)``
and vanishes as the grid is refined.  The time-zero jump (non-zero only when
the target starts outside the band) is excluded from the left-hand side of the
turnover bound and added to the right-hand side of the tracking bound.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .paths import Path, stochastic_integral
from .tracker import TrackerRun

__all__ = [
    "CostSpec",
    "BoundReport",
    "wealth_frictionless",
    "wealth_frictional",
    "turnover_bound",
    "tracking_bound",
    "monetary_turnover_bound",
    "returns_path",
    "write_bound_csv",
]


@dataclass(frozen=True)
class CostSpec:
    epsilon: float
    mode: Literal["shares", "monetary"] = "shares"

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.mode not in ("shares", "monetary"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True, eq=False)
class BoundReport:
    """Both sides of a pathwise inequality ``lhs_t <= rhs_t``.

    ``slack_min`` is ``min_t (rhs - lhs)`` (an array for stacked paths).
    ``identity_residual`` is the largest absolute deviation from the exact
    continuous-time identity; it is ``nan`` for the tracking bound.
    """

    lhs: Path
    rhs: Path
    slack_min: np.ndarray | float
    identity_residual: np.ndarray | float
    xi_used: Path
    R_path: Path | None = None
    Rbar_path: Path | None = None
    groups: dict | None = None

    def violation(self, tolerance=0.0):
        return np.maximum(0.0, -(np.asarray(self.slack_min) + tolerance))


def _scalar(a):
    a = np.asarray(a)
    return float(a) if a.ndim == 0 else a


def _cumsum0(steps: np.ndarray) -> np.ndarray:
    """Cumulative sum along the last axis with a leading zero."""
    out = np.zeros(steps.shape[:-1] + (steps.shape[-1] + 1,))
    np.cumsum(steps, axis=-1, out=out[..., 1:])
    return out


def wealth_frictionless(theta: Path, S: Path, X0: float = 0.0) -> Path:
    """``X0 + int theta dS``."""
    gains = stochastic_integral(theta, S)
    return Path(theta.grid, X0 + gains.values)


def returns_path(S: Path) -> Path:
    """Cumulative returns ``M_k = sum_{j<k} dS_j / S_j``."""
    r = S.increments() / S.values[..., :-1, :]
    return Path(S.grid, np.cumsum(np.concatenate([np.zeros_like(r[..., :1, :]), r], axis=-2), axis=-2))


def wealth_frictional(run: TrackerRun, S: Path, X0: float, cost: CostSpec) -> Path:
    """Wealth of the tracker after proportional costs and terminal liquidation."""
    if run.mode != cost.mode:
        raise ValueError(f"tracker mode {run.mode!r} does not match cost mode {cost.mode!r}")
    run.theta.require_same_grid(S)
    if cost.mode == "shares":
        gains = stochastic_integral(run.position, S).values[..., 0]
    else:
        gains = stochastic_integral(run.position, returns_path(S)).values[..., 0]
    x = X0 + gains - cost.epsilon * run.turnover.values[..., 0]
    x[..., -1] -= cost.epsilon * run.terminal_liquidation
    return Path(S.grid, x[..., None])


def _check_delta(delta):
    if not 0.0 < delta < 1.0:
        raise ValueError(f"bounds are stated for delta in (0, 1), got {delta}")


def turnover_bound(theta: Path, run: TrackerRun, delta: float) -> BoundReport:
    """Evaluate ``R_delta(xi)_t = 2 d delta + int xi dtheta + <theta>_t / (2 delta)``.

    ``xi`` is the realized ``Z`` (left endpoint); the bound is compared with
    the running turnover after the time-zero jump.
    """
    _check_delta(delta)
    theta.require_same_grid(run.theta)
    Z = run.xi_realized.values
    dth = theta.increments()
    int_z = _cumsum0(np.sum(Z[..., :-1, :] * dth, axis=-1))
    qv = _cumsum0(np.sum(dth * dth, axis=-1))
    d = theta.d
    R = 2 * d * delta + int_z + qv / (2 * delta)
    lhs = run.turnover.values[..., 0] - run.initial_jump[..., None]
    phi = 0.5 * np.sum(Z * Z, axis=-1)
    ito = delta * (phi[..., :1] - phi) + int_z + qv / (2 * delta)
    grid = theta.grid
    return BoundReport(
        lhs=Path(grid, lhs[..., None]),
        rhs=Path(grid, R[..., None]),
        slack_min=_scalar(np.min(R - lhs, axis=-1)),
        identity_residual=_scalar(np.max(np.abs(lhs - ito), axis=-1)),
        xi_used=run.xi_realized,
        R_path=Path(grid, R[..., None]),
    )


def tracking_bound(run: TrackerRun, S: Path, cost: CostSpec, X_fric: Path, X_free: Path) -> BoundReport:
    """Evaluate ``delta |int xi dS| + 2 eps (R_delta(xi') + jump_0)`` against ``|X_fric - X_free|``.

    ``xi = (vartheta - theta) / delta`` comes from the run and ``xi'`` is the
    integrand of :func:`turnover_bound`.
    """
    delta = run.delta
    xi = Path(S.grid, -run.xi_realized.values)
    R = turnover_bound(run.theta, run, delta).R_path.values[..., 0]
    int_xi = stochastic_integral(xi, S).values[..., 0]
    rbar = delta * np.abs(int_xi) + 2 * cost.epsilon * (R + run.initial_jump[..., None])
    lhs = np.abs(X_fric.values[..., 0] - X_free.values[..., 0])
    return BoundReport(
        lhs=Path(S.grid, lhs[..., None]),
        rhs=Path(S.grid, rbar[..., None]),
        slack_min=_scalar(np.min(rbar - lhs, axis=-1)),
        identity_residual=np.nan,
        xi_used=xi,
        R_path=Path(S.grid, R[..., None]),
        Rbar_path=Path(S.grid, rbar[..., None]),
    )


def monetary_turnover_bound(run: TrackerRun, M: Path, theta: Path, delta: float) -> BoundReport:
    """Turnover bound for monetary positions driven by the returns path `M`.

    The right-hand side is the sum of three groups,

        delta   * (2 d + int xi1 dM + <M>/2)
        1       * (int xi2 dtheta + int xi3 theta dM + int xi4 theta d<M>
                   + int xi5 d<M, theta>)
        1/delta * (<theta>/2 + int theta^2 d<M>/2 + int xi6 theta d<M, theta>)

    evaluated with ``xi1 = Z^2``, ``xi2 = xi5 = Z``, ``xi3 = xi4 = -Z`` and
    ``xi6 = -1``.  Brackets are realized (sums of products of increments).
    """
    _check_delta(delta)
    if run.mode != "monetary":
        raise ValueError("monetary_turnover_bound needs a monetary-mode run")
    theta.require_same_grid(M)
    Z = run.xi_realized.values[..., :-1, :]
    th = theta.values[..., :-1, :]
    dth = theta.increments()
    dM = M.increments()
    d = theta.d

    def cum(x):
        return _cumsum0(np.sum(x, axis=-1))

    g_delta = delta * (2 * d + cum(Z * Z * dM) + 0.5 * cum(dM * dM))
    g_one = cum(Z * dth) + cum(-Z * th * dM) + cum(-Z * th * dM * dM) + cum(Z * dM * dth)
    g_inv = (0.5 * cum(dth * dth) + 0.5 * cum(th * th * dM * dM) + cum(-th * dM * dth)) / delta
    bound = g_delta + g_one + g_inv
    lhs = run.turnover.values[..., 0] - run.initial_jump[..., None]

    Y = run.position.values[..., :-1, :]
    du = dth - Y * dM
    Zfull = run.xi_realized.values
    phi = 0.5 * np.sum(Zfull * Zfull, axis=-1)
    ito = delta * (phi[..., :1] - phi) + cum(Z * du) + cum(du * du) / (2 * delta)
    grid = theta.grid
    return BoundReport(
        lhs=Path(grid, lhs[..., None]),
        rhs=Path(grid, bound[..., None]),
        slack_min=_scalar(np.min(bound - lhs, axis=-1)),
        identity_residual=_scalar(np.max(np.abs(lhs - ito), axis=-1)),
        xi_used=run.xi_realized,
        R_path=Path(grid, bound[..., None]),
        groups={"delta": g_delta, "one": g_one, "inv_delta": g_inv},
    )


def write_bound_csv(reports, fh, path_ids=None) -> None:
    """Write ``(path_id, t, lhs, rhs, slack)`` rows for single-path reports."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["path_id", "t", "lhs", "rhs", "slack"])
    for j, rep in enumerate(reports):
        pid = j if path_ids is None else path_ids[j]
        t = rep.lhs.grid.times
        lhs, rhs = rep.lhs.values[:, 0], rep.rhs.values[:, 0]
        for k in range(len(t)):
            w.writerow([pid, repr(float(t[k])), repr(float(lhs[k])), repr(float(rhs[k])), repr(float(rhs[k] - lhs[k]))])
