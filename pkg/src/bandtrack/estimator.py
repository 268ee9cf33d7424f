"""Monte Carlo aggregation: L_p norms, scaling fits and the parallel path map."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .paths import SeedSpec, TimeGrid, brownian_increments
from .tracker import shares_statistics

__all__ = [
    "LpEstimate",
    "ScalingFit",
    "estimate_lp",
    "fit_scaling",
    "fit_linear",
    "map_paths",
    "block_size",
    "brownian_tracking_samples",
    "turnover_vs_delta",
    "BOOTSTRAP_SEED",
]

BOOTSTRAP_SEED = 20180216
BLOCK_ELEMENTS = 2_000_000


@dataclass(frozen=True)
class LpEstimate:
    p: float
    value: float
    stderr: float
    n_paths: int

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be at least 1")


@dataclass(frozen=True)
class ScalingFit:
    """Weighted least-squares line; ``points`` holds ``(x, y, y_stderr)`` rows."""

    slope: float
    slope_stderr: float
    intercept: float
    r_squared: float
    points: list = field(default_factory=list)
    log_scale: bool = True


def estimate_lp(samples, p: float = 2.0, n_boot: int = 200, seed: int = BOOTSTRAP_SEED) -> LpEstimate:
    """``(mean |x|^p)^(1/p)`` with a bootstrap standard error.

    The resampling stream is fixed by `seed`, so identical samples always give
    identical estimates.
    """
    x = np.abs(np.asarray(samples, dtype=float).ravel())
    if x.size == 0:
        raise ValueError("no samples")
    if p < 1:
        raise ValueError("p must be at least 1")
    if n_boot < 200:
        raise ValueError("use at least 200 bootstrap resamples")
    xp = x**p
    value = float(np.mean(xp) ** (1.0 / p))
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, x.size], dtype=np.uint64)))
    boot = np.empty(n_boot)
    for b in range(n_boot):
        idx = rng.integers(0, x.size, size=x.size)
        boot[b] = np.mean(xp[idx]) ** (1.0 / p)
    return LpEstimate(p, value, float(np.std(boot, ddof=1)), x.size)


def _wls(x, y, se):
    x, y, se = (np.asarray(v, dtype=float) for v in (x, y, se))
    weighted = bool(np.all(se > 0))
    w = 1.0 / se**2 if weighted else np.ones_like(y)
    A = np.column_stack([np.ones_like(x), x])
    Aw = A * w[:, None]
    cov = np.linalg.inv(A.T @ Aw)
    intercept, slope = cov @ (Aw.T @ y)
    resid = y - (intercept + slope * x)
    chi2 = float(np.sum(w * resid**2))
    red = chi2 / max(1, len(x) - 2)
    # stated errors are a floor; unweighted fits use the residual scatter alone
    scale = max(red, 1.0) if weighted else red
    ybar = np.sum(w * y) / np.sum(w)
    ss_tot = float(np.sum(w * (y - ybar) ** 2))
    r2 = 1.0 - chi2 / ss_tot if ss_tot > 0 else 1.0
    return float(slope), math.sqrt(cov[1, 1] * scale), float(intercept), r2


def fit_scaling(epsilons, estimates, min_points: int = 4, min_decades: float = 1.5) -> ScalingFit:
    """Fit ``log value = intercept + slope log epsilon``.

    Weights are ``1 / stderr^2`` on the log scale (``stderr / value``).  The
    slope error uses the weighted covariance inflated by the reduced
    chi-square when the scatter exceeds the stated errors.
    """
    eps = np.asarray(epsilons, dtype=float)
    vals = np.array([e.value for e in estimates], dtype=float)
    ses = np.array([e.stderr for e in estimates], dtype=float)
    if eps.size != vals.size:
        raise ValueError("one estimate per epsilon required")
    if eps.size < min_points:
        raise ValueError(f"need at least {min_points} grid points, got {eps.size}")
    if np.any(vals <= 0) or np.any(eps <= 0):
        raise ValueError("scaling fit needs strictly positive estimates and epsilons")
    if math.log10(eps.max() / eps.min()) < min_decades - 1e-9:
        raise ValueError(f"grid must span at least {min_decades} decades")
    slope, slope_se, intercept, r2 = _wls(np.log(eps), np.log(vals), ses / vals)
    points = [(float(a), float(b), float(c)) for a, b, c in zip(eps, vals, ses)]
    return ScalingFit(slope, slope_se, intercept, r2, points)


def fit_linear(x, values, stderrs) -> ScalingFit:
    """Weighted straight-line fit on the natural scale."""
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two points")
    slope, slope_se, intercept, r2 = _wls(x, values, stderrs)
    points = [(float(a), float(b), float(c)) for a, b, c in zip(x, values, stderrs)]
    return ScalingFit(slope, slope_se, intercept, r2, points, log_scale=False)


def map_paths(fn, n_paths: int, workers: int = 1, block: int = 64) -> np.ndarray:
    """Evaluate ``fn(indices) -> array (len(indices), k)`` over all path blocks.

    Blocks are fixed by `block` alone and results are concatenated in path
    order, so the output does not depend on `workers`.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    starts = range(0, n_paths, block)
    chunks = [np.arange(s, min(s + block, n_paths)) for s in starts]
    if workers <= 1:
        parts = [fn(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(fn, chunks))
    out = np.concatenate([np.asarray(p, dtype=float).reshape(len(c), -1) for p, c in zip(parts, chunks)])
    return out


def block_size(n_steps: int, columns: int = 1) -> int:
    """Paths per block so that one block of increments stays near 16 MB."""
    return max(1, min(256, BLOCK_ELEMENTS // max(1, n_steps * columns)))


def brownian_tracking_samples(delta: float, grid: TimeGrid, n_paths: int, master_seed: int,
                              d: int = 1, workers: int = 1) -> np.ndarray:
    """Track ``d`` independent standard Brownian targets (price held constant).

    Returns one row per path: terminal turnover, minimum slack of the turnover
    bound, largest identity residual and terminal quadratic variation of the
    target.  For ``d > 1`` the slack and residual are sums of per-component
    extremes, i.e. a conservative slack and an upper bound on the residual.
    """
    n = grid.n_steps

    def block(idx):
        out = np.empty((len(idx), 4))
        flat = np.zeros(n + 1)
        theta = np.zeros(n + 1)
        for j, i in enumerate(idx):
            dW = brownian_increments(SeedSpec(master_seed, int(i)), grid, d)
            row = np.zeros(4)
            for c in range(d):
                np.cumsum(dW[:, c], out=theta[1:])
                st = shares_statistics(theta, flat, delta)
                row += (st["turnover"], st["lemma_slack"], st["identity_residual"], st["qv_theta"])
            out[j] = row
        return out

    return map_paths(block, n_paths, workers, block_size(n, d))


def turnover_vs_delta(deltas, n_paths: int, master_seed: int, T: float = 1.0, d: int = 1,
                      dt: float | None = None, workers: int = 1, dt_ratio: float = 100.0):
    """Expected terminal turnover of Brownian targets against ``1 / delta``.

    Each band width gets its own grid with ``dt = delta^2 / dt_ratio`` unless a
    common `dt` is given, which must satisfy ``dt <= min(delta)^2 / 100``.
    The linear fit of the mean turnover on ``1 / delta`` should have slope
    ``d T / 2``.  Returns the fit and one record per band width.
    """
    deltas = sorted({float(x) for x in deltas}, reverse=True)
    if len(deltas) < 2:
        raise ValueError("need at least two band widths")
    if dt_ratio < 100:
        raise ValueError("grid too coarse: dt_ratio must be at least 100")
    if dt is not None and dt > min(deltas) ** 2 / 100 * (1 + 1e-9):
        raise ValueError(f"grid too coarse: dt={dt} exceeds min(delta)^2/100={min(deltas) ** 2 / 100}")
    records = []
    for delta in deltas:
        grid = TimeGrid.from_dt(T, dt if dt is not None else delta**2 / dt_ratio)
        samples = brownian_tracking_samples(delta, grid, n_paths, master_seed, d, workers)
        records.append({"delta": delta, "grid": grid, "samples": samples,
                        "estimate": estimate_lp(samples[:, 0], p=1)})
    fit = fit_linear([1 / r["delta"] for r in records], [r["estimate"].value for r in records],
                     [r["estimate"].stderr for r in records])
    return fit, records
