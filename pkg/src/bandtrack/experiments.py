"""The named experiments behind ``bandtrack run``.

Each experiment takes a fully resolved configuration dict (see
:data:`DEFAULTS`), simulates its ensembles and returns the CSV tables it
produces together with one :class:`Criterion` per acceptance check.  Defaults
are the desk-scale acceptance settings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bounds import monetary_turnover_bound, returns_path, turnover_bound, write_bound_csv
from .estimator import (
    block_size,
    brownian_tracking_samples,
    estimate_lp,
    fit_linear,
    fit_scaling,
    map_paths,
)
from .models import (
    ConstantModel,
    KimOmbergModel,
    TargetSpec,
    _noise_columns,
    _scenario_arrays,
    assumption_diagnostics,
    girsanov_density,
    merton_strategy,
    simulate_ensemble,
)
from .paths import Path, SeedSpec, TimeGrid, brownian_increments, stacked_increments
from .tracker import BandConfig, shares_statistics, track_monetary, track_shares
from .utility import UtilitySpec, foc_residual, utility_loss

__all__ = ["Criterion", "Table", "ExperimentResult", "EXPERIMENTS", "DEFAULTS", "run_experiment"]

EPS_GRID = [1e-4, 10**-3.5, 1e-3, 10**-2.5, 1e-2]

COMMON = {"T": 1.0, "n_paths": 10_000, "master_seed": 7, "workers": 1, "dt": None, "X0": 0.0,
          "S0": 1.0, "K": 1.0, "output_dir": "out"}

KO = {"sigma_S": 0.2, "lambda_rev": 1.0, "mu_bar": 0.05, "sigma_mu": 0.05, "rho": -0.5, "r": 1.0, "mu0": None}

DEFAULTS = {
    "sharpness": {**COMMON, "delta_grid": [0.2, 0.1, 0.05], "dt_ratio": 100.0, "d": 1},
    "pathwise_bound": {**COMMON, **KO, "delta": 0.1, "dt_ratio": 100.0, "refine": 4, "ko_paths": 2000},
    "tracking_error": {**COMMON, "epsilon_grid": EPS_GRID, "sigma_S": 0.2, "mu_S": 0.0, "p": 2.0,
                       "dt_ratio": 100.0},
    "utility_loss": {**COMMON, "n_paths": 100_000, "epsilon_grid": EPS_GRID, "mu_S": 0.05, "sigma_S": 0.2,
                     "r": 1.0, "dt_ratio": 100.0},
    "monetary_bound": {**COMMON, "delta": 0.1, "mu_S": 0.05, "sigma_S": 0.2, "target_vol": 1.0,
                       "target_rho": 0.5, "dt_ratio": 100.0, "refine": 4, "refine_paths": 1000,
                       "ledger_paths": 100},
    "foc_check": {**COMMON, "n_paths": 100_000, "dt": 1e-4, "lambda": 0.25, "sigma_S": 0.2, "r": 1.0},
    "diagnostics": {**COMMON, **KO, "n_paths": 2000, "dt": 1e-3, "p": 2.0, "iota": 0.1, "target": "kim_omberg"},
}

DESCRIPTIONS = {
    "sharpness": "expected turnover of a Brownian target against 1/delta",
    "pathwise_bound": "pathwise turnover bound and its discrete identity residual",
    "tracking_error": "L_p tracking error against epsilon with delta = epsilon^(1/2)",
    "utility_loss": "exponential-utility loss of the band tracker, delta = epsilon^(1/3)",
    "monetary_bound": "turnover bound for monetary positions under a geometric price",
    "foc_check": "first-order condition of the frictionless optimizer",
    "diagnostics": "integrability diagnostics for the model assumptions",
}

ESTIMATE_COLUMNS = ["epsilon", "delta", "p", "value", "stderr", "n_paths", "dt"]
FIT_COLUMNS = ["slope", "slope_stderr", "intercept", "r2"]


@dataclass(frozen=True)
class Criterion:
    name: str
    observed: float
    expected: str
    tolerance: str
    passed: bool


@dataclass
class Table:
    columns: list
    rows: list = field(default_factory=list)


@dataclass
class ExperimentResult:
    name: str
    tables: dict
    criteria: list
    data: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria)


def _bound_tol(K, dt, qv, delta):
    """Discretization allowance ``K sqrt(dt) (1 + <theta>_T) / delta``."""
    return K * math.sqrt(dt) * (1.0 + qv) / delta


def _grid(cfg, delta):
    dt = cfg["dt"] if cfg["dt"] is not None else delta**2 / cfg["dt_ratio"]
    return TimeGrid.from_dt(cfg["T"], dt)


def _fit_table(fit):
    return Table(FIT_COLUMNS, [[fit.slope, fit.slope_stderr, fit.intercept, fit.r_squared]])


def _ko_model(cfg) -> KimOmbergModel:
    return KimOmbergModel(cfg["sigma_S"], cfg["lambda_rev"], cfg["mu_bar"], cfg["sigma_mu"], cfg["rho"],
                          r=cfg["r"], T=cfg["T"], mu0=cfg["mu0"], S0=cfg["S0"])


def _scenario_stats(model, target, measure, grid, seed, n_paths, workers, fn, width):
    """Map ``fn(S, theta) -> row`` over simulated scenarios, in path order."""
    cols = _noise_columns(model, target)

    def block(idx):
        out = np.empty((len(idx), width))
        for j, i in enumerate(idx):
            dW = brownian_increments(SeedSpec(seed, int(i)), grid, cols)
            S, theta, *_ = _scenario_arrays(model, target, measure, dW, grid)
            out[j] = fn(S, theta)
        return out

    return map_paths(block, n_paths, workers, block_size(grid.n_steps, cols))


def sharpness(cfg) -> ExperimentResult:
    deltas = sorted({float(x) for x in cfg["delta_grid"]}, reverse=True)
    d, T, K = int(cfg["d"]), cfg["T"], cfg["K"]
    table = Table(ESTIMATE_COLUMNS)
    crit, records = [], []
    for delta in deltas:
        grid = _grid(cfg, delta)
        s = brownian_tracking_samples(delta, grid, cfg["n_paths"], cfg["master_seed"], d, cfg["workers"])
        est = estimate_lp(s[:, 0], p=1)
        records.append({"delta": delta, "grid": grid, "samples": s, "estimate": est})
        table.rows.append(["", delta, 1, est.value, est.stderr, est.n_paths, grid.dt])
        ratio = est.value * 2 * delta / (d * T)
        crit.append(Criterion(f"turnover_ratio[delta={delta:g}]", ratio, "1", "0.1", abs(ratio - 1) <= 0.1))
        if math.isclose(delta, 0.1):
            # stated at delta = 0.1 only: at fixed dt/delta^2 the grid loses a constant
            # fraction of the turnover, which outgrows the 1/2 offset for small delta
            lower = d * T / (2 * delta) - d / 2
            crit.append(Criterion(f"turnover_lower_bound[delta={delta:g}]", est.value, f">= {lower!r}",
                                  f"2 SE = {2 * est.stderr!r}", est.value >= lower - 2 * est.stderr))
        margin = float(np.min(s[:, 1] + _bound_tol(K, grid.dt, s[:, 3], delta)))
        crit.append(Criterion(f"lemma_bound_min_slack[delta={delta:g}]", margin, ">= 0",
                              f"K sqrt(dt)(1+<theta>_T)/delta, K={K!r}", margin >= 0))
    tables = {"sharpness.csv": table}
    if len(records) >= 2:
        fit = fit_linear([1 / r["delta"] for r in records], [r["estimate"].value for r in records],
                         [r["estimate"].stderr for r in records])
        tables["sharpness_fit.csv"] = _fit_table(fit)
        target = d * T / 2
        crit.append(Criterion("turnover_slope_vs_inv_delta", fit.slope, repr(target), repr(0.1 * target),
                              abs(fit.slope - target) <= 0.1 * target))
    return ExperimentResult("sharpness", tables, crit, {"records": records})


def _p99_ratio(coarse, fine):
    a, b = np.percentile(coarse, 99), np.percentile(fine, 99)
    return float(a / b) if b > 0 else math.inf


def pathwise_bound(cfg) -> ExperimentResult:
    delta, K, seed, workers = cfg["delta"], cfg["K"], cfg["master_seed"], cfg["workers"]
    q = int(cfg["refine"])
    coarse = _grid(cfg, delta)
    fine = TimeGrid(coarse.T, coarse.n_steps * q)
    summary = Table(["run", "dt", "n_paths", "min_margin", "p99_identity_residual"])
    crit, data = [], {}

    def report(label, grid, s):
        margin = s[:, 1] + _bound_tol(K, grid.dt, s[:, 3], delta)
        summary.rows.append([label, grid.dt, len(s), float(np.min(margin)), float(np.percentile(s[:, 2], 99))])
        crit.append(Criterion(f"lemma_bound[{label}]", float(np.min(margin)), ">= 0",
                              f"K sqrt(dt)(1+<theta>_T)/delta, K={K!r}", bool(np.min(margin) >= 0)))
        data[label] = s

    for label, grid in (("brownian", coarse), ("brownian_refined", fine)):
        report(label, grid, brownian_tracking_samples(delta, grid, cfg["n_paths"], seed, 1, workers))

    model = _ko_model(cfg)
    target = TargetSpec("kim_omberg")

    def ko_row(S, theta):
        st = shares_statistics(theta, S, delta)
        return st["turnover"], st["lemma_slack"], st["identity_residual"], st["qv_theta"]

    for label, grid in (("kim_omberg", coarse), ("kim_omberg_refined", fine)):
        s = _scenario_stats(model, target, "dual_martingale", grid, seed, int(cfg["ko_paths"]), workers, ko_row, 4)
        report(label, grid, s)

    for label in ("brownian", "kim_omberg"):
        r = _p99_ratio(data[label][:, 2], data[label + "_refined"][:, 2])
        crit.append(Criterion(f"identity_residual_p99_ratio[{label}]", r, ">= 1.5", f"dt / {q}", r >= 1.5))

    # full library route on the first path, for inspection
    dW = brownian_increments(SeedSpec(seed, 0), coarse, 1)
    theta = Path(coarse, np.concatenate([[0.0], np.cumsum(dW[:, 0])])[:, None])
    rep = turnover_bound(theta, track_shares(theta, BandConfig(delta)), delta)
    return ExperimentResult("pathwise_bound", {"pathwise_bound.csv": summary, "bound_path0.csv": [rep]}, crit, data)


def tracking_error(cfg) -> ExperimentResult:
    eps_grid = sorted(float(e) for e in cfg["epsilon_grid"])
    model = ConstantModel(cfg["mu_S"], cfg["sigma_S"], S0=cfg["S0"])
    target = TargetSpec("pure_brownian")
    p, K = cfg["p"], cfg["K"]
    table = Table(ESTIMATE_COLUMNS)
    ident = Table(["epsilon", "mean", "stderr", "n_paths"])
    crit, ests, data = [], [], {}
    for eps in eps_grid:
        delta = math.sqrt(eps)
        grid = _grid(cfg, delta)

        def row(S, theta, eps=eps, delta=delta):
            st = shares_statistics(theta, S, delta, eps)
            gains = st["gain_tracker"] - st["gain_target"]
            err = gains - eps * (st["turnover"] + abs(st["position_T"]))
            return err, gains, st["tracking_slack"], st["qv_theta"]

        s = _scenario_stats(model, target, "dual_martingale", grid, cfg["master_seed"], cfg["n_paths"],
                            cfg["workers"], row, 4)
        data[eps] = s
        est = estimate_lp(s[:, 0], p)
        ests.append(est)
        table.rows.append([eps, delta, p, est.value, est.stderr, est.n_paths, grid.dt])
        mean = float(np.mean(s[:, 1]))
        se = float(np.std(s[:, 1], ddof=1) / math.sqrt(len(s)))
        ident.rows.append([eps, mean, se, len(s)])
        crit.append(Criterion(f"martingale_identity[eps={eps:.3g}]", mean, "0", f"2 SE = {2 * se!r}",
                              abs(mean) <= 2 * se))
        margin = float(np.min(s[:, 2] + _bound_tol(K, grid.dt, s[:, 3], delta)))
        crit.append(Criterion(f"tracking_bound_min_slack[eps={eps:.3g}]", margin, ">= 0",
                              f"K sqrt(dt)(1+<theta>_T)/delta, K={K!r}", margin >= 0))
    tables = {"tracking_error.csv": table, "martingale_identity.csv": ident}
    if len(eps_grid) >= 4 and math.log10(eps_grid[-1] / eps_grid[0]) >= 1.5 - 1e-9:
        fit = fit_scaling(eps_grid, ests)
        tables["tracking_error_fit.csv"] = _fit_table(fit)
        crit.append(Criterion("tracking_error_slope", fit.slope, "[0.45, 0.55]", "interval",
                              0.45 <= fit.slope <= 0.55))
    return ExperimentResult("tracking_error", tables, crit, {"samples": data, "estimates": ests})


def utility_loss_experiment(cfg) -> ExperimentResult:
    eps_grid = sorted(float(e) for e in cfg["epsilon_grid"])
    deltas = [e ** (1 / 3) for e in eps_grid]
    model = ConstantModel(cfg["mu_S"], cfg["sigma_S"], S0=cfg["S0"], r=cfg["r"])
    u = UtilitySpec(cfg["r"])
    # one grid for every epsilon so that the ensembles share their noise
    grid = _grid(cfg, min(deltas))
    X0 = cfg["X0"]

    def row(S, theta):
        out = [X0 + (S[-1] - S[0]) * theta[0]]
        for eps, delta in zip(eps_grid, deltas):
            st = shares_statistics(theta, S, delta, eps)
            out.append(X0 + st["gain_tracker"] - eps * (st["turnover"] + abs(st["position_T"])))
        return out

    s = _scenario_stats(model, TargetSpec("merton"), "physical", grid, cfg["master_seed"], cfg["n_paths"],
                        cfg["workers"], row, 1 + len(eps_grid))
    table = Table(ESTIMATE_COLUMNS)
    crit, losses = [], []
    for j, (eps, delta) in enumerate(zip(eps_grid, deltas)):
        loss = utility_loss(s[:, 1 + j], s[:, 0], u)
        losses.append(loss)
        table.rows.append([eps, delta, "", loss.value, loss.stderr, loss.n, grid.dt])
        crit.append(Criterion(f"utility_loss_nonnegative[eps={eps:.3g}]", loss.value, ">= 0",
                              f"2 SE = {2 * loss.stderr!r}", loss.value >= -2 * loss.stderr))
    tables = {"utility_loss.csv": table}
    if len(eps_grid) >= 4 and math.log10(eps_grid[-1] / eps_grid[0]) >= 1.5 - 1e-9:
        try:
            fit = fit_scaling(eps_grid, losses)
            slope = fit.slope
            tables["utility_loss_fit.csv"] = _fit_table(fit)
        except ValueError:
            slope = math.nan
        crit.append(Criterion("utility_loss_slope", slope, "[0.60, 0.80]", "interval", 0.60 <= slope <= 0.80))
    return ExperimentResult("utility_loss", tables, crit, {"wealth": s, "losses": losses, "grid": grid})


def foc_check(cfg) -> ExperimentResult:
    lam, sigma = cfg["lambda"], cfg["sigma_S"]
    model = ConstantModel(lam * sigma, sigma, S0=cfg["S0"], r=cfg["r"])
    grid = TimeGrid.from_dt(cfg["T"], cfg["dt"])
    theta_hat = merton_strategy(model)
    seed, X0 = cfg["master_seed"], cfg["X0"]

    def block(idx):
        dW = stacked_increments(seed, idx, grid, 1)
        S = np.empty((len(idx), grid.n_steps + 1, 1))
        S[:, 0] = model.S0
        np.cumsum(model.mu_S * grid.dt + sigma * dW, axis=1, out=S[:, 1:])
        S[:, 1:] += model.S0
        lam_path = Path(grid, np.full_like(S, model.market_price_of_risk))
        dens = girsanov_density(lam_path, dW + lam_path.values[:, :-1] * grid.dt, grid).terminal[:, 0]
        gain = S[:, -1, 0] - S[:, 0, 0]
        return np.column_stack([X0 + theta_hat * gain, X0 + 2 * theta_hat * gain, dens])

    s = map_paths(block, cfg["n_paths"], cfg["workers"], block_size(grid.n_steps))
    u = UtilitySpec(cfg["r"])
    opt = foc_residual(s[:, 0], s[:, 2], u)
    sub = foc_residual(s[:, 1], s[:, 2], u)
    table = Table(["strategy", "rms", "rms_stderr", "max_abs", "n_paths", "dt"],
                  [["optimal", opt.rms, opt.rms_stderr, opt.max_abs, opt.n, grid.dt],
                   ["doubled", sub.rms, sub.rms_stderr, sub.max_abs, sub.n, grid.dt]])
    if lam == 0:
        crit = [Criterion("foc_residual", opt.rms, "0", "exact", opt.rms == 0.0)]
    else:
        ratio = sub.rms / opt.rms if opt.rms > 0 else math.inf
        crit = [Criterion("foc_residual", opt.rms, "< 0.02", "0.02", opt.rms < 0.02),
                Criterion("foc_suboptimal_detection", ratio, ">= 5", "ratio of RMS", ratio >= 5)]
    return ExperimentResult("foc_check", {"foc_check.csv": table}, crit, {"samples": s, "optimal": opt, "doubled": sub})


def monetary_bound(cfg) -> ExperimentResult:
    delta, K, seed = cfg["delta"], cfg["K"], cfg["master_seed"]
    model = ConstantModel(cfg["mu_S"], cfg["sigma_S"], S0=cfg["S0"], price_dynamics="geometric")
    target = TargetSpec("pure_brownian", {"vol": cfg["target_vol"], "rho": cfg["target_rho"]})
    cols = _noise_columns(model, target)
    band = BandConfig(delta, "monetary")
    q = int(cfg["refine"])
    coarse = _grid(cfg, delta)
    fine = TimeGrid(coarse.T, coarse.n_steps * q)

    def runner(grid):
        def block(idx):
            arrs = [_scenario_arrays(model, target, "physical",
                                     brownian_increments(SeedSpec(seed, int(i)), grid, cols), grid)
                    for i in idx]
            S = Path(grid, np.stack([a[0] for a in arrs])[..., None])
            theta = Path(grid, np.stack([a[1] for a in arrs])[..., None])
            run = track_monetary(theta, S, band)
            rep = monetary_turnover_bound(run, returns_path(S), theta, delta)
            qv = np.sum(theta.increments()[..., 0] ** 2, axis=-1)
            return np.column_stack([rep.slack_min, rep.identity_residual, qv])
        return block

    summary = Table(["run", "dt", "n_paths", "min_margin", "p99_identity_residual"])
    crit, data = [], {}
    for label, grid, n in (("geometric", coarse, cfg["n_paths"]), ("geometric_refined", fine, int(cfg["refine_paths"]))):
        s = map_paths(runner(grid), n, cfg["workers"], block_size(grid.n_steps, 8))
        data[label] = s
        margin = s[:, 0] + _bound_tol(K, grid.dt, s[:, 2], delta)
        summary.rows.append([label, grid.dt, len(s), float(np.min(margin)), float(np.percentile(s[:, 1], 99))])
        crit.append(Criterion(f"monetary_bound[{label}]", float(np.min(margin)), ">= 0",
                              f"K sqrt(dt)(1+<theta>_T)/delta, K={K!r}", bool(np.min(margin) >= 0)))
    n_ref = len(data["geometric_refined"])
    r = _p99_ratio(data["geometric"][:n_ref, 1], data["geometric_refined"][:, 1])
    crit.append(Criterion("monetary_identity_residual_p99_ratio", r, ">= 1.5", f"dt / {q}", r >= 1.5))

    # a constant price turns monetary tracking into shares tracking
    n_led = int(cfg["ledger_paths"])
    dW = stacked_increments(seed, np.arange(n_led), coarse, 1)
    th = np.zeros((n_led, coarse.n_steps + 1, 1))
    np.cumsum(cfg["target_vol"] * dW, axis=1, out=th[:, 1:])
    theta = Path(coarse, th)
    flat = Path(coarse, np.full_like(th, model.S0))
    mon, sh = track_monetary(theta, flat, band), track_shares(theta, BandConfig(delta))
    same = np.array_equal(mon.trades, sh.trades) and np.array_equal(mon.position.values, sh.position.values)
    mismatched = float(np.sum(np.any(mon.trades != sh.trades, axis=(1, 2))))
    crit.append(Criterion("constant_price_ledger_match", mismatched, "0 mismatched paths", "exact", same))
    return ExperimentResult("monetary_bound", {"monetary_bound.csv": summary}, crit, data)


def diagnostics(cfg) -> ExperimentResult:
    kind = cfg["target"]
    model = _ko_model(cfg)
    grid = TimeGrid.from_dt(cfg["T"], cfg["dt"])
    scen = simulate_ensemble(model, TargetSpec(kind), "dual_martingale", cfg["master_seed"],
                             range(cfg["n_paths"]), grid)
    rep = assumption_diagnostics(scen, cfg["p"], cfg["iota"])
    table = Table(["quantity", "value", "stderr", "n_paths", "tail_share"])
    crit = []
    for name, est in rep.estimates.items():
        table.rows.append([name, est.value, est.stderr, est.n, est.tail_share])
        ok = math.isfinite(est.value) and not est.heavy_tail
        crit.append(Criterion(f"finite_moment[{name}]", est.value, "finite, light tail", "top-decile share <= 0.5", ok))
    return ExperimentResult("diagnostics", {"diagnostics.csv": table}, crit, {"report": rep})


EXPERIMENTS = {
    "sharpness": sharpness,
    "pathwise_bound": pathwise_bound,
    "tracking_error": tracking_error,
    "utility_loss": utility_loss_experiment,
    "monetary_bound": monetary_bound,
    "foc_check": foc_check,
    "diagnostics": diagnostics,
}


def run_experiment(name: str, cfg: dict | None = None) -> ExperimentResult:
    """Run experiment `name` with `cfg` layered over its defaults."""
    if name not in EXPERIMENTS:
        raise KeyError(f"unknown experiment {name!r}")
    full = {**DEFAULTS[name], **(cfg or {})}
    return EXPERIMENTS[name](full)
