"""Market models, frictionless target strategies and the dual martingale measure.

Two price models are provided.  :class:`ConstantModel` has constant drift and
volatility (arithmetic by default, geometric on request).  In
:class:`KimOmbergModel` the expected return follows an Ornstein-Uhlenbeck
process correlated with the price noise; its exponential-utility optimizer
needs the coefficient functions ``B`` and ``C`` from :func:`riccati_solve`.

Noise layout of a simulated scenario: column 0 of the increments always drives
the price; further columns are the orthogonal factor of the drift process (if
any) and then the orthogonal factor of a Brownian target (if any).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal

import numpy as np

from .paths import (
    NumericalAbort,
    Path,
    SeedSpec,
    TimeGrid,
    brownian_increments,
    linear_euler,
)

__all__ = [
    "ConstantModel",
    "KimOmbergModel",
    "RiccatiSolution",
    "RiccatiBlowUp",
    "TargetSpec",
    "MarketScenario",
    "MomentEstimate",
    "DiagnosticReport",
    "merton_strategy",
    "ko_strategy",
    "riccati_solve",
    "value_function",
    "girsanov_density",
    "simulate_scenario",
    "simulate_ensemble",
    "assumption_diagnostics",
]

Measure = Literal["physical", "dual_martingale"]
MEASURES = ("physical", "dual_martingale")


@dataclass(frozen=True)
class ConstantModel:
    """Constant drift ``mu_S`` and volatility ``sigma_S``.

    With ``price_dynamics="arithmetic"`` the price is ``dS = mu dt + sigma dW``;
    with ``"geometric"`` it is ``dS = S (mu dt + sigma dW)``.  ``r`` is the
    absolute risk aversion of the investor whose optimizer is tracked.
    """

    mu_S: float
    sigma_S: float
    S0: float = 1.0
    r: float = 1.0
    price_dynamics: Literal["arithmetic", "geometric"] = "arithmetic"

    def __post_init__(self):
        if not self.sigma_S > 0:
            raise ValueError("sigma_S must be positive")
        if not self.r > 0:
            raise ValueError("risk aversion r must be positive")
        if self.price_dynamics not in ("arithmetic", "geometric"):
            raise ValueError(f"unknown price dynamics {self.price_dynamics!r}")
        if self.price_dynamics == "geometric" and not self.S0 > 0:
            raise ValueError("geometric prices need S0 > 0")

    @property
    def market_price_of_risk(self) -> float:
        return self.mu_S / self.sigma_S


class RiccatiBlowUp(ArithmeticError):
    def __init__(self, time: float):
        super().__init__(f"Riccati solution explodes near t={time:.6g}")
        self.time = time


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    """Tabulated solution on a uniform grid; ``dB``, ``dC`` are time derivatives."""

    times: np.ndarray
    a: np.ndarray
    B: np.ndarray
    C: np.ndarray
    dB: np.ndarray
    dC: np.ndarray

    def at(self, t):
        """Piecewise-linear interpolation of ``(B(t), C(t))``."""
        return np.interp(t, self.times, self.B), np.interp(t, self.times, self.C)

    def derivatives_at(self, t):
        return np.interp(t, self.times, self.dB), np.interp(t, self.times, self.dC)


@dataclass(frozen=True)
class KimOmbergModel:
    """Arithmetic price with mean-reverting expected return.

    ``dS = mu_t dt + sigma_S dW`` and
    ``dmu = lambda_rev (mu_bar - mu) dt + sigma_mu dW^mu`` with
    ``d<W, W^mu> = rho dt``.  ``mu0`` defaults to ``mu_bar``.
    """

    sigma_S: float
    lambda_rev: float
    mu_bar: float
    sigma_mu: float
    rho: float
    r: float = 1.0
    T: float = 1.0
    mu0: float | None = None
    S0: float = 1.0
    riccati_steps: int = 1000

    def __post_init__(self):
        if not self.sigma_S > 0:
            raise ValueError("sigma_S must be positive")
        if not self.lambda_rev > 0:
            raise ValueError("lambda_rev must be positive")
        if self.sigma_mu < 0:
            raise ValueError("sigma_mu must be nonnegative")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [-1, 1]")
        if not self.r > 0:
            raise ValueError("risk aversion r must be positive")
        if self.riccati_steps < 1:
            raise ValueError("riccati_steps must be positive")

    @property
    def initial_drift(self) -> float:
        return self.mu_bar if self.mu0 is None else self.mu0

    @cached_property
    def riccati(self) -> RiccatiSolution:
        return riccati_solve(self)


def merton_strategy(m: ConstantModel) -> float:
    """Frictionless exponential-utility optimizer ``mu / (r sigma^2)``."""
    return m.mu_S / (m.r * m.sigma_S**2)


def _riccati_rhs(m: KimOmbergModel, B, C):
    s, lam, mub, sm, rho = m.sigma_S, m.lambda_rev, m.mu_bar, m.sigma_mu, m.rho
    k = 1.0 / s + rho * sm * C
    dC = k * k + 2.0 * lam * C - sm * sm * C * C
    dB = rho * sm * B * k - lam * mub * C + lam * B - sm * sm * B * C
    da = 0.5 * rho * rho * sm * sm * B * B - lam * mub * B - 0.5 * sm * sm * (C + B * B)
    return da, dB, dC


def riccati_solve(m: KimOmbergModel) -> RiccatiSolution:
    """Solve the Riccati system for the exponential-utility value function.

    The value function is ``-exp(-r x + a(t) + B(t) mu + C(t) mu^2 / 2)``;
    substituting it into the HJB equation gives

        C' = (1/sigma + rho sigma_mu C)^2 + 2 lambda C - sigma_mu^2 C^2
        B' = rho sigma_mu B (1/sigma + rho sigma_mu C) - lambda mu_bar C
             + lambda B - sigma_mu^2 B C
        a' = rho^2 sigma_mu^2 B^2 / 2 - lambda mu_bar B - sigma_mu^2 (C + B^2) / 2

    with ``a(T) = B(T) = C(T) = 0``.  Integrated backward with classical RK4.
    """
    n = m.riccati_steps
    times = np.linspace(0.0, m.T, n + 1)
    h = m.T / n
    y = np.zeros((n + 1, 3))

    def f(v):
        return np.array(_riccati_rhs(m, v[1], v[2]))

    v = np.zeros(3)
    for k in range(n, 0, -1):
        k1 = f(v)
        k2 = f(v - 0.5 * h * k1)
        k3 = f(v - 0.5 * h * k2)
        k4 = f(v - h * k3)
        v = v - h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(v)) or np.max(np.abs(v)) > 1e12:
            raise RiccatiBlowUp(times[k - 1])
        y[k - 1] = v
    da, dB, dC = _riccati_rhs(m, y[:, 1], y[:, 2])
    return RiccatiSolution(times, y[:, 0], y[:, 1], y[:, 2], dB, dC)


def value_function(m: KimOmbergModel, t, x, mu):
    sol = m.riccati
    a = np.interp(t, sol.times, sol.a)
    B, C = sol.at(t)
    return -np.exp(-m.r * x + a + B * mu + 0.5 * C * mu * mu)


def _ko_coefficients(m: KimOmbergModel, t):
    """``theta_hat = alpha(t) + beta(t) mu`` and the time derivatives of alpha, beta."""
    B, C = m.riccati.at(t)
    dB, dC = m.riccati.derivatives_at(t)
    hedge = m.rho * m.sigma_mu / (m.r * m.sigma_S)
    alpha = hedge * B
    beta = 1.0 / (m.r * m.sigma_S**2) + hedge * C
    return alpha, beta, hedge * dB, hedge * dC


def ko_strategy(m: KimOmbergModel, t, mu):
    """Optimal number of shares at time `t` given the current drift `mu`."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < -1e-12) or np.any(t_arr > m.T + 1e-12):
        raise ValueError(f"t must lie in [0, {m.T}]")
    alpha, beta, _, _ = _ko_coefficients(m, t_arr)
    return alpha + beta * np.asarray(mu, dtype=float)


def girsanov_density(lambda_path: Path, wQ_increments: np.ndarray, grid: TimeGrid) -> Path:
    """Density process ``e^N`` of the dual martingale measure.

    ``N_t = 1/2 int |lambda|^2 ds - int lambda . dW^Q`` where
    ``W^Q = W + int lambda ds`` is the dual-measure Brownian motion; left-point
    sums throughout.  `lambda_path` has one component per noise column.
    """
    if lambda_path.grid != grid:
        raise ValueError("lambda path lives on a different grid")
    lam = lambda_path.values[..., :-1, :]
    dWq = np.asarray(wQ_increments, dtype=float)
    if dWq.ndim == 1:
        dWq = dWq[:, None]
    if dWq.shape[-2:] != lam.shape[-2:]:
        raise ValueError(f"increments of shape {dWq.shape} do not match lambda {lam.shape}")
    steps = np.sum(0.5 * lam * lam * grid.dt - lam * dWq, axis=-1)
    logd = np.zeros(steps.shape[:-1] + (grid.n_steps + 1,))
    np.cumsum(steps, axis=-1, out=logd[..., 1:])
    if np.max(np.abs(logd)) > 700.0:
        raise NumericalAbort("density overflow or underflow: |log-density| exceeds 700")
    return Path(grid, np.exp(logd)[..., None])


TARGET_KINDS = ("merton", "kim_omberg", "pure_brownian", "deterministic_ramp", "deterministic_sine")


@dataclass(frozen=True)
class TargetSpec:
    """Frictionless target to be tracked.

    Parameters per kind: ``pure_brownian`` takes ``vol`` (1), ``rho`` (1,
    correlation with the price noise) and ``theta0`` (0);
    ``deterministic_ramp`` takes ``slope`` (1) and ``theta0`` (0);
    ``deterministic_sine`` takes ``amplitude`` (1), ``omega`` (2 pi) and
    ``theta0`` (0).  ``merton`` and ``kim_omberg`` read the model.
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in TARGET_KINDS:
            raise ValueError(f"unknown target kind {self.kind!r}")

    def get(self, name, default):
        return float(self.params.get(name, default))

    def extra_noise(self) -> bool:
        return self.kind == "pure_brownian" and abs(self.get("rho", 1.0)) < 1.0


@dataclass(frozen=True, eq=False)
class MarketScenario:
    """One simulated realization (or a stack of them).

    ``density`` is the density process of the dual martingale measure with
    respect to the simulation measure (identically one when simulating under
    the dual measure).  ``drift``/``vol`` are the coefficients of ``dS``;
    ``theta_drift``/``theta_vol`` those of the target.
    """

    grid: TimeGrid
    measure: str
    price: Path
    target: Path
    drift: Path
    vol: Path
    density: Path
    theta_drift: Path
    theta_vol: Path
    noise: np.ndarray


def _noise_columns(model, target: TargetSpec) -> int:
    return 1 + isinstance(model, KimOmbergModel) + target.extra_noise()


def _simulate_market(model, measure, dW, grid):
    """Price, drift, vol, drift-process and density ingredients for one path."""
    n, dt = grid.n_steps, grid.dt
    t = grid.times
    w = dW[:, 0]
    if isinstance(model, ConstantModel):
        mu = model.mu_S if measure == "physical" else 0.0
        if model.price_dynamics == "arithmetic":
            S = np.empty(n + 1)
            S[0] = model.S0
            np.cumsum(mu * dt + model.sigma_S * w, out=S[1:])
            S[1:] += model.S0
            drift = np.full(n + 1, mu)
            vol = np.full(n + 1, model.sigma_S)
        else:
            S = linear_euler(model.S0, 0.0, mu, 0.0, model.sigma_S, w, dt)
            if np.any(S <= 0):
                raise NumericalAbort("geometric price became nonpositive")
            drift = mu * S
            vol = model.sigma_S * S
        lam = np.full((n + 1, 1), model.market_price_of_risk)
        return S, drift, vol, None, lam

    m = model
    if abs(grid.T - m.T) > 1e-12:
        raise ValueError("Kim-Omberg scenarios must span the model horizon")
    rho_bar = math.sqrt(max(0.0, 1.0 - m.rho**2))
    dWmu = m.rho * w + rho_bar * dW[:, 1]
    B, C = m.riccati.at(t)
    if measure == "physical":
        a = np.full(n, m.lambda_rev * m.mu_bar)
        b = np.full(n, -m.lambda_rev)
    else:
        corr = (1.0 - m.rho**2) * m.sigma_mu**2
        a = m.lambda_rev * m.mu_bar + corr * B[:-1]
        b = -m.lambda_rev - m.sigma_mu * m.rho / m.sigma_S + corr * C[:-1]
    mu = linear_euler(m.initial_drift, a, b, m.sigma_mu, 0.0, dWmu, dt)
    mu_drift = np.empty(n + 1)
    mu_drift[:-1] = a + b * mu[:-1]
    mu_drift[-1] = mu_drift[-2]
    price_drift = mu if measure == "physical" else np.zeros(n + 1)
    S = np.empty(n + 1)
    S[0] = m.S0
    np.cumsum(price_drift[:-1] * dt + m.sigma_S * w, out=S[1:])
    S[1:] += m.S0
    vol = np.full(n + 1, m.sigma_S)
    lam = np.column_stack([mu / m.sigma_S, -m.sigma_mu * rho_bar * (B + C * mu)])
    return S, price_drift, vol, (mu, mu_drift), lam


def _simulate_target(model, target: TargetSpec, dW, grid, drift_process):
    n = grid.n_steps
    t = grid.times
    kind = target.kind
    if kind == "merton":
        if isinstance(model, ConstantModel):
            value = merton_strategy(model)
            return np.full(n + 1, value), np.zeros(n + 1), np.zeros(n + 1)
        mu, mu_drift = drift_process
        scale = 1.0 / (model.r * model.sigma_S**2)
        return mu * scale, mu_drift * scale, np.full(n + 1, model.sigma_mu * scale)
    if kind == "kim_omberg":
        if not isinstance(model, KimOmbergModel):
            raise ValueError("kim_omberg target needs a KimOmbergModel")
        mu, mu_drift = drift_process
        alpha, beta, dalpha, dbeta = _ko_coefficients(model, t)
        theta = alpha + beta * mu
        return theta, dalpha + dbeta * mu + beta * mu_drift, np.abs(beta) * model.sigma_mu
    if kind == "pure_brownian":
        vol = target.get("vol", 1.0)
        rho = target.get("rho", 1.0)
        noise = rho * dW[:, 0]
        if target.extra_noise():
            noise = noise + math.sqrt(1.0 - rho * rho) * dW[:, -1]
        theta = np.empty(n + 1)
        theta[0] = 0.0
        np.cumsum(vol * noise, out=theta[1:])
        theta += target.get("theta0", 0.0)
        return theta, np.zeros(n + 1), np.full(n + 1, abs(vol))
    if kind == "deterministic_ramp":
        slope = target.get("slope", 1.0)
        return target.get("theta0", 0.0) + slope * t, np.full(n + 1, slope), np.zeros(n + 1)
    amp, omega = target.get("amplitude", 1.0), target.get("omega", 2 * math.pi)
    theta = target.get("theta0", 0.0) + amp * np.sin(omega * t)
    return theta, amp * omega * np.cos(omega * t), np.zeros(n + 1)


def _scenario_arrays(model, target, measure, dW, grid):
    S, drift, vol, drift_process, lam = _simulate_market(model, measure, dW, grid)
    theta, th_drift, th_vol = _simulate_target(model, target, dW, grid, drift_process)
    if measure == "physical":
        k = lam.shape[1]
        wq = dW[:, :k] + lam[:-1] * grid.dt
        density = girsanov_density(Path(grid, lam), wq, grid).values[:, 0]
    else:
        density = np.ones(grid.n_steps + 1)
    return S, theta, drift, vol, density, th_drift, th_vol


def simulate_scenario(model, target: TargetSpec, measure: str, seed: SeedSpec, grid: TimeGrid) -> MarketScenario:
    """Simulate one path of price and target under `measure`.

    Under ``"dual_martingale"`` the price is simulated without drift (and the
    Kim-Omberg drift process with its dual-measure dynamics) instead of
    reweighting physical paths.
    """
    if measure not in MEASURES:
        raise ValueError(f"unsupported measure {measure!r}")
    if not isinstance(model, (ConstantModel, KimOmbergModel)):
        raise TypeError(f"unsupported model {type(model).__name__}")
    dW = brownian_increments(seed, grid, _noise_columns(model, target))
    arrays = _scenario_arrays(model, target, measure, dW, grid)
    return MarketScenario(grid, measure, *(Path(grid, a) for a in arrays), noise=dW)


def simulate_ensemble(model, target: TargetSpec, measure: str, master_seed: int, indices, grid: TimeGrid) -> MarketScenario:
    """Stack :func:`simulate_scenario` over several path indices."""
    scen = [simulate_scenario(model, target, measure, SeedSpec(master_seed, int(i)), grid) for i in indices]
    names = ("price", "target", "drift", "vol", "density", "theta_drift", "theta_vol")
    stacked = [Path(grid, np.stack([getattr(s, nm).values for s in scen])) for nm in names]
    return MarketScenario(grid, measure, *stacked, noise=np.stack([s.noise for s in scen]))


@dataclass(frozen=True)
class MomentEstimate:
    value: float
    stderr: float
    n: int
    tail_share: float

    @property
    def ci(self) -> tuple[float, float]:
        return self.value - 1.96 * self.stderr, self.value + 1.96 * self.stderr

    @property
    def heavy_tail(self) -> bool:
        # top decile carrying most of the mass hints at an infinite moment
        return self.tail_share > 0.5


@dataclass(frozen=True)
class DiagnosticReport:
    p: float
    iota: float
    estimates: dict

    @property
    def flagged(self) -> list[str]:
        return [k for k, v in self.estimates.items() if v.heavy_tail or not math.isfinite(v.value)]


def _moment(samples) -> MomentEstimate:
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    total = np.sum(np.abs(x))
    top = np.sort(np.abs(x))[::-1][: max(1, n // 10)]
    share = float(np.sum(top) / total) if total > 0 else 0.0
    return MomentEstimate(float(np.mean(x)), se, n, share)


def assumption_diagnostics(scen: MarketScenario, p: float = 2.0, iota: float = 0.1) -> DiagnosticReport:
    """Monte Carlo estimates of the integrability quantities behind the bounds.

    ``scen`` is a stacked ensemble (see :func:`simulate_ensemble`).  Reported:
    ``int E|mu^theta|^p + |sigma^theta|^p dt``, the same for the price,
    ``E exp(iota <theta>_T)``, ``E exp(iota <S>_T)`` and
    ``E exp(+-iota (theta_T - theta_0))`` (the stochastic integral of the
    constant integrands +-1 against theta).
    """
    if scen.price.values.shape[0] == 0:
        raise ValueError("empty ensemble")
    dt = scen.grid.dt

    def time_integral(a: Path, b: Path):
        v = np.abs(a.values[..., :-1, :]) ** p + np.abs(b.values[..., :-1, :]) ** p
        return np.sum(v, axis=(-2, -1)) * dt

    qv_theta = np.sum(np.diff(scen.target.values, axis=-2) ** 2, axis=(-2, -1))
    qv_S = np.sum(np.diff(scen.price.values, axis=-2) ** 2, axis=(-2, -1))
    dtheta = np.sum(scen.target.values[..., -1, :] - scen.target.values[..., 0, :], axis=-1)
    est = {
        "theta_coefficients": _moment(time_integral(scen.theta_drift, scen.theta_vol)),
        "price_coefficients": _moment(time_integral(scen.drift, scen.vol)),
        "exp_qv_theta": _moment(np.exp(iota * qv_theta)),
        "exp_qv_price": _moment(np.exp(iota * qv_S)),
        "exp_int_plus": _moment(np.exp(iota * dtheta)),
        "exp_int_minus": _moment(np.exp(-iota * dtheta)),
    }
    return DiagnosticReport(p, iota, est)
