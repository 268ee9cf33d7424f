"""Utilities with bounded absolute risk aversion and utility-loss estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "UtilitySpec",
    "FocResidual",
    "LossEstimate",
    "evaluate_utility",
    "foc_residual",
    "utility_loss",
]


@dataclass(frozen=True)
class UtilitySpec:
    """Utility on the whole real line; only ``kind="exponential"`` ships.

    For the exponential utility ``U(x) = -exp(-r x)`` the absolute risk
    aversion is constant, so ``lower_risk_aversion == upper_risk_aversion == r``.
    """

    r: float
    kind: str = "exponential"

    def __post_init__(self):
        if self.kind != "exponential":
            raise ValueError(f"unsupported utility {self.kind!r}")
        if not self.r > 0:
            raise ValueError("risk aversion must be positive")

    def U(self, x):
        return -np.exp(-self.r * np.asarray(x, dtype=float))

    def dU(self, x):
        return self.r * np.exp(-self.r * np.asarray(x, dtype=float))

    def d2U(self, x):
        return -self.r**2 * np.exp(-self.r * np.asarray(x, dtype=float))

    def risk_aversion(self, x):
        return -self.d2U(x) / self.dU(x)

    @property
    def lower_risk_aversion(self) -> float:
        return self.r

    @property
    def upper_risk_aversion(self) -> float:
        return self.r

    def marginal_envelope(self, x):
        """``(exp(-R x + c), exp(-r x + c))`` with ``c = ln U'(0)``."""
        c = math.log(float(self.dU(0.0)))
        x = np.asarray(x, dtype=float)
        return np.exp(-self.upper_risk_aversion * x + c), np.exp(-self.lower_risk_aversion * x + c)


def evaluate_utility(u: UtilitySpec, x):
    return u.U(x)


@dataclass(frozen=True)
class FocResidual:
    rms: float
    rms_stderr: float
    max_abs: float
    n: int


def foc_residual(XT, density, u: UtilitySpec) -> FocResidual:
    """Pathwise residual of ``U'(X_T) / E[U'(X_T)] = dQ/dP``.

    `density` holds the dual density at ``T`` on the same physical paths.
    The expectation is the sample mean, computed relative to the smallest
    exponent so that large wealth spreads do not overflow.
    """
    x = np.asarray(XT, dtype=float).ravel()
    dens = np.asarray(density, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("no samples")
    if x.size != dens.size:
        raise ValueError("wealth and density samples must be paired")
    logm = -u.r * x
    ratio = np.exp(logm - logm.max())
    ratio /= np.mean(ratio)
    res = ratio - dens
    sq = res * res
    ms = float(np.mean(sq))
    rms = math.sqrt(ms)
    se_ms = float(np.std(sq, ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    se = se_ms / (2 * rms) if rms > 0 else 0.0
    return FocResidual(rms, se, float(np.max(np.abs(res))), x.size)


@dataclass(frozen=True)
class LossEstimate:
    value: float
    stderr: float
    n: int

    @property
    def ci(self) -> tuple[float, float]:
        return self.value - 1.96 * self.stderr, self.value + 1.96 * self.stderr


def utility_loss(fric_XT, free_XT, u: UtilitySpec) -> LossEstimate:
    """``E[U(X_free)] - E[U(X_fric)]`` from paired (common-noise) samples."""
    a = np.asarray(fric_XT, dtype=float).ravel()
    b = np.asarray(free_XT, dtype=float).ravel()
    if a.size != b.size:
        raise ValueError("ensemble size mismatch")
    if a.size == 0:
        raise ValueError("no samples")
    diff = u.U(b) - u.U(a)
    se = float(np.std(diff, ddof=1) / math.sqrt(diff.size)) if diff.size > 1 else 0.0
    return LossEstimate(float(np.mean(diff)), se, diff.size)
