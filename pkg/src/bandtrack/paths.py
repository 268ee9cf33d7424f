"""Time grids, sampled paths and Euler-Maruyama primitives.

Every array of sampled values has the layout ``(..., n_steps + 1, d)``: an
optional leading axis stacks independent paths, the time axis comes next and
the component axis is last.  All integrals use left-endpoint integrands.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import numba as nb

__all__ = [
    "TimeGrid",
    "Path",
    "SeedSpec",
    "NumericalAbort",
    "brownian_increments",
    "stacked_increments",
    "integrate_sde",
    "linear_euler",
    "stochastic_integral",
    "quadratic_variation",
]

_SEED_MASK = (1 << 64) - 1


class NumericalAbort(FloatingPointError):
    """A simulated state became non-finite (or left its admissible domain)."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t0, t0 + dt, ..., t0 + T`` with ``dt = T / n_steps``."""

    T: float
    n_steps: int
    t0: float = 0.0

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps!r}")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError(f"T must be positive and finite, got {self.T!r}")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @classmethod
    def from_dt(cls, T: float, dt: float) -> "TimeGrid":
        """Coarsest uniform grid on ``[0, T]`` whose step does not exceed `dt`."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        return cls(T, max(1, math.ceil(T / dt - 1e-9)))

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)


@dataclass(frozen=True, eq=False)
class Path:
    """Values of a (possibly vector-valued) process sampled on `grid`."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim not in (2, 3):
            raise ValueError(f"values must be 1-, 2- or 3-dimensional, got shape {values.shape}")
        if values.shape[-2] != self.grid.n_steps + 1:
            raise ValueError(
                f"values have {values.shape[-2]} time points, grid has {self.grid.n_steps + 1}"
            )
        if not np.all(np.isfinite(values)):
            raise NumericalAbort("path contains non-finite entries")
        object.__setattr__(self, "values", values)

    @property
    def d(self) -> int:
        return self.values.shape[-1]

    @property
    def stacked(self) -> bool:
        return self.values.ndim == 3

    @property
    def terminal(self) -> np.ndarray:
        return self.values[..., -1, :]

    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=-2)

    def path(self, i: int) -> "Path":
        """The `i`-th path of a stacked ensemble."""
        return Path(self.grid, self.values[i])

    def require_same_grid(self, other: "Path") -> None:
        if self.grid != other.grid:
            raise ValueError(f"grid mismatch: {self.grid} vs {other.grid}")


@dataclass(frozen=True)
class SeedSpec:
    """Identifies the noise stream of one simulated path."""

    master_seed: int
    path_index: int

    def key(self) -> np.ndarray:
        return np.array(
            [self.master_seed & _SEED_MASK, self.path_index & _SEED_MASK], dtype=np.uint64
        )


def brownian_increments(seed: SeedSpec, grid: TimeGrid, d: int = 1) -> np.ndarray:
    """Brownian increments of shape ``(n_steps, d)`` with variance ``dt``.

    The stream is a Philox counter-based generator keyed by
    ``(master_seed, path_index)``, so the result depends only on the seed and
    the grid, never on which worker asks for it or in what order.
    """
    if d < 1:
        raise ValueError("d must be at least 1")
    if grid.n_steps < 1:
        raise ValueError("grid must have at least one step")
    rng = np.random.Generator(np.random.Philox(key=seed.key()))
    z = rng.standard_normal((grid.n_steps, d))
    z *= math.sqrt(grid.dt)
    return z


def stacked_increments(master_seed: int, indices, grid: TimeGrid, d: int = 1) -> np.ndarray:
    """Increments for several path indices, stacked on a leading axis."""
    out = np.empty((len(indices), grid.n_steps, d))
    for j, i in enumerate(indices):
        out[j] = brownian_increments(SeedSpec(master_seed, int(i)), grid, d)
    return out


def integrate_sde(
    x0,
    drift: Callable,
    diffusion: Callable,
    increments: np.ndarray,
    grid: TimeGrid,
) -> Path:
    """Euler-Maruyama scheme ``X_{k+1} = X_k + b(t_k, X_k) dt + s(t_k, X_k) dW_k``.

    `increments` has shape ``(n_steps, m)`` or ``(n_paths, n_steps, m)``.
    `diffusion` may return a full ``(..., d, m)`` matrix, or, when ``d == m``,
    a per-component vector (diagonal noise); a scalar is broadcast.
    """
    dW = np.asarray(increments, dtype=float)
    if dW.ndim == 1:
        dW = dW[:, None]
    if dW.shape[-2] != grid.n_steps:
        raise ValueError(f"{dW.shape[-2]} increments for a grid with {grid.n_steps} steps")
    batch = dW.shape[:-2]
    x = np.broadcast_to(np.asarray(x0, dtype=float), batch + np.shape(np.atleast_1d(x0))).copy()
    d, m = x.shape[-1], dW.shape[-1]
    out = np.empty(batch + (grid.n_steps + 1, d))
    out[..., 0, :] = x
    dt = grid.dt
    times = grid.times
    for k in range(grid.n_steps):
        t = times[k]
        s = np.asarray(diffusion(t, x), dtype=float)
        if s.ndim == x.ndim + 1 or (s.ndim == 2 and s.shape == (d, m) and s.shape != x.shape):
            noise = np.einsum("...ij,...j->...i", s, dW[..., k, :])
        else:
            noise = s * dW[..., k, :]
        x = x + np.asarray(drift(t, x), dtype=float) * dt + noise
        if not np.all(np.isfinite(x)):
            raise NumericalAbort(f"non-finite state at step {k + 1} (t={times[k + 1]:.6g})")
        out[..., k + 1, :] = x
    return Path(grid, out)


@nb.njit(cache=True, nogil=True)
def _linear_euler(x0, a, b, c, e, dW, dt):
    n = dW.shape[0]
    out = np.empty(n + 1)
    x = x0
    out[0] = x
    for k in range(n):
        x = x + (a[k] + b[k] * x) * dt + (c[k] + e[k] * x) * dW[k]
        out[k + 1] = x
    return out


def linear_euler(x0: float, a, b, c, e, dW: np.ndarray, dt: float) -> np.ndarray:
    """Euler-Maruyama for ``dX = (a + b X) dt + (c + e X) dW`` with scalar noise.

    The coefficients are arrays over the left endpoints of the grid (length
    ``n_steps``) or scalars.  This is the compiled fast path used by the
    scenario simulator; :func:`integrate_sde` is the general routine.
    """
    dW = np.ascontiguousarray(dW, dtype=float)
    n = dW.shape[0]
    coeffs = [np.ascontiguousarray(np.broadcast_to(np.asarray(v, dtype=float), (n,))) for v in (a, b, c, e)]
    out = _linear_euler(float(x0), *coeffs, dW, float(dt))
    if not np.all(np.isfinite(out)):
        k = int(np.argmax(~np.isfinite(out)))
        raise NumericalAbort(f"non-finite state at step {k}")
    return out


def stochastic_integral(integrand: Path, integrator: Path) -> Path:
    """Left-point sums ``I_{k+1} = I_k + sum_i H[k, i] (X[k+1, i] - X[k, i])``."""
    integrand.require_same_grid(integrator)
    h = integrand.values[..., :-1, :]
    dx = integrator.increments()
    steps = np.sum(h * dx, axis=-1)
    out = np.zeros(steps.shape[:-1] + (steps.shape[-1] + 1,))
    np.cumsum(steps, axis=-1, out=out[..., 1:])
    return Path(integrand.grid, out[..., None])


def quadratic_variation(p: Path) -> Path:
    """Realized quadratic variation, summed over components."""
    steps = np.sum(p.increments() ** 2, axis=-1)
    out = np.zeros(steps.shape[:-1] + (steps.shape[-1] + 1,))
    np.cumsum(steps, axis=-1, out=out[..., 1:])
    return Path(p.grid, out[..., None])
