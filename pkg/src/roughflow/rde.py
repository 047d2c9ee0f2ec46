"""Controlled rough differential equations.

Solves dPsi = f(Psi) dt + sigma(Psi) dXi for level-2 drivers with the
third-order one-step (Davie) scheme, exposes the controlled-path structure
(values, Gubinelli derivative, remainder) and empirical Lipschitz probes of
the solution map.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DivergenceError, ParameterError
from .grids import TimeGrid
from .lift import Level2RoughPath, rough_distance

_STATE_CAP = 1e12
_FD_STEP = 1e-6


@dataclass
class VectorField:
    """Coefficients of an RDE: drift f, diffusion sigma and its derivative.

    ``drift(y) -> (..., m)``, ``diffusion(y) -> (..., m, dim)``.
    ``dsigma(y) -> (..., m, dim, m)`` with entries d sigma[i, a] / d y[j];
    when omitted it is replaced by central finite differences (relative
    step 1e-6).  Callbacks must accept a leading batch axis.
    """

    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    dsigma: Callable[[np.ndarray], np.ndarray] | None = None
    state_dim: int = 1
    driver_dim: int = 1

    def dsigma_at(self, y: np.ndarray) -> np.ndarray:
        if self.dsigma is not None:
            return self.dsigma(y)
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape[:-1] + (self.state_dim, self.driver_dim, self.state_dim))
        for j in range(self.state_dim):
            step = _FD_STEP * max(1.0, float(np.max(np.abs(y[..., j]), initial=0.0)))
            yp, ym = y.copy(), y.copy()
            yp[..., j] += step
            ym[..., j] -= step
            out[..., j] = (self.diffusion(yp) - self.diffusion(ym)) / (2 * step)
        return out


def davie_step(
    vf: VectorField, y: np.ndarray, h: float, inc: np.ndarray, area: np.ndarray
) -> np.ndarray:
    """One third-order step: y + f h + sigma Xi^1 + (Dsigma . sigma) Xi^2.

    Batched over any leading axes shared by y, inc and area.
    """
    sig = vf.diffusion(y)
    dsig = vf.dsigma_at(y)
    second = np.einsum("...ibj,...ja,...ab->...i", dsig, sig, area)
    return y + vf.drift(y) * h + np.einsum("...ia,...a->...i", sig, inc) + second


@dataclass
class ControlledPath:
    """Solution path with Gubinelli derivative relative to its driver."""

    grid: TimeGrid
    values: np.ndarray  # (n+1, m)
    gubinelli: np.ndarray  # (n+1, m, dim)
    driver: Level2RoughPath | None = field(default=None, repr=False)

    def remainder(self, i: int, j: int) -> np.ndarray:
        """R^Y_{t_i, t_j} = Y_{i,j} - Y^dagger_i Xi^1_{i,j}."""
        if self.driver is None:
            raise ParameterError("remainder needs the driver rough path")
        inc = self.driver.first_level(i, j)
        return self.values[j] - self.values[i] - self.gubinelli[i] @ inc


def solve_rde(vf: VectorField, driver: Level2RoughPath, y0: np.ndarray) -> ControlledPath:
    """Davie-scheme solution of dPsi = f dt + sigma dXi; deterministic.

    Raises DivergenceError (naming the step) if the state norm exceeds 1e12
    or becomes non-finite.
    """
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    if y0.shape[-1] != vf.state_dim:
        raise ParameterError(f"y0 has dim {y0.shape[-1]}, vector field wants {vf.state_dim}")
    if vf.driver_dim != driver.dim:
        raise ParameterError(f"driver dim {driver.dim} != vector field driver_dim {vf.driver_dim}")
    n = driver.grid.n_steps
    h = driver.grid.h
    values = np.empty((n + 1,) + y0.shape)
    values[0] = y0
    y = y0
    for k in range(n):
        y = davie_step(vf, y, h, driver.inc[k], driver.area[k])
        if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > _STATE_CAP:
            raise DivergenceError("RDE state exceeded the divergence guard", step=k + 1)
        values[k + 1] = y
    gub = vf.diffusion(values)
    return ControlledPath(driver.grid, values, gub, driver=driver)


def _two_param_holder(grid: TimeGrid, fn, exponent: float, dyadic: bool) -> float:
    """Sup over grid pairs of |fn(i, j)| / (t_j - t_i)^exponent.

    ``fn`` maps index arrays (i, j) to magnitudes; used for both one-level
    increments and two-parameter remainders.
    """
    n = grid.n_steps
    if dyadic:
        ii, jj = [], []
        length = 1
        while length <= n:
            i = np.arange(0, n - length + 1)
            ii.append(i)
            jj.append(i + length)
            length *= 2
        i_idx, j_idx = np.concatenate(ii), np.concatenate(jj)
    else:
        i_idx, j_idx = np.triu_indices(n + 1, k=1)
    t = grid.points
    mags = fn(i_idx, j_idx)
    return float(np.max(mags / (t[j_idx] - t[i_idx]) ** exponent))


def path_holder_norm(grid: TimeGrid, values: np.ndarray, exponent: float, dyadic: bool = False) -> float:
    """Grid Hölder seminorm of a path (sup over pairs of |increment|/dt^a)."""
    flat = values.reshape(values.shape[0], -1)

    def mags(i_idx, j_idx):
        return np.linalg.norm(flat[j_idx] - flat[i_idx], axis=-1)

    return _two_param_holder(grid, mags, exponent, dyadic)


def _remainder_norm(
    a: ControlledPath, b: ControlledPath | None, exponent: float, dyadic: bool
) -> float:
    """Hölder norm of R^Y (or of R^Y - R^Ytilde when b is given)."""

    def batch_remainder(path: ControlledPath, i_idx, j_idx):
        inc = path.driver._cum1[j_idx] - path.driver._cum1[i_idx]
        return (
            path.values[j_idx]
            - path.values[i_idx]
            - np.einsum("kmd,kd->km", path.gubinelli[i_idx], inc)
        )

    def mags(i_idx, j_idx):
        r = batch_remainder(a, i_idx, j_idx)
        if b is not None:
            r = r - batch_remainder(b, i_idx, j_idx)
        return np.linalg.norm(r, axis=-1)

    return _two_param_holder(a.grid, mags, exponent, dyadic)


def controlled_distance(
    a: ControlledPath, b: ControlledPath, exponent: float, dyadic: bool | None = None
) -> float:
    """d_{Xi, Xitilde, 2 alpha}: Gubinelli-derivative Hölder distance plus
    remainder 2-alpha Hölder distance.  Sees increments only."""
    if a.grid != b.grid:
        raise ParameterError("controlled paths live on different grids")
    if dyadic is None:
        dyadic = a.grid.n_steps > (1 << 9)
    gub_dist = path_holder_norm(a.grid, a.gubinelli - b.gubinelli, exponent, dyadic)
    rem_dist = _remainder_norm(a, b, 2 * exponent, dyadic)
    return gub_dist + rem_dist


@dataclass(frozen=True)
class LipschitzReport:
    solution_distance: float  # ||Psi - Psitilde||_beta
    controlled_dist: float  # d_{Xi, Xitilde, 2 beta}
    input_distance: float  # |xi - xitilde| + rho_alpha
    ratio: float


def lipschitz_probe(
    vf: VectorField,
    driver_a: Level2RoughPath,
    driver_b: Level2RoughPath,
    y0_a: np.ndarray,
    y0_b: np.ndarray,
    exponents: tuple[float, float],
) -> LipschitzReport:
    """Empirical local-Lipschitz witness for the solution map.

    ``exponents`` is (alpha, beta) with beta < alpha; the ratio of
    output distances to |xi - xitilde| + rho_alpha(Xi, Xitilde) is the
    quantity whose boundedness the estimates assert.
    """
    alpha, beta = exponents
    if not beta < alpha:
        raise ParameterError("need beta < alpha")
    sol_a = solve_rde(vf, driver_a, y0_a)
    sol_b = solve_rde(vf, driver_b, y0_b)
    dyadic = driver_a.grid.n_steps > (1 << 9)
    sol_dist = path_holder_norm(sol_a.grid, sol_a.values - sol_b.values, beta, dyadic)
    ctrl_dist = controlled_distance(sol_a, sol_b, beta, dyadic)
    method = "dyadic" if dyadic else "exact"
    in_dist = float(np.linalg.norm(np.atleast_1d(y0_a) - np.atleast_1d(y0_b)))
    in_dist += rough_distance(driver_a, driver_b, alpha, method=method)
    num = sol_dist + ctrl_dist
    ratio = num / in_dist if in_dist > 0 else (0.0 if num == 0 else np.inf)
    return LipschitzReport(sol_dist, ctrl_dist, in_dist, ratio)
