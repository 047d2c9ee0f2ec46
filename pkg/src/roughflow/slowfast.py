"""Slow-fast system integration and averaging experiments.

Advances the slow block with the third-order rough-path step against the
(dilated, optionally translated) fBm lift, and the fast block with
Euler-Maruyama micro steps of its Ito SDE; provides the frozen-fast process,
invariant-measure estimation, the averaged drift, the effective/skeleton
dynamics, the block-frozen auxiliary fast process, and Monte Carlo averaging
sweeps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .drivers import (
    CameronMartinControl,
    MixedDriverPath,
    cm_to_path,
    rng_for,
    sample_fbm,
)
from .errors import ConfigError, DivergenceError, ParameterError
from .grids import HurstParam, TimeGrid
from .lift import Level2RoughPath, dilate, lift_mixed, translate
from .rde import ControlledPath

_STATE_CAP = 1e12
_MC_CHUNK = 128  # replicas per RNG stream; fixed so worker count never changes draws


@dataclass
class SlowFastModel:
    """Coefficients and constants of a slow-fast system.

    Slow state x in R^m driven by a d-dim fBm block, fast state y in R^n_fast
    driven by an e-dim Brownian block.  All callbacks accept leading batch
    axes.  ``fbar1`` optionally registers the analytic averaged drift;
    ``dfbar1`` its Jacobian (both used by the effective dynamics and the rate
    engine).  ``L``, ``beta1``, ``beta2`` are the Lipschitz/growth and
    dissipativity constants used by :func:`check_assumptions`.
    """

    name: str
    m: int
    n_fast: int
    d: int
    e: int
    f1: Callable[[np.ndarray, np.ndarray], np.ndarray]
    sigma1: Callable[[np.ndarray], np.ndarray]
    f2: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    sigma2: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    dsigma1: Callable[[np.ndarray], np.ndarray] | None = None
    fbar1: Callable[[np.ndarray], np.ndarray] | None = None
    dfbar1: Callable[[np.ndarray], np.ndarray] | None = None
    L: float = 10.0
    beta1: float = 1.0
    beta2: float = 1.0

    def __post_init__(self):
        if self.n_fast and (self.f2 is None or self.sigma2 is None):
            raise ParameterError("models with a fast block need f2 and sigma2")

    def dsigma1_at(self, x: np.ndarray) -> np.ndarray:
        """D sigma1 with central finite differences when no callback is set."""
        if self.dsigma1 is not None:
            return self.dsigma1(x)
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (self.m, self.d, self.m))
        for j in range(self.m):
            step = 1e-6 * max(1.0, float(np.max(np.abs(x[..., j]), initial=0.0)))
            xp, xm = x.copy(), x.copy()
            xp[..., j] += step
            xm[..., j] -= step
            out[..., j] = (self.sigma1(xp) - self.sigma1(xm)) / (2 * step)
        return out


def check_assumptions(
    model: SlowFastModel, box: float = 5.0, n_points: int = 1000, seed: int = 0
) -> None:
    """Sampled spot-check of the structural assumptions; heuristic gate.

    Draws random state pairs in [-box, box] and verifies Lipschitz bounds on
    (f1, sigma1) with constant L, linear growth of f2, and the dissipativity
    inequality 2<dy, f2(x,y1)-f2(x,y2)> + |sigma2(x,y1)-sigma2(x,y2)|^2
    <= -beta1 |dy|^2.  Violations raise ConfigError.
    """
    rng = rng_for(seed, worker=815)
    m, nf = model.m, model.n_fast
    x1 = rng.uniform(-box, box, (n_points, m))
    x2 = rng.uniform(-box, box, (n_points, m))
    y1 = rng.uniform(-box, box, (n_points, nf))
    y2 = rng.uniform(-box, box, (n_points, nf))
    dx = np.linalg.norm(x2 - x1, axis=-1)
    dy = np.linalg.norm(y2 - y1, axis=-1)
    dxy = dx + dy
    tol = 1e-9

    df1 = np.linalg.norm(model.f1(x2, y2) - model.f1(x1, y1), axis=-1)
    if np.any(df1 > model.L * dxy + tol):
        raise ConfigError("f1 violates the sampled Lipschitz bound", field="model.f1")
    ds1 = model.sigma1(x2) - model.sigma1(x1)
    if np.any(np.sqrt(np.sum(ds1**2, axis=(-2, -1))) > model.L * dx + tol):
        raise ConfigError("sigma1 violates the sampled Lipschitz bound", field="model.sigma1")
    if not nf:
        return
    growth = model.L * (1.0 + np.linalg.norm(x1, axis=-1) + np.linalg.norm(y1, axis=-1))
    if np.any(np.linalg.norm(model.f2(x1, y1), axis=-1) > growth + tol):
        raise ConfigError("f2 violates the sampled growth bound", field="model.f2")
    inner = 2.0 * np.sum((y2 - y1) * (model.f2(x1, y2) - model.f2(x1, y1)), axis=-1)
    ds2 = model.sigma2(x1, y2) - model.sigma2(x1, y1)
    lhs = inner + np.sum(ds2**2, axis=(-2, -1))
    if np.any(lhs > -model.beta1 * dy**2 + tol):
        raise ConfigError("dissipativity inequality fails at sampled points", field="model.f2")


@dataclass(frozen=True)
class ScaleParams:
    """Time-scale parameters (eps, delta) with the Khasminskii block length.

    ``delta`` must satisfy delta <= eps_ratio * eps (delta = o(eps) proxy).
    ``block_delta`` defaults to delta^(1/(4 beta)) * log(1/delta) and is
    clamped to a multiple of the macro step at resolve time; ``micro_steps``
    defaults to max(16, ceil(16 h / delta)) so the micro step resolves delta.
    """

    eps: float
    delta: float
    block_delta: float | None = None
    micro_steps: int | None = None
    eps_ratio: float = 0.1

    def __post_init__(self):
        if not (0.0 < self.eps <= 1.0):
            raise ParameterError(f"eps must lie in (0, 1], got {self.eps}")
        if not (0.0 < self.delta < self.eps):
            raise ParameterError(f"need 0 < delta < eps, got delta={self.delta}, eps={self.eps}")
        if self.delta > self.eps_ratio * self.eps + 1e-15:
            raise ParameterError(
                f"delta={self.delta} exceeds eps_ratio*eps={self.eps_ratio * self.eps}"
            )

    def resolve(self, grid: TimeGrid, beta: float) -> tuple[float, int, int]:
        """Concrete (block length, block steps, micro steps) on ``grid``."""
        h = grid.h
        blk = self.block_delta
        if blk is None:
            blk = self.delta ** (1.0 / (4.0 * beta)) * math.log(1.0 / self.delta)
        blk_steps = int(np.clip(round(blk / h), 1, grid.n_steps))
        micro = self.micro_steps
        if micro is None:
            micro = max(16, math.ceil(16.0 * h / self.delta))
        return blk_steps * h, blk_steps, micro


@dataclass(frozen=True)
class InvariantMeasureEstimate:
    """Moments of the frozen-fast invariant measure from one long chain."""

    frozen_x: np.ndarray
    mean: np.ndarray
    covariance: np.ndarray
    n_samples: int
    burn_in: float
    samples: np.ndarray = field(repr=False)
    converged: bool = True

    def __post_init__(self):
        cov = self.covariance
        if not np.allclose(cov, cov.T):
            raise ParameterError("covariance must be symmetric")
        if np.linalg.eigvalsh(cov).min() < -1e-10:
            raise ParameterError("covariance must be positive semidefinite")


# ---------------------------------------------------------------------------
# Slow driver construction
# ---------------------------------------------------------------------------


def _slow_only_control(ctrl: CameronMartinControl) -> CameronMartinControl:
    return CameronMartinControl(
        ctrl.grid, ctrl.hurst, ctrl.udot, np.zeros((ctrl.grid.n_steps, 0))
    )


def slow_driver_lift(
    bH: np.ndarray,
    grid: TimeGrid,
    hurst: HurstParam,
    eps: float,
    ctrl: CameronMartinControl | None = None,
) -> Level2RoughPath:
    """Lift of the slow block's driver: the u-translated dilation of the fBm.

    First level sqrt(eps) b^H + u, second level by dilation of the geometric
    fBm areas plus the Young cross-integrals against u.
    """
    base = lift_mixed(MixedDriverPath(grid, bH, np.zeros((grid.n_steps + 1, 0)), hurst))
    out = dilate(base, eps)
    if ctrl is not None and np.any(ctrl.udot):
        out = translate(out, _slow_only_control(ctrl))
    return out


def _slow_driver_arrays(
    bH_batch: np.ndarray,
    grid: TimeGrid,
    hurst: HurstParam,
    eps: float,
    ctrl: CameronMartinControl | None,
) -> tuple[np.ndarray, np.ndarray]:
    """(inc, area) arrays of the translated dilated lift, batched over replicas.

    bH_batch: (R, n+1, d) -> inc (R, n, d), area (R, n, d, d).  For d = 1 the
    geometric per-interval area of the translated path is exactly half the
    squared increment, so the lift is formed in closed form; higher d goes
    through the rough-path objects per replica.
    """
    R, _, d = bH_batch.shape
    n = grid.n_steps
    if d == 1:
        z = np.sqrt(eps) * bH_batch
        if ctrl is not None and np.any(ctrl.udot):
            u, _ = cm_to_path(_slow_only_control(ctrl))
            z = z + u[None, :, :]
        inc = z[:, 1:, :] - z[:, :-1, :]
        area = 0.5 * inc[..., None] * inc[..., None, :]
        return inc, area
    inc = np.empty((R, n, d))
    area = np.empty((R, n, d, d))
    for r in range(R):
        rp = slow_driver_lift(bH_batch[r], grid, hurst, eps, ctrl)
        inc[r], area[r] = rp.inc, rp.area
    return inc, area


# ---------------------------------------------------------------------------
# Coupled integration
# ---------------------------------------------------------------------------


def _guard(arr: np.ndarray, step: int, label: str) -> None:
    if not np.all(np.isfinite(arr)) or np.max(np.abs(arr), initial=0.0) > _STATE_CAP:
        raise DivergenceError(f"{label} state exceeded the divergence guard", step=step)


def _integrate_batch(
    model: SlowFastModel,
    scales: ScaleParams,
    grid: TimeGrid,
    hurst: HurstParam,
    inc: np.ndarray,
    area: np.ndarray,
    vdot: np.ndarray | None,
    x0: np.ndarray,
    y0: np.ndarray,
    rng: np.random.Generator,
    freeze_blocks: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Batched macro/micro sweep; returns slow and fast paths on the macro grid.

    inc: (R, n, d), area: (R, n, d, d).  The slow drift uses the micro-step
    time average of f1 over each macro interval; the fast block is
    Euler-Maruyama with the current slow value held fixed (frozen at
    Khasminskii block starts instead when ``freeze_blocks`` is set).  The
    Brownian draws are one (micro, R, e) block per macro step, in macro-step
    order, so paired runs from the same seed share noise bitwise.
    """
    R = inc.shape[0]
    n, h = grid.n_steps, grid.h
    _, blk_steps, micro = scales.resolve(grid, hurst.beta)
    micro_h = h / micro
    nf, e = model.n_fast, model.e
    X = np.broadcast_to(np.atleast_1d(x0), (R, model.m)).astype(float).copy()
    Y = np.broadcast_to(np.atleast_1d(y0), (R, nf)).astype(float).copy()
    Xout = np.empty((n + 1, R, model.m))
    Yout = np.empty((n + 1, R, nf))
    Xout[0], Yout[0] = X, Y
    Xfrozen = X
    for k in range(n):
        if freeze_blocks is not None and k % freeze_blocks == 0:
            Xfrozen = X.copy()
        Xdrift = Xfrozen if freeze_blocks is not None else X
        if nf:
            dw = (
                math.sqrt(micro_h) * rng.standard_normal((micro, R, e))
                if e
                else np.zeros((micro, R, 0))
            )
            f1sum = np.zeros((R, model.m))
            for j in range(micro):
                f1sum += model.f1(X, Y)
                sig2 = model.sigma2(Xdrift, Y)
                dY = model.f2(Xdrift, Y) * (micro_h / scales.delta)
                if e:
                    dY = dY + np.einsum("rij,rj->ri", sig2, dw[j]) / math.sqrt(scales.delta)
                    if vdot is not None:
                        dY = dY + np.einsum("rij,j->ri", sig2, vdot[k]) * (
                            micro_h / math.sqrt(scales.eps * scales.delta)
                        )
                Y = Y + dY
            _guard(Y, k + 1, "fast")
            favg = f1sum / micro
        else:
            favg = model.f1(X, Y)
        sig1 = model.sigma1(X)
        dsig1 = model.dsigma1_at(X)
        X = (
            X
            + favg * h
            + np.einsum("ria,ra->ri", sig1, inc[:, k])
            + np.einsum("ribj,rja,rab->ri", dsig1, sig1, area[:, k])
        )
        _guard(X, k + 1, "slow")
        Xout[k + 1], Yout[k + 1] = X, Y
    return Xout, Yout


def integrate_slowfast(
    model: SlowFastModel,
    scales: ScaleParams,
    driver: MixedDriverPath,
    ctrl: CameronMartinControl | None = None,
    seed: int = 0,
) -> tuple[ControlledPath, np.ndarray]:
    """One coupled slow-fast trajectory on the driver's (macro) grid.

    The slow block follows the third-order rough step against the lift of
    sqrt(eps) b^H + u; the fast block follows Euler-Maruyama micro steps of
    dY = f2 dt/delta + sigma2 vdot dt/sqrt(eps delta) + sigma2 dw/sqrt(delta)
    with Brownian increments generated on the micro grid from ``seed`` (the
    macro-grid w of the driver is too coarse to drive the fast block and is
    ignored here).  ctrl = None sets u = v = 0.  Returns the slow block as a
    controlled path over its driver lift, plus the fast path on the macro
    grid.  Initial conditions default to zero; see :func:`averaging_experiment`
    for nonzero starts.
    """
    grid, hurst = driver.grid, driver.hurst
    if ctrl is not None:
        if ctrl.grid != grid:
            raise ParameterError("control and driver live on different grids")
        if ctrl.d != driver.d or (model.e and ctrl.e not in (0, model.e)):
            raise ParameterError("control dims do not match the driver")
    rp = slow_driver_lift(driver.bH, grid, hurst, scales.eps, ctrl)
    vdot = None
    if ctrl is not None and ctrl.e and np.any(ctrl.vdot):
        vdot = ctrl.vdot
    rng = rng_for(seed)
    Xout, Yout = _integrate_batch(
        model,
        scales,
        grid,
        hurst,
        rp.inc[None],
        rp.area[None],
        vdot,
        np.zeros(model.m),
        np.zeros(model.n_fast),
        rng,
    )
    slow = ControlledPath(grid, Xout[:, 0, :], model.sigma1(Xout[:, 0, :]), driver=rp)
    return slow, Yout[:, 0, :]


def frozen_fast(
    model: SlowFastModel,
    x: np.ndarray,
    y0: np.ndarray,
    horizon: float,
    micro_h: float,
    seed: int = 0,
) -> np.ndarray:
    """Euler-Maruyama path of dY = f2(x, Y) dt + sigma2(x, Y) dw, frozen x.

    Runs at unit time scale (no delta).  ``y0`` may carry a leading batch
    axis; the output is (n_steps + 1, ...) matching y0's shape.
    """
    if model.n_fast == 0:
        raise ParameterError("model has no fast block")
    y0 = np.asarray(y0, dtype=float)
    batched = y0.ndim > 1
    Y = np.atleast_2d(y0).astype(float).copy()
    R = Y.shape[0]
    x = np.broadcast_to(np.atleast_1d(x), (R, model.m))
    n = max(1, int(round(horizon / micro_h)))
    rng = rng_for(seed)
    out = np.empty((n + 1,) + Y.shape)
    out[0] = Y
    root_h = math.sqrt(micro_h)
    for k in range(n):
        dY = model.f2(x, Y) * micro_h
        if model.e:
            dw = root_h * rng.standard_normal((R, model.e))
            dY = dY + np.einsum("rij,rj->ri", model.sigma2(x, Y), dw)
        Y = Y + dY
        _guard(Y, k + 1, "frozen fast")
        out[k + 1] = Y
    return out if batched else out[:, 0, :]


def estimate_invariant_measure(
    model: SlowFastModel,
    x: np.ndarray,
    n_samples: int = 2000,
    burn_in: float | None = None,
    seed: int = 0,
    micro_h: float = 0.01,
) -> InvariantMeasureEstimate:
    """Moments of mu_x from a single long frozen-fast chain.

    Burn-in defaults to 5 / beta2 time units; retained samples are thinned to
    roughly one per 1/beta1 time units.  A drift of the mean between the two
    trajectory halves above 5 standard errors flags ``converged = False``.
    """
    if burn_in is None:
        burn_in = 5.0 / model.beta2
    thin = max(1, int(round(1.0 / (model.beta1 * micro_h))))
    n_burn = int(round(burn_in / micro_h))
    total = n_burn + n_samples * thin
    path = frozen_fast(model, x, np.zeros(model.n_fast), total * micro_h, micro_h, seed)
    samples = path[n_burn + thin :: thin][:n_samples]
    mean = samples.mean(axis=0)
    cov = np.atleast_2d(np.cov(samples.T, bias=False))
    half = len(samples) // 2
    a, b = samples[:half], samples[half:]
    se = np.sqrt(a.var(axis=0) / half + b.var(axis=0) / half)
    converged = bool(np.all(np.abs(a.mean(axis=0) - b.mean(axis=0)) <= 5 * se + 1e-12))
    return InvariantMeasureEstimate(
        np.atleast_1d(np.asarray(x, dtype=float)),
        mean,
        cov,
        len(samples),
        burn_in,
        samples,
        converged,
    )


def averaged_drift(
    model: SlowFastModel,
    x: np.ndarray,
    estimate: InvariantMeasureEstimate | str = "analytic",
) -> np.ndarray:
    """fbar1(x): the invariant average of f1(x, .).

    ``estimate`` is either "analytic" (requires a registered fbar1) or an
    InvariantMeasureEstimate for the same x, averaged by Monte Carlo.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if isinstance(estimate, str):
        if estimate != "analytic":
            raise ParameterError(f"unknown averaged-drift source {estimate!r}")
        if model.fbar1 is None:
            raise ParameterError(f"model {model.name!r} has no analytic averaged drift")
        return model.fbar1(x)
    if not np.array_equal(estimate.frozen_x, x):
        raise ParameterError("invariant estimate was computed for a different x")
    xs = np.broadcast_to(x, (estimate.samples.shape[0], model.m))
    return model.f1(xs, estimate.samples).mean(axis=0)


# ---------------------------------------------------------------------------
# Effective and skeleton dynamics
# ---------------------------------------------------------------------------


@dataclass
class FbarTable:
    """Averaged drift tabulated on a lattice with multilinear interpolation."""

    points: tuple[np.ndarray, ...]
    values: np.ndarray  # lattice shape + (m,)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        from scipy.interpolate import RegularGridInterpolator

        interp = RegularGridInterpolator(self.points, self.values, bounds_error=True)
        try:
            return interp(np.atleast_2d(x))[0] if np.ndim(x) == 1 else interp(x)
        except ValueError as exc:
            raise ParameterError(f"state outside the tabulated lattice: {exc}") from exc


def tabulate_fbar(
    model: SlowFastModel,
    lows: np.ndarray,
    highs: np.ndarray,
    n_knots: int = 9,
    n_samples: int = 2000,
    seed: int = 0,
) -> FbarTable:
    """Tabulate fbar1 by invariant-measure Monte Carlo on a state lattice.

    The lattice spans [lows, highs] (callers should include a margin around
    the states they expect to visit).
    """
    lows = np.atleast_1d(np.asarray(lows, dtype=float))
    highs = np.atleast_1d(np.asarray(highs, dtype=float))
    axes = tuple(np.linspace(lo, hi, n_knots) for lo, hi in zip(lows, highs))
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    flat = mesh.reshape(-1, model.m)
    vals = np.empty((flat.shape[0], model.m))
    for i, x in enumerate(flat):
        est = estimate_invariant_measure(model, x, n_samples=n_samples, seed=seed + i)
        vals[i] = averaged_drift(model, x, est)
    return FbarTable(axes, vals.reshape(mesh.shape[:-1] + (model.m,)))


def integrate_effective(
    model: SlowFastModel,
    x0: np.ndarray,
    grid: TimeGrid,
    ctrl: CameronMartinControl | None = None,
    fbar: Callable[[np.ndarray], np.ndarray] | None = None,
) -> np.ndarray:
    """Effective dynamics (zero control) or the skeleton driven by u.

    With no (or zero) control, the deterministic effective ODE
    dX = fbar1(X) dt is advanced by classical RK4.  Otherwise the skeleton is
    advanced by Young-Euler steps X_{k+1} = X_k + fbar1(X_k) h
    + sigma1(X_k) u_{k,k+1}; the v block of the control never enters.
    Returns the path values, shape (n_steps + 1, m).
    """
    if fbar is None:
        if model.fbar1 is None:
            raise ParameterError("no averaged drift available; register fbar1 or tabulate")
        fbar = model.fbar1
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    n, h = grid.n_steps, grid.h
    out = np.empty((n + 1, model.m))
    out[0] = x
    if ctrl is not None and np.any(ctrl.udot):
        u, _ = cm_to_path(_slow_only_control(ctrl))
        for k in range(n):
            x = x + fbar(x) * h + model.sigma1(x) @ (u[k + 1] - u[k])
            _guard(x, k + 1, "skeleton")
            out[k + 1] = x
    else:
        for k in range(n):
            k1 = fbar(x)
            k2 = fbar(x + 0.5 * h * k1)
            k3 = fbar(x + 0.5 * h * k2)
            k4 = fbar(x + h * k3)
            x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            _guard(x, k + 1, "effective")
            out[k + 1] = x
    return out


def auxiliary_fast(
    model: SlowFastModel,
    scales: ScaleParams,
    slow_path: np.ndarray,
    grid: TimeGrid,
    hurst: HurstParam,
    seed: int = 0,
) -> np.ndarray:
    """Fast path with the slow argument frozen at Khasminskii block starts.

    ``slow_path`` has shape (n+1, m) or (n+1, R, m) on the macro grid.  The
    Brownian increments are drawn in the same order and shapes as
    :func:`integrate_slowfast` at the same seed, so the two runs are paired
    by common random numbers (bitwise-identical noise).
    """
    slow = np.asarray(slow_path, dtype=float)
    batched = slow.ndim == 3
    if not batched:
        slow = slow[:, None, :]
    n, h = grid.n_steps, grid.h
    if slow.shape[0] != n + 1:
        raise ParameterError("slow path rows must match the macro grid")
    R = slow.shape[1]
    _, blk_steps, micro = scales.resolve(grid, hurst.beta)
    micro_h = h / micro
    rng = rng_for(seed)
    nf, e = model.n_fast, model.e
    Y = np.zeros((R, nf))
    out = np.empty((n + 1, R, nf))
    out[0] = Y
    for k in range(n):
        Xblk = slow[(k // blk_steps) * blk_steps]
        dw = (
            math.sqrt(micro_h) * rng.standard_normal((micro, R, e))
            if e
            else np.zeros((micro, R, 0))
        )
        for j in range(micro):
            dY = model.f2(Xblk, Y) * (micro_h / scales.delta)
            if e:
                dY = dY + np.einsum("rij,rj->ri", model.sigma2(Xblk, Y), dw[j]) / math.sqrt(
                    scales.delta
                )
            Y = Y + dY
        _guard(Y, k + 1, "auxiliary fast")
        out[k + 1] = Y
    return out if batched else out[:, 0, :]


# ---------------------------------------------------------------------------
# Monte Carlo sweeps
# ---------------------------------------------------------------------------


def _chunk_sizes(n_mc: int) -> list[int]:
    full, rem = divmod(n_mc, _MC_CHUNK)
    return [_MC_CHUNK] * full + ([rem] if rem else [])


def mc_slow_paths(
    model: SlowFastModel,
    scales: ScaleParams,
    grid: TimeGrid,
    hurst: HurstParam,
    n_mc: int,
    seed: int,
    ctrl: CameronMartinControl | None = None,
    x0: np.ndarray = 0.0,
    y0: np.ndarray = 0.0,
    workers: int = 1,
    freeze_blocks: bool = False,
    return_fast: bool = False,
):
    """Monte Carlo batch of coupled trajectories; replica draws are chunked.

    Each chunk of replicas owns an RNG stream keyed by (seed, chunk index),
    so results are reproducible for any worker count; chunks are merged in
    index order.  Returns the slow paths (n+1, n_mc, m), and the fast paths
    too when ``return_fast`` is set.
    """
    sizes = _chunk_sizes(n_mc)
    _, blk_steps, _ = scales.resolve(grid, hurst.beta)
    freeze = blk_steps if freeze_blocks else None
    vdot = None
    if ctrl is not None and ctrl.e and np.any(ctrl.vdot):
        vdot = ctrl.vdot

    def run_chunk(idx_size):
        idx, size = idx_size
        rng = rng_for(seed, worker=idx)
        bH = np.empty((size, grid.n_steps + 1, model.d))
        for r in range(size):
            sub = int(rng.integers(0, 2**63 - 1))
            bH[r] = sample_fbm(grid, hurst, model.d, sub)
        inc, area = _slow_driver_arrays(bH, grid, hurst, scales.eps, ctrl)
        return _integrate_batch(
            model, scales, grid, hurst, inc, area, vdot, x0, y0, rng, freeze
        )

    jobs = list(enumerate(sizes))
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_chunk, jobs))
    else:
        results = [run_chunk(j) for j in jobs]
    Xall = np.concatenate([r[0] for r in results], axis=1)
    if return_fast:
        Yall = np.concatenate([r[1] for r in results], axis=1)
        return Xall, Yall
    return Xall


def averaging_experiment(
    model: SlowFastModel,
    scales_list: list[ScaleParams],
    grid: TimeGrid,
    hurst: HurstParam,
    n_mc: int = 500,
    seed: int = 0,
    x0: np.ndarray = 0.0,
    workers: int = 1,
) -> list[dict]:
    """Averaging sweep: slow-vs-effective error and boundedness proxies.

    For each scale setting, reports rows (eps, delta, Delta, metric, value,
    stderr, n_mc) with metrics ``sup_error`` (E sup_t |X - Xbar|),
    ``slow_holder_sq`` (second moment of the grid beta-Hölder norm of the
    slow path, dyadic pairs) and ``fast_l2`` (time-integrated fast second
    moment).  The effective path Xbar solves the averaged ODE on the same
    grid.
    """
    xbar = integrate_effective(model, x0, grid)
    rows = []
    t = grid.points
    dyadic_i, dyadic_j = _dyadic_pair_arrays(grid.n_steps)
    wts = (t[dyadic_j] - t[dyadic_i]) ** hurst.beta
    for scales in scales_list:
        X, Y = mc_slow_paths(
            model, scales, grid, hurst, n_mc, seed, x0=x0, workers=workers, return_fast=True
        )
        err = np.max(np.linalg.norm(X - xbar[:, None, :], axis=-1), axis=0)
        hol = np.max(
            np.linalg.norm(X[dyadic_j] - X[dyadic_i], axis=-1) / wts[:, None], axis=0
        )
        fast_l2 = np.sum(np.sum(Y**2, axis=-1), axis=0) * grid.h
        blk, _, _ = scales.resolve(grid, hurst.beta)
        for metric, vals in (
            ("sup_error", err),
            ("slow_holder_sq", hol**2),
            ("fast_l2", fast_l2),
        ):
            rows.append(
                {
                    "eps": scales.eps,
                    "delta": scales.delta,
                    "Delta": blk,
                    "metric": metric,
                    "value": float(vals.mean()),
                    "stderr": float(vals.std(ddof=1) / math.sqrt(n_mc)),
                    "n_mc": n_mc,
                }
            )
    return rows


def _dyadic_pair_arrays(n: int) -> tuple[np.ndarray, np.ndarray]:
    ii, jj = [], []
    length = 1
    while length <= n:
        i = np.arange(0, n - length + 1)
        ii.append(i)
        jj.append(i + length)
        length *= 2
    return np.concatenate(ii), np.concatenate(jj)


def write_experiment_csv(path, rows: list[dict]) -> None:
    """Trend table CSV with columns eps,delta,Delta,metric,value,stderr,n_mc."""
    cols = ["eps", "delta", "Delta", "metric", "value", "stderr", "n_mc"]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            cells = []
            for c in cols:
                v = row[c]
                cells.append(f"{v:.17g}" if isinstance(v, float) else str(v))
            fh.write(",".join(cells) + "\n")


# ---------------------------------------------------------------------------
# Builtin models
# ---------------------------------------------------------------------------


def _const_sigma1(value: np.ndarray):
    value = np.asarray(value, dtype=float)

    def sigma1(x):
        return np.broadcast_to(value, np.shape(x)[:-1] + value.shape)

    def dsigma1(x):
        shape = np.shape(x)[:-1] + value.shape + (value.shape[0],)
        return np.zeros(shape)

    return sigma1, dsigma1


def linear_ou_model() -> SlowFastModel:
    """Slow drift -y with a fast OU block relaxing to kappa * x.

    gamma = 2, kappa = 0.5, sigma2 = 1, sigma1 = 0.2 (constant): the fast
    invariant measure is N(0.5 x, 1/4) and fbar1(x) = -0.5 x.
    """
    gamma, kappa, s1 = 2.0, 0.5, 0.2
    sigma1, dsigma1 = _const_sigma1(np.array([[s1]]))
    return SlowFastModel(
        name="linear-ou",
        m=1,
        n_fast=1,
        d=1,
        e=1,
        f1=lambda x, y: -y,
        sigma1=sigma1,
        dsigma1=dsigma1,
        f2=lambda x, y: -gamma * (y - kappa * x),
        sigma2=lambda x, y: np.ones(np.shape(y) + (1,)),
        fbar1=lambda x: -kappa * x,
        dfbar1=lambda x: np.full(np.shape(x) + (1,), -kappa),
        L=4.0,
        beta1=2 * gamma,
        beta2=2 * gamma,
    )


def linear_nofast_model() -> SlowFastModel:
    """Scalar slow block dX = -X dt + d(driver); no fast variable."""
    sigma1, dsigma1 = _const_sigma1(np.array([[1.0]]))
    return SlowFastModel(
        name="linear-nofast",
        m=1,
        n_fast=0,
        d=1,
        e=0,
        f1=lambda x, y: -x,
        sigma1=sigma1,
        dsigma1=dsigma1,
        fbar1=lambda x: -x,
        dfbar1=lambda x: np.full(np.shape(x) + (1,), -1.0),
        L=2.0,
        beta1=1.0,
        beta2=1.0,
    )


def free_model() -> SlowFastModel:
    """Scalar slow block dX = d(driver); zero drift, no fast variable."""
    sigma1, dsigma1 = _const_sigma1(np.array([[1.0]]))
    return SlowFastModel(
        name="free",
        m=1,
        n_fast=0,
        d=1,
        e=0,
        f1=lambda x, y: np.zeros(np.shape(x)),
        sigma1=sigma1,
        dsigma1=dsigma1,
        fbar1=lambda x: np.zeros(np.shape(x)),
        dfbar1=lambda x: np.zeros(np.shape(x) + (1,)),
        L=1.0,
        beta1=1.0,
        beta2=1.0,
    )


def bistable_model() -> SlowFastModel:
    """Double-well slow drift x - x^3 shifted by the fast OU variable."""
    gamma = 2.0
    sigma1, dsigma1 = _const_sigma1(np.array([[0.5]]))
    return SlowFastModel(
        name="bistable",
        m=1,
        n_fast=1,
        d=1,
        e=1,
        f1=lambda x, y: x - x**3 + y,
        sigma1=sigma1,
        dsigma1=dsigma1,
        f2=lambda x, y: -gamma * y,
        sigma2=lambda x, y: np.ones(np.shape(y) + (1,)),
        fbar1=lambda x: x - x**3,
        dfbar1=lambda x: (1.0 - 3.0 * x**2)[..., None],
        L=80.0,
        beta1=2 * gamma,
        beta2=2 * gamma,
    )


_BUILTINS = {
    "linear-ou": linear_ou_model,
    "linear-nofast": linear_nofast_model,
    "free": free_model,
    "bistable": bistable_model,
}


def builtin_model(name: str) -> SlowFastModel:
    try:
        return _BUILTINS[name]()
    except KeyError:
        raise ConfigError(
            f"unknown builtin model {name!r}; choose from {sorted(_BUILTINS)}", field="model"
        ) from None
