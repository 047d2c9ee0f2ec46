"""Mixed fractional-Brownian drivers and Cameron-Martin controls.

Samples exact-covariance fBm via circulant (Davies-Harte) embedding with a
Cholesky fallback, represents Cameron-Martin elements of the fBm block in
Volterra coordinates (u_t = int_0^t K_H(t,s) udot_s ds with the L^2 norm of
udot as the squared RKHS norm), and reconstructs paths from controls.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import cholesky, toeplitz
from scipy.special import beta as beta_fn
from scipy.special import roots_jacobi

from .errors import ParameterError
from .grids import HurstParam, TimeGrid

_VOLTERRA_QUAD_NODES = 48


def rng_for(master_seed: int, worker: int = 0) -> np.random.Generator:
    """Independent per-worker stream derived from (master seed, worker index)."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(worker,)))


def _fgn_autocov(n: int, H: float) -> np.ndarray:
    k = np.arange(n, dtype=float)
    return 0.5 * (np.abs(k + 1) ** (2 * H) - 2 * np.abs(k) ** (2 * H) + np.abs(k - 1) ** (2 * H))


def _fgn_davies_harte(n: int, H: float, rng: np.random.Generator) -> np.ndarray:
    """Unit-lag fractional Gaussian noise, exact covariance, O(n log n).

    Raises ParameterError if the circulant embedding is not nonnegative
    definite (caller falls back to Cholesky).
    """
    rho = _fgn_autocov(n + 1, H)
    c = np.concatenate([rho[:n], [rho[n]], rho[1:n][::-1]])
    lam = np.fft.fft(c).real
    if lam.min() < -1e-10 * lam.max():
        raise ParameterError("circulant embedding not nonnegative definite")
    lam = np.clip(lam, 0.0, None)
    m = 2 * n
    z = np.empty(m, dtype=complex)
    z[0] = rng.standard_normal()
    z[n] = rng.standard_normal()
    v = rng.standard_normal((n - 1, 2))
    z[1:n] = (v[:, 0] + 1j * v[:, 1]) / np.sqrt(2.0)
    z[n + 1 :] = np.conj(z[1:n][::-1])
    fgn = np.sqrt(m) * np.fft.ifft(np.sqrt(lam) * z).real[:n]
    return fgn


def _fgn_cholesky(n: int, H: float, rng: np.random.Generator) -> np.ndarray:
    cov = toeplitz(_fgn_autocov(n, H))
    L = cholesky(cov, lower=True)
    return L @ rng.standard_normal(n)


def sample_fbm(grid: TimeGrid, hurst: HurstParam, dim: int, seed: int) -> np.ndarray:
    """Sample a dim-component fBm on ``grid``; shape (n_steps + 1, dim).

    Components are independent, Cov(b_t, b_s) = (t^2H + s^2H - |t-s|^2H)/2
    per component, and the path starts at 0.  Deterministic given the seed.
    """
    if dim < 1:
        raise ParameterError(f"dim must be >= 1, got {dim}")
    H = hurst.H
    rng = rng_for(seed)
    n = grid.n_steps
    scale = grid.h**H
    path = np.zeros((n + 1, dim))
    for j in range(dim):
        if H == 0.5:
            fgn = rng.standard_normal(n)
        else:
            try:
                fgn = _fgn_davies_harte(n, H, rng)
            except ParameterError:
                fgn = _fgn_cholesky(n, H, rng)
        path[1:, j] = np.cumsum(scale * fgn)
    return path


def sample_bm(grid: TimeGrid, dim: int, seed: int) -> np.ndarray:
    """Standard Brownian path on ``grid``; shape (n_steps + 1, dim)."""
    if dim < 1:
        raise ParameterError(f"dim must be >= 1, got {dim}")
    rng = rng_for(seed)
    inc = np.sqrt(grid.h) * rng.standard_normal((grid.n_steps, dim))
    path = np.zeros((grid.n_steps + 1, dim))
    path[1:] = np.cumsum(inc, axis=0)
    return path


@dataclass(frozen=True)
class MixedDriverPath:
    """Sampled trajectory of the mixed driver (b^H, w) on a common grid."""

    grid: TimeGrid
    bH: np.ndarray  # (n+1, d)
    w: np.ndarray  # (n+1, e)
    hurst: HurstParam

    def __post_init__(self):
        npts = self.grid.n_steps + 1
        for name, arr in (("bH", self.bH), ("w", self.w)):
            if arr.shape[0] != npts:
                raise ParameterError(f"{name} has {arr.shape[0]} rows, grid wants {npts}")
            if arr.shape[0] and arr.size and np.any(arr[0] != 0.0):
                raise ParameterError(f"{name} must start at 0")

    @property
    def d(self) -> int:
        return self.bH.shape[1]

    @property
    def e(self) -> int:
        return self.w.shape[1]


def sample_mixed(grid: TimeGrid, hurst: HurstParam, d: int, e: int, seed: int) -> MixedDriverPath:
    """Sample the (d+e)-dimensional mixed driver; b^H and w are independent."""
    bH = sample_fbm(grid, hurst, d, seed) if d else np.zeros((grid.n_steps + 1, 0))
    w = (
        sample_bm(grid, e, int(np.random.SeedSequence(seed, spawn_key=(1,)).generate_state(1)[0]))
        if e
        else np.zeros((grid.n_steps + 1, 0))
    )
    return MixedDriverPath(grid, bH, w, hurst)


# ---------------------------------------------------------------------------
# Volterra kernel of fBm and Cameron-Martin controls
# ---------------------------------------------------------------------------


def volterra_kernel(H: float, t: np.ndarray, s: np.ndarray) -> np.ndarray:
    """K_H(t, s) for 0 < s < t, vectorized over broadcastable arrays.

    For H = 1/2 this is the indicator of s < t.  For H < 1/2 the singular
    inner integral is evaluated by Gauss-Jacobi quadrature in the
    (r - s)^(H - 1/2) weight.
    """
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if H == 0.5:
        return np.where(s < t, 1.0, 0.0)
    if not (0.0 < H < 0.5):
        raise ParameterError(f"Volterra kernel implemented for H in (0, 1/2], got {H}")
    cH = np.sqrt(2 * H / ((1 - 2 * H) * beta_fn(1 - 2 * H, H + 0.5)))
    x, wq = roots_jacobi(_VOLTERRA_QUAD_NODES, 0.0, H - 0.5)
    tt, ss = np.broadcast_arrays(t, s)
    out = np.zeros(tt.shape)
    mask = ss < tt
    tm, sm = tt[mask], ss[mask]
    span = tm - sm
    # int_s^t r^(H-3/2) (r-s)^(H-1/2) dr
    r = sm[..., None] + 0.5 * span[..., None] * (x + 1.0)
    inner = (0.5 * span) ** (H + 0.5) * np.einsum("...q,q->...", r ** (H - 1.5), wq)
    vals = cH * (
        (tm / sm) ** (H - 0.5) * span ** (H - 0.5) - (H - 0.5) * sm ** (0.5 - H) * inner
    )
    out[mask] = vals
    return out


@lru_cache(maxsize=16)
def _volterra_matrix_cached(horizon: float, n: int, H: float) -> np.ndarray:
    """Matrix V with u(t_j) = sum_k V[j, k] udot_k (midpoint collocation).

    V[j, k] = K_H(t_j, s_k) * h for midpoints s_k < t_j, shape (n+1, n).
    Read-only; cached per (grid, H).
    """
    grid = TimeGrid(horizon, n)
    h = grid.h
    tj = grid.points[:, None]
    sk = (grid.points[:-1] + 0.5 * h)[None, :]
    V = volterra_kernel(H, tj, sk) * h
    V.setflags(write=False)
    return V


def volterra_matrix(grid: TimeGrid, H: float) -> np.ndarray:
    return _volterra_matrix_cached(grid.horizon_T, grid.n_steps, H)


@dataclass(frozen=True)
class CameronMartinControl:
    """Discretized control (u, v) in H^{H,d} + H^{1/2,e}.

    ``udot`` are per-step Volterra kernel coefficients of the fBm block,
    ``vdot`` per-step derivatives of the Brownian block; both piecewise
    constant on the grid steps.  ``sq_norm`` is the squared H-norm.
    """

    grid: TimeGrid
    hurst: HurstParam
    udot: np.ndarray  # (n, d)
    vdot: np.ndarray  # (n, e)
    sq_norm: float = field(init=False, compare=False)

    def __post_init__(self):
        n = self.grid.n_steps
        for name, arr in (("udot", self.udot), ("vdot", self.vdot)):
            if arr.ndim != 2 or arr.shape[0] != n:
                raise ParameterError(f"{name} must have shape (n_steps, dim), got {arr.shape}")
        object.__setattr__(self, "sq_norm", cm_norm(self))

    @property
    def d(self) -> int:
        return self.udot.shape[1]

    @property
    def e(self) -> int:
        return self.vdot.shape[1]

    def scaled(self, lam: float) -> "CameronMartinControl":
        return CameronMartinControl(self.grid, self.hurst, lam * self.udot, lam * self.vdot)

    def __add__(self, other: "CameronMartinControl") -> "CameronMartinControl":
        if other.grid != self.grid:
            raise ParameterError("controls live on different grids")
        return CameronMartinControl(
            self.grid, self.hurst, self.udot + other.udot, self.vdot + other.vdot
        )


def zero_control(grid: TimeGrid, hurst: HurstParam, d: int, e: int) -> CameronMartinControl:
    return CameronMartinControl(grid, hurst, np.zeros((grid.n_steps, d)), np.zeros((grid.n_steps, e)))


def cm_norm(ctrl: CameronMartinControl) -> float:
    """Squared Cameron-Martin norm sum_k (|udot_k|^2 + |vdot_k|^2) h."""
    h = ctrl.grid.h
    return float((np.sum(ctrl.udot**2) + np.sum(ctrl.vdot**2)) * h)


def cm_to_path(ctrl: CameronMartinControl) -> tuple[np.ndarray, np.ndarray]:
    """Reconstruct (u, v) on the grid points; both start at 0.

    v is the piecewise-linear integral of vdot; u applies the Volterra
    kernel matrix of the fBm block.
    """
    grid = ctrl.grid
    if ctrl.d:
        u = volterra_matrix(grid, ctrl.hurst.H) @ ctrl.udot
    else:
        u = np.zeros((grid.n_steps + 1, 0))
    v = np.zeros((grid.n_steps + 1, ctrl.e))
    if ctrl.e:
        v[1:] = np.cumsum(ctrl.vdot * grid.h, axis=0)
    return u, v


# ---------------------------------------------------------------------------
# CSV serialization
# ---------------------------------------------------------------------------


def write_path_csv(path, grid: TimeGrid, values: np.ndarray) -> None:
    """Write a sampled path as CSV: header t,comp_0,...; 17 significant digits."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if values.shape[0] != grid.n_steps + 1:
        raise ParameterError("values rows must match grid points")
    k = values.shape[1]
    header = "t," + ",".join(f"comp_{i}" for i in range(k))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for t, row in zip(grid.points, values):
            fh.write(",".join(f"{x:.17g}" for x in (t, *row)) + "\n")


def read_path_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a path CSV back as (times, values)."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1:]


def write_control_csv(path, ctrl: CameronMartinControl) -> None:
    """Control CSV: one row per step (left endpoint t, udot_*, vdot_* columns)."""
    header = (
        "t,"
        + ",".join(f"udot_{i}" for i in range(ctrl.d))
        + ("," if ctrl.d and ctrl.e else "")
        + ",".join(f"vdot_{i}" for i in range(ctrl.e))
    ).rstrip(",")
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for t, ur, vr in zip(ctrl.grid.points[:-1], ctrl.udot, ctrl.vdot):
            fh.write(",".join(f"{x:.17g}" for x in (t, *ur, *vr)) + "\n")


def read_control_csv(path, hurst: HurstParam) -> CameronMartinControl:
    """Rebuild a control from its CSV; the grid is inferred from the t column."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    d = sum(1 for c in header if c.startswith("udot_"))
    e = sum(1 for c in header if c.startswith("vdot_"))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    n = data.shape[0]
    h = data[1, 0] - data[0, 0] if n > 1 else data[0, 0]
    grid = TimeGrid(n * h, n)
    return CameronMartinControl(grid, hurst, data[:, 1 : 1 + d], data[:, 1 + d : 1 + d + e])
