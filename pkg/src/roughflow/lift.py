"""Level-2 rough paths: lifts of mixed drivers and Cameron-Martin elements,
translation, dilation, Hölder norms and distances.

Storage is per-consecutive-interval (first-level increments and second-level
areas); values over non-consecutive pairs are obtained only through Chen
composition, so the multiplicative relation holds identically on the stored
representation.  Area conventions: left-point Riemann sums for Itô-labelled
blocks, trapezoid (piecewise-linear/Stratonovich) sums for geometric blocks,
computed on a ``refine``-times finer grid and compressed to the working grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .drivers import CameronMartinControl, MixedDriverPath, cm_to_path
from .errors import ParameterError, ResourceError
from .grids import TimeGrid

_AREA_MEMORY_CAP = 1 << 27  # floats; ~1 GiB of fine-grid tensors


@dataclass
class Level2RoughPath:
    """First-level increments and second-level areas per grid interval.

    ``inc`` has shape (n, dim); ``area`` has shape (n, dim, dim) with
    area[k, a, b] = int_{t_k}^{t_{k+1}} Xi^1_{t_k, r}[a] d Xi^1_r[b].
    ``fine_path`` optionally keeps the underlying path on the refined grid
    (n * refine + 1, dim); it is used by :func:`translate` for the Young
    cross-integrals and is not serialized.
    """

    grid: TimeGrid
    dim: int
    inc: np.ndarray
    area: np.ndarray
    fine_path: np.ndarray | None = None
    refine: int = 1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.grid.n_steps
        if self.inc.shape != (n, self.dim):
            raise ParameterError(f"inc shape {self.inc.shape} != {(n, self.dim)}")
        if self.area.shape != (n, self.dim, self.dim):
            raise ParameterError(f"area shape {self.area.shape} != {(n, self.dim, self.dim)}")
        # Cumulatives anchor Chen composition for arbitrary grid pairs.
        self._cum1 = np.zeros((n + 1, self.dim))
        self._cum1[1:] = np.cumsum(self.inc, axis=0)
        cross = np.einsum("ka,kb->kab", self._cum1[:-1], self.inc)
        self._cum2 = np.zeros((n + 1, self.dim, self.dim))
        self._cum2[1:] = np.cumsum(self.area + cross, axis=0)

    def first_level(self, i: int, j: int) -> np.ndarray:
        """Xi^1 over (t_i, t_j) by Chen composition."""
        return self._cum1[j] - self._cum1[i]

    def second_level(self, i: int, j: int) -> np.ndarray:
        """Xi^2 over (t_i, t_j) by Chen composition."""
        return (
            self._cum2[j]
            - self._cum2[i]
            - np.einsum("a,b->ab", self._cum1[i], self._cum1[j] - self._cum1[i])
        )

    @property
    def values(self) -> np.ndarray:
        """Path values Xi^1_{0, t_k} on the grid points."""
        return self._cum1

    def to_json(self) -> str:
        env = {
            "grid": {"horizon_T": self.grid.horizon_T, "n_steps": self.grid.n_steps},
            "dim": self.dim,
            "inc": self.inc.tolist(),
            "area": self.area.tolist(),
        }
        return json.dumps(env)

    @classmethod
    def from_json(cls, text: str) -> "Level2RoughPath":
        env = json.loads(text)
        grid = TimeGrid(env["grid"]["horizon_T"], env["grid"]["n_steps"])
        return cls(grid, env["dim"], np.array(env["inc"]), np.array(env["area"]))


@dataclass(frozen=True)
class HolderReport:
    exponent: float
    first_level_norm: float
    second_level_norm: float
    triple_norm: float
    method: str = "exact"


def _check_refine_budget(n_fine: int, dim: int) -> None:
    if n_fine * dim * dim > _AREA_MEMORY_CAP:
        raise ResourceError(
            f"refined area tensor ({n_fine} x {dim} x {dim}) exceeds the memory budget"
        )


def _pair_areas(X: np.ndarray, Y: np.ndarray, r: int, rule: str) -> np.ndarray:
    """Compressed areas int X_rel dY per coarse interval from fine-grid data.

    X: (n*r + 1, da), Y: (n*r + 1, db).  ``rule`` is "left" (Itô) or
    "trapezoid" (piecewise-linear/geometric).
    """
    n = (X.shape[0] - 1) // r
    da, db = X.shape[1], Y.shape[1]
    if da == 0 or db == 0:
        return np.zeros((n, da, db))
    _check_refine_budget(n * r, max(da, db))
    dX = (X[1:] - X[:-1]).reshape(n, r, da)
    dY = (Y[1:] - Y[:-1]).reshape(n, r, db)
    Xrel = X[:-1].reshape(n, r, da) - X[: n * r : r][:, None, :]
    area = np.einsum("kra,krb->kab", Xrel, dY)
    if rule == "trapezoid":
        area += 0.5 * np.einsum("kra,krb->kab", dX, dY)
    elif rule != "left":
        raise ParameterError(f"unknown area rule {rule!r}")
    return area


def lift_mixed(
    path: MixedDriverPath, refine: int = 1, bm_convention: str = "ito"
) -> Level2RoughPath:
    """Level-2 lift of the mixed driver on the working grid.

    The driver must be sampled on a grid ``refine`` times finer than the
    working grid; areas are computed on the fine grid and Chen-compressed.
    Block structure: fBm-fBm geometric, BM-BM Itô (left-point; "stratonovich"
    switches to trapezoid), cross blocks I[b,w] and I[w,b] with left-point
    (Itô) sums.
    """
    if refine < 1:
        raise ParameterError(f"refine must be >= 1, got {refine}")
    if bm_convention not in ("ito", "stratonovich"):
        raise ParameterError(f"unknown bm_convention {bm_convention!r}")
    if path.grid.n_steps % refine:
        raise ParameterError("driver grid steps must be divisible by refine")
    grid = path.grid.coarsened(refine) if refine > 1 else path.grid
    d, e = path.d, path.e
    dim = d + e
    b, w = path.bH, path.w
    n = grid.n_steps

    area = np.zeros((n, dim, dim))
    area[:, :d, :d] = _pair_areas(b, b, refine, "trapezoid")
    bm_rule = "left" if bm_convention == "ito" else "trapezoid"
    area[:, d:, d:] = _pair_areas(w, w, refine, bm_rule)
    if d and e:
        area[:, :d, d:] = _pair_areas(b, w, refine, "left")  # I[b^H, w], Eq.-style Itô sums
        # I[w, b^H] = w_{st} (x) b_{st} - sum dI w (x) b_rel
        inc_b = b[::refine][1:] - b[::refine][:-1]
        inc_w = w[::refine][1:] - w[::refine][:-1]
        area[:, d:, :d] = np.einsum("ki,kj->kij", inc_w, inc_b) - np.transpose(
            _pair_areas(b, w, refine, "left"), (0, 2, 1)
        )
    fine = np.concatenate([b, w], axis=1)
    inc = fine[::refine][1:] - fine[::refine][:-1]
    return Level2RoughPath(
        grid,
        dim,
        inc,
        area,
        fine_path=fine,
        refine=refine,
        meta={"d": d, "e": e, "bm_convention": bm_convention, "H": path.hurst.H},
    )


def _interp_fine(values: np.ndarray, refine: int) -> np.ndarray:
    """Linear interpolation of grid values onto the refine-times finer grid."""
    if refine == 1:
        return values
    n, k = values.shape[0] - 1, values.shape[1]
    lam = (np.arange(refine) / refine)[None, :, None]
    seg = values[:-1, None, :] * (1 - lam) + values[1:, None, :] * lam
    out = np.empty((n * refine + 1, k))
    out[:-1] = seg.reshape(n * refine, k)
    out[-1] = values[-1]
    return out


def lift_cm(ctrl: CameronMartinControl, refine: int = 1) -> Level2RoughPath:
    """Deterministic level-2 lift of a Cameron-Martin element (u, v).

    All blocks use trapezoid (Young/geometric) sums of the piecewise-linear
    interpolants on the refined grid; exact for piecewise-linear paths.
    """
    u, v = cm_to_path(ctrl)
    grid = ctrl.grid
    fine = _interp_fine(np.concatenate([u, v], axis=1), refine)
    dim = ctrl.d + ctrl.e
    area = _pair_areas(fine, fine, refine, "trapezoid")
    inc = np.concatenate([u[1:] - u[:-1], v[1:] - v[:-1]], axis=1)
    return Level2RoughPath(
        grid,
        dim,
        inc,
        area,
        fine_path=fine,
        refine=refine,
        meta={"d": ctrl.d, "e": ctrl.e, "deterministic": True, "H": ctrl.hurst.H},
    )


def translate(base: Level2RoughPath, ctrl: CameronMartinControl) -> Level2RoughPath:
    """Translated rough path T^h(base) in the direction h = (u, v).

    First level is the componentwise sum; the second level adds all Young
    cross-integrals between the base path and (u, v) plus the CM areas,
    computed by trapezoid sums on the base's refined grid.
    """
    if ctrl.grid != base.grid:
        raise ParameterError("base and control live on different grids")
    if ctrl.d + ctrl.e != base.dim:
        raise ParameterError(
            f"control dims (d={ctrl.d}, e={ctrl.e}) do not match driver dim {base.dim}"
        )
    u, v = cm_to_path(ctrl)
    h_coarse = np.concatenate([u, v], axis=1)
    r = base.refine if base.fine_path is not None else 1
    x_fine = base.fine_path if base.fine_path is not None else base.values
    h_fine = _interp_fine(h_coarse, r)
    area = (
        base.area
        + _pair_areas(x_fine, h_fine, r, "trapezoid")
        + _pair_areas(h_fine, x_fine, r, "trapezoid")
        + _pair_areas(h_fine, h_fine, r, "trapezoid")
    )
    inc = base.inc + (h_coarse[1:] - h_coarse[:-1])
    meta = dict(base.meta)
    meta["translated"] = True
    return Level2RoughPath(
        base.grid, base.dim, inc, area, fine_path=x_fine + h_fine, refine=r, meta=meta
    )


def dilate(base: Level2RoughPath, eps: float) -> Level2RoughPath:
    """Dilation eps * Xi = (sqrt(eps) Xi^1, eps Xi^2)."""
    if eps <= 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    root = np.sqrt(eps)
    fine = None if base.fine_path is None else root * base.fine_path
    return Level2RoughPath(
        base.grid,
        base.dim,
        root * base.inc,
        eps * base.area,
        fine_path=fine,
        refine=base.refine,
        meta=dict(base.meta),
    )


def _pairwise_ratios(rp: Level2RoughPath, exponent: float, pairs: tuple) -> tuple[float, float]:
    """Max of |Xi^1|/(dt)^a and |Xi^2|/(dt)^2a over index pairs (i, j)."""
    i_idx, j_idx = pairs
    t = rp.grid.points
    dt = t[j_idx] - t[i_idx]
    P, A = rp._cum1, rp._cum2
    lvl1 = np.linalg.norm(P[j_idx] - P[i_idx], axis=-1)
    n1 = float(np.max(lvl1 / dt**exponent)) if len(dt) else 0.0
    n2 = 0.0
    chunk = max(1, _AREA_MEMORY_CAP // (rp.dim * rp.dim * 8))
    for lo in range(0, len(i_idx), chunk):
        ii, jj = i_idx[lo : lo + chunk], j_idx[lo : lo + chunk]
        lvl2 = (
            A[jj]
            - A[ii]
            - np.einsum("ka,kb->kab", P[ii], P[jj] - P[ii])
        )
        mag = np.sqrt(np.sum(lvl2**2, axis=(1, 2)))
        n2 = max(n2, float(np.max(mag / (t[jj] - t[ii]) ** (2 * exponent))))
    return n1, n2


def _all_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    i, j = np.triu_indices(n + 1, k=1)
    return i, j


def _dyadic_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    ii, jj = [], []
    length = 1
    while length <= n:
        i = np.arange(0, n - length + 1)
        ii.append(i)
        jj.append(i + length)
        length *= 2
    return np.concatenate(ii), np.concatenate(jj)


def holder_norms(rp: Level2RoughPath, exponent: float, method: str = "auto") -> HolderReport:
    """Discrete Hölder norms of both levels over grid pairs.

    ``method``: "exact" (all O(n^2) pairs), "dyadic" (O(n log n)
    dyadic-length pairs, flagged in the report), or "auto" (exact up to
    n = 2^12, dyadic above).
    """
    if not (0 < exponent < 0.5):
        raise ParameterError(f"exponent must lie in (0, 1/2), got {exponent}")
    n = rp.grid.n_steps
    if method == "auto":
        method = "exact" if n <= (1 << 12) else "dyadic"
    if method == "exact":
        pairs = _all_pairs(n)
    elif method == "dyadic":
        pairs = _dyadic_pairs(n)
    else:
        raise ParameterError(f"unknown method {method!r}")
    n1, n2 = _pairwise_ratios(rp, exponent, pairs)
    return HolderReport(exponent, n1, n2, n1 + n2, method=method)


def rough_distance(
    a: Level2RoughPath, b: Level2RoughPath, exponent: float, method: str = "auto"
) -> float:
    """Inhomogeneous rough-path distance rho_alpha between two rough paths."""
    if a.grid != b.grid or a.dim != b.dim:
        raise ParameterError("rough paths must share grid and dimension")
    if not (0 < exponent < 0.5):
        raise ParameterError(f"exponent must lie in (0, 1/2), got {exponent}")
    n = a.grid.n_steps
    if method == "auto":
        method = "exact" if n <= (1 << 12) else "dyadic"
    pairs = _all_pairs(n) if method == "exact" else _dyadic_pairs(n)
    i_idx, j_idx = pairs
    t = a.grid.points
    dt = t[j_idx] - t[i_idx]
    d1 = np.linalg.norm(
        (a._cum1[j_idx] - a._cum1[i_idx]) - (b._cum1[j_idx] - b._cum1[i_idx]), axis=-1
    )
    n1 = float(np.max(d1 / dt**exponent)) if len(dt) else 0.0
    n2 = 0.0
    chunk = max(1, _AREA_MEMORY_CAP // (a.dim * a.dim * 8))
    for lo in range(0, len(i_idx), chunk):
        ii, jj = i_idx[lo : lo + chunk], j_idx[lo : lo + chunk]
        lvl2a = a._cum2[jj] - a._cum2[ii] - np.einsum(
            "ka,kb->kab", a._cum1[ii], a._cum1[jj] - a._cum1[ii]
        )
        lvl2b = b._cum2[jj] - b._cum2[ii] - np.einsum(
            "ka,kb->kab", b._cum1[ii], b._cum1[jj] - b._cum1[ii]
        )
        mag = np.sqrt(np.sum((lvl2a - lvl2b) ** 2, axis=(1, 2)))
        n2 = max(n2, float(np.max(mag / (t[jj] - t[ii]) ** (2 * exponent))))
    return n1 + n2
