"""Command-line entry point.

``roughflow <kind> --config <file> [--seed N] [--out DIR] [--workers K]``
runs one declarative experiment (sample | lift | solve-rde | slowfast |
average | rate | ldp-probe | weak-conv | sweep), writes CSV/JSON artifacts
plus rendered figures into the output directory, and finishes with a run
manifest carrying the config hash and per-artifact checksums.  Exit codes:
0 ok, 2 config error, 3 numerical divergence, 4 infeasible optimization.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .drivers import (
    CameronMartinControl,
    read_path_csv,
    sample_mixed,
    write_control_csv,
    write_path_csv,
)
from .errors import ConfigError, DivergenceError, InfeasibleError, ParameterError
from .grids import HurstParam, TimeGrid
from .ldp import LdpProbe, RateProblem, mc_probability, skeleton_values, solve_rate
from .ldp import weak_convergence_probe
from .lift import lift_mixed
from .rde import VectorField, solve_rde
from .slowfast import (
    ScaleParams,
    averaging_experiment,
    builtin_model,
    integrate_slowfast,
    write_experiment_csv,
)

KINDS = (
    "sample",
    "lift",
    "solve-rde",
    "slowfast",
    "average",
    "rate",
    "ldp-probe",
    "weak-conv",
    "sweep",
)

FORMAT_VERSION = 1

# ---------------------------------------------------------------------------
# Config validation
# ---------------------------------------------------------------------------

_GRID_SCHEMA = {"horizon": (float, True), "n_steps": (int, True)}
_HURST_SCHEMA = {"H": (float, True), "alpha": (float, False), "beta": (float, False)}
_COMMON = {
    "format_version": (int, True),
    "kind": (str, False),
    "seed": (int, False),
    "grid": (_GRID_SCHEMA, True),
    "hurst": (_HURST_SCHEMA, True),
}

_SCHEMAS = {
    "sample": {**_COMMON, "d": (int, True), "e": (int, True)},
    "lift": {
        **_COMMON,
        "d": (int, True),
        "e": (int, True),
        "refine": (int, False),
        "bm_convention": (str, False),
    },
    "solve-rde": {
        **_COMMON,
        "d": (int, True),
        "e": (int, True),
        "refine": (int, False),
        "vf": (str, True),
        "y0": (list, True),
    },
    "slowfast": {
        **_COMMON,
        "model": (str, True),
        "eps": (float, True),
        "delta": (float, True),
        "Delta": (float, False),
        "micro_steps": (int, False),
        "eps_ratio": (float, False),
    },
    "average": {
        **_COMMON,
        "model": (str, True),
        "eps": (float, True),
        "delta_ratios": (list, True),
        "n_mc": (int, True),
        "x0": (list, False),
    },
    "rate": {
        **_COMMON,
        "model": (str, True),
        "target": (dict, True),
        "x0": (list, False),
        "tol": (float, False),
        "restarts": (int, False),
        "penalty0": (float, False),
        "penalty_factor": (float, False),
        "penalty_stages": (int, False),
    },
    "ldp-probe": {
        **_COMMON,
        "model": (str, True),
        "target_point": (list, True),
        "eps_list": (list, True),
        "delta_ratio": (float, False),
        "n_mc": (int, True),
        "rho": (float, True),
        "rho_eps0": (float, False),
        "estimator": (str, False),
        "x0": (list, False),
    },
    "weak-conv": {
        **_COMMON,
        "model": (str, True),
        "eps_list": (list, True),
        "delta_rule": (str, False),
        "delta_ratio": (float, False),
        "udot_const": (float, True),
        "vdot_const": (float, False),
        "n_mc": (int, True),
        "x0": (list, False),
    },
    "sweep": {
        "format_version": (int, True),
        "kind": (str, False),
        "seed": (int, False),
        "grid": (_GRID_SCHEMA, True),
        "hurst": (_HURST_SCHEMA, True),
        "model": (str, True),
        "x0": (list, False),
        "axes": (
            {"eps": (list, True), "delta_ratio": (list, True), "n_mc": (list, True)},
            True,
        ),
    },
}


def _check_type(value, ty, path: str):
    if ty is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", field=path)
        return float(value)
    if ty is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", field=path)
        return value
    if ty is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", field=path)
        return value
    if ty is list:
        if not isinstance(value, list):
            raise ConfigError(f"expected a list, got {value!r}", field=path)
        return value
    if ty is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"expected a mapping, got {value!r}", field=path)
        return value
    raise ConfigError(f"unhandled schema type {ty}", field=path)


def _validate(raw: dict, schema: dict, path: str = "") -> dict:
    if not isinstance(raw, dict):
        raise ConfigError("expected a mapping", field=path or "<root>")
    out = {}
    for key in raw:
        if key not in schema:
            raise ConfigError("unknown key", field=f"{path}{key}")
    for key, (ty, required) in schema.items():
        here = f"{path}{key}"
        if key not in raw:
            if required:
                raise ConfigError("missing required key", field=here)
            continue
        if isinstance(ty, dict):
            out[key] = _validate(_check_type(raw[key], dict, here), ty, here + ".")
        else:
            out[key] = _check_type(raw[key], ty, here)
    return out


def validate_config(raw: dict, kind: str) -> dict:
    if kind not in _SCHEMAS:
        raise ConfigError(f"unknown experiment kind {kind!r}", field="kind")
    cfg = _validate(raw, _SCHEMAS[kind])
    if cfg["format_version"] != FORMAT_VERSION:
        raise ConfigError(
            f"unsupported format_version {cfg['format_version']} (want {FORMAT_VERSION})",
            field="format_version",
        )
    if "kind" in cfg and cfg["kind"] != kind:
        raise ConfigError(f"config kind {cfg['kind']!r} != requested {kind!r}", field="kind")
    return cfg


def _grid(cfg) -> TimeGrid:
    return TimeGrid(cfg["grid"]["horizon"], cfg["grid"]["n_steps"])


def _hurst(cfg) -> HurstParam:
    h = cfg["hurst"]
    return HurstParam(h["H"], h.get("alpha"), h.get("beta"))


def _scales(cfg, eps, delta, **kw) -> ScaleParams:
    try:
        return ScaleParams(eps, delta, **kw)
    except ParameterError as exc:
        raise ConfigError(str(exc), field="delta") from exc


# ---------------------------------------------------------------------------
# Runners: each returns (artifact paths, echoed defaults)
# ---------------------------------------------------------------------------


def _run_sample(cfg, seed, out: Path, workers, plot):
    grid, hurst = _grid(cfg), _hurst(cfg)
    drv = sample_mixed(grid, hurst, cfg["d"], cfg["e"], seed)
    arts = []
    if cfg["d"]:
        write_path_csv(out / "fbm.csv", grid, drv.bH)
        arts.append(out / "fbm.csv")
    if cfg["e"]:
        write_path_csv(out / "bm.csv", grid, drv.w)
        arts.append(out / "bm.csv")
    if plot:
        from .report import render_path_plot

        for a in list(arts):
            png = a.with_suffix(".png")
            render_path_plot(a, png)
            arts.append(png)
    return arts, {"alpha": hurst.alpha, "beta": hurst.beta}


def _run_lift(cfg, seed, out: Path, workers, plot):
    grid, hurst = _grid(cfg), _hurst(cfg)
    refine = cfg.get("refine", 1)
    conv = cfg.get("bm_convention", "ito")
    drv = sample_mixed(grid.refined(refine), hurst, cfg["d"], cfg["e"], seed)
    rp = lift_mixed(drv, refine=refine, bm_convention=conv)
    (out / "rough_path.json").write_text(rp.to_json())
    arts = [out / "rough_path.json"]
    if plot:
        from .report import render_path_plot

        write_path_csv(out / "driver.csv", rp.grid, rp.values)
        render_path_plot(out / "driver.csv", out / "driver.png")
        arts += [out / "driver.csv", out / "driver.png"]
    return arts, {"refine": refine, "bm_convention": conv, "alpha": hurst.alpha}


def _vector_field(name: str, dim: int) -> VectorField:
    if name == "contracting-linear":
        return VectorField(
            drift=lambda y: -y,
            diffusion=lambda y: np.broadcast_to(np.eye(dim), np.shape(y)[:-1] + (dim, dim)),
            dsigma=lambda y: np.zeros(np.shape(y)[:-1] + (dim, dim, dim)),
            state_dim=dim,
            driver_dim=dim,
        )
    if name == "sine":

        def diffusion(y):
            out = np.zeros(np.shape(y)[:-1] + (dim, dim))
            idx = np.arange(dim)
            out[..., idx, idx] = np.sin(y) + 2.0
            return out

        def dsigma(y):
            out = np.zeros(np.shape(y)[:-1] + (dim, dim, dim))
            idx = np.arange(dim)
            out[..., idx, idx, idx] = np.cos(y)
            return out

        return VectorField(
            drift=lambda y: -0.1 * y,
            diffusion=diffusion,
            dsigma=dsigma,
            state_dim=dim,
            driver_dim=dim,
        )
    raise ConfigError(f"unknown vector field {name!r}", field="vf")


def _run_solve_rde(cfg, seed, out: Path, workers, plot):
    grid, hurst = _grid(cfg), _hurst(cfg)
    refine = cfg.get("refine", 1)
    dim = cfg["d"] + cfg["e"]
    vf = _vector_field(cfg["vf"], dim)
    y0 = np.asarray(cfg["y0"], dtype=float)
    if y0.shape != (dim,):
        raise ConfigError(f"y0 must have {dim} entries", field="y0")
    drv = sample_mixed(grid.refined(refine), hurst, cfg["d"], cfg["e"], seed)
    sol = solve_rde(vf, lift_mixed(drv, refine=refine), y0)
    write_path_csv(out / "solution.csv", grid, sol.values)
    arts = [out / "solution.csv"]
    if plot:
        from .report import render_path_plot

        render_path_plot(out / "solution.csv", out / "solution.png")
        arts.append(out / "solution.png")
    return arts, {"refine": refine}


def _run_slowfast(cfg, seed, out: Path, workers, plot):
    grid, hurst = _grid(cfg), _hurst(cfg)
    model = builtin_model(cfg["model"])
    scales = _scales(
        cfg,
        cfg["eps"],
        cfg["delta"],
        block_delta=cfg.get("Delta"),
        micro_steps=cfg.get("micro_steps"),
        eps_ratio=cfg.get("eps_ratio", 0.1),
    )
    drv = sample_mixed(grid, hurst, model.d, 0, seed)
    slow, fast = integrate_slowfast(model, scales, drv, seed=seed)
    write_path_csv(out / "slow.csv", grid, slow.values)
    arts = [out / "slow.csv"]
    if model.n_fast:
        write_path_csv(out / "fast.csv", grid, fast)
        arts.append(out / "fast.csv")
    if plot:
        from .report import render_path_plot

        for a in list(arts):
            render_path_plot(a, a.with_suffix(".png"))
            arts.append(a.with_suffix(".png"))
    blk, blk_steps, micro = scales.resolve(grid, hurst.beta)
    return arts, {"Delta": blk, "block_steps": blk_steps, "micro_steps": micro}


def _run_average(cfg, seed, out: Path, workers, plot):
    grid, hurst = _grid(cfg), _hurst(cfg)
    model = builtin_model(cfg["model"])
    x0 = np.asarray(cfg.get("x0", [0.0] * model.m), dtype=float)
    scales = [_scales(cfg, cfg["eps"], r * cfg["eps"]) for r in cfg["delta_ratios"]]
    rows = averaging_experiment(
        model, scales, grid, hurst, n_mc=cfg["n_mc"], seed=seed, x0=x0, workers=workers
    )
    write_experiment_csv(out / "averaging.csv", rows)
    arts = [out / "averaging.csv"]
    if plot:
        from .report import render_trend_plot

        render_trend_plot(
            out / "averaging.csv",
            out / "averaging.png",
            x_col="delta",
            y_col="value",
            group_col="metric",
            err_col="stderr",
        )
        arts.append(out / "averaging.png")
    defaults = {
        "Delta": [s.resolve(grid, hurst.beta)[0] for s in scales],
        "micro_steps": [s.resolve(grid, hurst.beta)[2] for s in scales],
    }
    return arts, defaults


def _rate_problem(cfg, grid, hurst, model) -> RateProblem:
    x0 = np.asarray(cfg.get("x0", [0.0] * model.m), dtype=float)
    target = cfg["target"]
    extra = {
        "tol": cfg.get("tol", 1e-3),
        "restarts": cfg.get("restarts", 2),
        "penalty0": cfg.get("penalty0", 1.0),
        "penalty_factor": cfg.get("penalty_factor", 10.0),
        "penalty_stages": cfg.get("penalty_stages", 6),
    }
    if set(target) == {"point"}:
        return RateProblem(
            model, grid, hurst, x0, target_point=np.asarray(target["point"], float), **extra
        )
    if set(target) == {"path_csv", "rho"}:
        _, vals = read_path_csv(target["path_csv"])
        if vals.shape[0] != grid.n_steps + 1:
            raise ConfigError("target path rows must match the grid", field="target.path_csv")
        return RateProblem(
            model, grid, hurst, x0, target_path=vals, rho=float(target["rho"]), **extra
        )
    raise ConfigError(
        "target must be {point: [...]} or {path_csv: ..., rho: ...}", field="target"
    )


def _run_rate(cfg, seed, out: Path, workers, plot):
    grid, hurst = _grid(cfg), _hurst(cfg)
    model = builtin_model(cfg["model"])
    problem = _rate_problem(cfg, grid, hurst, model)
    res = solve_rate(problem, raise_on_infeasible=True)
    payload = {
        "value": res.value,
        "constraint_residual": res.constraint_residual,
        "iterations": res.iterations,
        "converged": res.converged,
        "sq_norm": res.u_star.sq_norm,
    }
    (out / "rate.json").write_text(json.dumps(payload, indent=2))
    write_control_csv(out / "u_star.csv", res.u_star)
    arts = [out / "rate.json", out / "u_star.csv"]
    defaults = {
        "penalty0": problem.penalty0,
        "penalty_factor": problem.penalty_factor,
        "penalty_stages": problem.penalty_stages,
        "tol": problem.tol,
        "restarts": problem.restarts,
    }
    return arts, defaults


def _run_ldp_probe(cfg, seed, out: Path, workers, plot):
    grid, hurst = _grid(cfg), _hurst(cfg)
    model = builtin_model(cfg["model"])
    x0 = np.asarray(cfg.get("x0", [0.0] * model.m), dtype=float)
    problem = RateProblem(
        model, grid, hurst, x0, target_point=np.asarray(cfg["target_point"], float)
    )
    res = solve_rate(problem, raise_on_infeasible=True)
    reference = skeleton_values(model, grid, hurst, x0, res.u_star.udot)
    probe = LdpProbe(
        eps_list=tuple(float(e) for e in cfg["eps_list"]),
        delta_ratio=cfg.get("delta_ratio", 0.1),
        n_mc=cfg["n_mc"],
        rho=cfg["rho"],
        rho_eps0=cfg.get("rho_eps0"),
        estimator=cfg.get("estimator", "importance"),
    )
    outp = mc_probability(
        model,
        probe,
        reference,
        grid,
        hurst,
        u_star=res.u_star,
        seed=seed,
        x0=x0,
        workers=workers,
    )
    payload = {"rate_value": res.value, "results": list(outp.results)}
    (out / "ldp.json").write_text(json.dumps(payload, indent=2))
    arts = [out / "ldp.json"]
    if plot:
        from .report import render_trend_plot

        with open(out / "ldp_trend.csv", "w") as fh:
            fh.write("eps,rate_estimate,rate_stderr\n")
            for r in outp.results:
                if r["rate_estimate"] is not None:
                    fh.write(
                        f"{r['eps']:.17g},{r['rate_estimate']:.17g},{r['rate_stderr']:.17g}\n"
                    )
        render_trend_plot(
            out / "ldp_trend.csv",
            out / "ldp_trend.png",
            x_col="eps",
            y_col="rate_estimate",
            err_col="rate_stderr",
        )
        arts += [out / "ldp_trend.csv", out / "ldp_trend.png"]
    return arts, {"estimator": probe.estimator, "delta_ratio": probe.delta_ratio}


def _run_weak_conv(cfg, seed, out: Path, workers, plot):
    grid, hurst = _grid(cfg), _hurst(cfg)
    model = builtin_model(cfg["model"])
    x0 = np.asarray(cfg.get("x0", [0.0] * model.m), dtype=float)
    rule = cfg.get("delta_rule", "quadratic")
    scales = []
    for eps in cfg["eps_list"]:
        eps = float(eps)
        if rule == "quadratic":
            delta = eps * eps
        elif rule == "ratio":
            delta = cfg.get("delta_ratio", 0.01) * eps
        else:
            raise ConfigError(f"unknown delta_rule {rule!r}", field="delta_rule")
        scales.append(_scales(cfg, eps, delta, eps_ratio=max(0.1, delta / eps + 1e-12)))
    ctrl = CameronMartinControl(
        grid,
        hurst,
        np.full((grid.n_steps, model.d), cfg["udot_const"]),
        np.full((grid.n_steps, model.e), cfg.get("vdot_const", 0.0)),
    )
    rows = weak_convergence_probe(
        model, scales, ctrl, grid, hurst, n_mc=cfg["n_mc"], seed=seed, x0=x0, workers=workers
    )
    cols = ["eps", "delta", "proxy", "stderr", "sup_error", "n_mc"]
    with open(out / "weakconv.csv", "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(
                ",".join(
                    f"{r[c]:.17g}" if isinstance(r[c], float) else str(r[c]) for c in cols
                )
                + "\n"
            )
    arts = [out / "weakconv.csv"]
    if plot:
        from .report import render_trend_plot

        render_trend_plot(
            out / "weakconv.csv",
            out / "weakconv.png",
            x_col="eps",
            y_col="proxy",
            err_col="stderr",
        )
        arts.append(out / "weakconv.png")
    return arts, {"delta_rule": rule}


def _run_sweep(cfg, seed, out: Path, workers, plot):
    grid, hurst = _grid(cfg), _hurst(cfg)
    model_name = cfg["model"]
    x0_list = cfg.get("x0")
    axes = cfg["axes"]
    cells = [
        (float(eps), float(ratio), int(n_mc))
        for eps in sorted(float(e) for e in axes["eps"])
        for ratio in sorted(float(r) for r in axes["delta_ratio"])
        for n_mc in sorted(int(n) for n in axes["n_mc"])
    ]

    def run_cell(cell):
        eps, ratio, n_mc = cell
        try:
            model = builtin_model(model_name)
            x0 = np.asarray(x0_list if x0_list is not None else [0.0] * model.m, float)
            scales = ScaleParams(eps, ratio * eps)
            rows = averaging_experiment(
                model, [scales], grid, hurst, n_mc=n_mc, seed=seed, x0=x0
            )
            metrics = {r["metric"]: r for r in rows}
            return cell, metrics, "ok"
        except Exception as exc:  # per-row failure; the sweep continues
            return cell, {}, f"error:{type(exc).__name__}"

    if workers > 1 and len(cells) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_cell, cells))
    else:
        results = [run_cell(c) for c in cells]

    metric_names = ("sup_error", "slow_holder_sq", "fast_l2")
    cols = ["eps", "delta_ratio", "n_mc", "delta", "Delta"]
    for mname in metric_names:
        cols += [mname, f"{mname}_stderr"]
    cols.append("status")
    with open(out / "sweep.csv", "w") as fh:
        fh.write(",".join(cols) + "\n")
        for (eps, ratio, n_mc), metrics, status in results:
            row = [f"{eps:.17g}", f"{ratio:.17g}", str(n_mc)]
            if metrics:
                any_row = next(iter(metrics.values()))
                row += [f"{any_row['delta']:.17g}", f"{any_row['Delta']:.17g}"]
                for mname in metric_names:
                    row += [
                        f"{metrics[mname]['value']:.17g}",
                        f"{metrics[mname]['stderr']:.17g}",
                    ]
            else:
                row += [""] * (2 + 2 * len(metric_names))
            row.append(status)
            fh.write(",".join(row) + "\n")
    return [out / "sweep.csv"], {"cells": len(cells)}


_RUNNERS = {
    "sample": _run_sample,
    "lift": _run_lift,
    "solve-rde": _run_solve_rde,
    "slowfast": _run_slowfast,
    "average": _run_average,
    "rate": _run_rate,
    "ldp-probe": _run_ldp_probe,
    "weak-conv": _run_weak_conv,
    "sweep": _run_sweep,
}


# ---------------------------------------------------------------------------
# Manifest and entry point
# ---------------------------------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="roughflow",
        description="Slow-fast rough-path simulations, averaging sweeps, "
        "rate-function solves and rare-event probes.",
    )
    parser.add_argument("kind", choices=KINDS)
    parser.add_argument("--config", required=True, help="YAML experiment config")
    parser.add_argument("--seed", type=int, default=None, help="master seed override")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument(
        "--workers",
        type=int,
        default=None,
        help="parallel workers (default: ROUGHFLOW_WORKERS or 1)",
    )
    parser.add_argument(
        "--no-plot", action="store_true", help="skip figure rendering, emit tables only"
    )
    args = parser.parse_args(argv)
    workers = args.workers
    if workers is None:
        workers = int(os.environ.get("ROUGHFLOW_WORKERS", "1"))
    try:
        try:
            raw = yaml.safe_load(Path(args.config).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        cfg = validate_config(raw, args.kind)
        seed = args.seed if args.seed is not None else cfg.get("seed", 0)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.time()
        artifacts, defaults = _RUNNERS[args.kind](cfg, seed, out, workers, not args.no_plot)
        manifest = {
            "kind": args.kind,
            "format_version": FORMAT_VERSION,
            "config_hash": _config_hash(cfg),
            "code_version": __version__,
            "master_seed": seed,
            "workers": workers,
            "wall_clock_s": round(time.time() - t0, 3),
            "defaults": defaults,
            "artifacts": {p.name: _sha256(Path(p)) for p in artifacts},
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        print(f"{args.kind}: wrote {len(artifacts)} artifacts to {out}")
        return 0
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 3
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
