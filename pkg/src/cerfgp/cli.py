"""Command-line interface driven by a single declarative YAML config.

Subcommands: ``estimate`` (curve + balance report), ``changepoints``,
``benchmark`` and ``simulate`` (write a synthetic dataset to CSV). Flags are
limited to --config, --out, --seed and --threads; everything else lives in
the config file so runs are archivable.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical error.
Errors are reported as one JSON object on stderr. All floating-point output
is rendered with 10 significant digits and runs are byte-for-byte
reproducible from (config, seed) independent of --threads.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .backend import BACKEND
from .balance import covariate_balance
from .changepoint import detect_change_points
from .data import Dataset, exposure_grid, load_dataset, save_dataset
from .errors import CerfgpError, ConfigError
from .gp import (
    TRUNCATION_THRESHOLD,
    cerf_estimate,
    fit_gp,
    loo_sigma2,
    weights_for_grid,
)
from .gps import GpsConfig, fit_gps, gps_surface
from .kernels import DIFFERENTIABLE_FAMILIES, KernelFamily
from .nngp import nngp_cerf
from .simulation import BenchmarkConfig, ScenarioConfig, gen_dataset, run_benchmark
from .tuning import DEFAULT_ALPHAS, DEFAULT_BETAS, DEFAULT_RATIOS, TuneGrid, tune


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.10g}"
    return str(x)


def _write_csv(path: Path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_json(path: Path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_fmt)
        fh.write("\n")


def _load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    return cfg


def _get(cfg, section, key, default=None):
    return (cfg.get(section) or {}).get(key, default)


def _obtain_dataset(cfg, seed) -> Dataset:
    data_cfg = cfg.get("data")
    scenario_cfg = cfg.get("scenario")
    if bool(data_cfg) == bool(scenario_cfg):
        raise ConfigError("config must contain exactly one of 'data' or 'scenario'")
    if data_cfg:
        for key in ("path", "outcome", "exposure", "covariates"):
            if key not in data_cfg:
                raise ConfigError(f"data.{key} missing from config")
        return load_dataset(
            data_cfg["path"],
            {
                "outcome": data_cfg["outcome"],
                "exposure": data_cfg["exposure"],
                "covariates": data_cfg["covariates"],
            },
        )
    try:
        spec = ScenarioConfig(
            int(scenario_cfg.get("gps_scenario", 1)),
            scenario_cfg.get("outcome", "cubic"),
            int(scenario_cfg.get("n", 1000)),
            int(scenario_cfg.get("seed", seed)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return gen_dataset(spec)


def _gps_config(cfg) -> GpsConfig:
    g = cfg.get("gps") or {}
    return GpsConfig(
        regressor=g.get("regressor", "boosted-trees"),
        rounds=int(g.get("rounds", 200)),
        depth=int(g.get("depth", 3)),
        learning_rate=float(g.get("learning_rate", 0.1)),
        min_leaf=int(g.get("min_leaf", 5)),
    )


def _families_from(cfg_list, changepoints: bool):
    if cfg_list is None:
        return DIFFERENTIABLE_FAMILIES if changepoints else None
    fams = tuple(KernelFamily.from_tag(t) for t in cfg_list)
    if changepoints and any(not f.differentiable for f in fams):
        raise ConfigError("matern12 cannot be used when change points are requested")
    return fams


def _tune_grid(cfg, data, changepoints=False) -> TuneGrid:
    t = cfg.get("tune") or {}
    fams = _families_from(t.get("families"), changepoints)
    default_engine = cfg.get("engine") if cfg.get("engine") in ("full-gp", "nngp") else "full-gp"
    kwargs = dict(
        alphas=tuple(float(a) for a in t.get("alphas", DEFAULT_ALPHAS)),
        betas=tuple(float(b) for b in t.get("betas", DEFAULT_BETAS)),
        ratios=tuple(float(r) for r in t.get("ratios", DEFAULT_RATIOS)),
        w_grid=exposure_grid(data.w, int(t.get("m", 100))),
        engine=t.get("engine", default_engine),
        ell=int(_get(cfg, "nngp", "ell", 25)),
    )
    if fams is not None:
        kwargs["families"] = fams
    try:
        return TuneGrid(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _analysis_grid(cfg, data):
    g = cfg.get("grid") or {}
    m = int(g.get("m", 100))
    if m < 3:
        raise ConfigError("grid.m must be >= 3")
    return exposure_grid(
        data.w, m,
        float(g.get("lower_percentile", 0.5)),
        float(g.get("upper_percentile", 99.5)),
    )


def _meta(cfg, seed, engine, hp, sigma2, jitter, extra=None):
    payload = {
        "version": __version__,
        "backend": BACKEND,
        "numpy": np.__version__,
        "seed": seed,
        "engine": engine,
        "hyperparams": {
            "family": hp.family.tag,
            "alpha": hp.alpha,
            "beta": hp.beta,
            "gamma_over_sigma": hp.gamma_over_sigma,
        },
        "sigma2": sigma2,
        "jitter": jitter,
        "truncation_threshold": TRUNCATION_THRESHOLD,
        "gps": dict(cfg.get("gps") or {}),
        "notes": {
            "gps_uncertainty": "estimated propensity treated as known",
        },
    }
    if extra:
        payload.update(extra)
    return payload


def cmd_estimate(cfg, out_dir: Path, seed: int, threads: int) -> int:
    data = _obtain_dataset(cfg, seed)
    model = fit_gps(data, _gps_config(cfg), seed)
    surface, _ = gps_surface(model, data)
    engine = cfg.get("engine", "full-gp")
    if engine not in ("full-gp", "nngp"):
        raise ConfigError(f"unknown engine {engine!r}")
    grid = _analysis_grid(cfg, data)
    result = tune(data, surface, _tune_grid(cfg, data), threads=threads)
    fit = fit_gp(data, surface, result.best)
    sigma2 = loo_sigma2(fit)
    ell = int(_get(cfg, "nngp", "ell", 25))
    if engine == "nngp":
        est, agg = nngp_cerf(data, surface, result.best, min(ell, data.n), grid, sigma2)
    else:
        est = cerf_estimate(fit, grid)
        agg = weights_for_grid(fit, grid)
    balance = covariate_balance(agg, data, grid)

    _write_csv(out_dir / "cerf.csv", ["w", "r_hat", "sd_r"],
               zip(grid.tolist(), est.r_hat.tolist(), est.sd_r.tolist()))
    rows = []
    for m, w in enumerate(grid.tolist()):
        for r, name in enumerate(balance.covariate_names):
            rows.append((w, name, float(balance.rho_rw[m, r])))
    _write_csv(out_dir / "balance.csv", ["w", "covariate", "rho"], rows)
    _write_json(out_dir / "meta.json", _meta(
        cfg, seed, engine, result.best, sigma2, fit.jitter,
        {"balance_overall": balance.rho_overall, "best_rho": result.best_rho,
         "nngp_sd_note": "independent units except shared-neighbor noise"
         if engine == "nngp" else None},
    ))
    return 0


def cmd_changepoints(cfg, out_dir: Path, seed: int, threads: int) -> int:
    cp = cfg.get("changepoint") or {}
    level = float(cp.get("level", 0.95))
    if not 0.0 < level < 1.0:
        raise ConfigError(f"changepoint.level must be in (0, 1), got {level}")
    ell_min = int(cp.get("ell_min", 10))
    engine = cfg.get("engine", "full-gp")

    data = _obtain_dataset(cfg, seed)
    model = fit_gps(data, _gps_config(cfg), seed)
    surface, _ = gps_surface(model, data)
    result = tune(data, surface, _tune_grid(cfg, data, changepoints=True),
                  threads=threads)
    fit = fit_gp(data, surface, result.best)
    sigma2 = loo_sigma2(fit)

    g = cfg.get("grid") or {}
    grid = exposure_grid(
        data.w, int(cp.get("grid_m", 200)),
        float(g.get("lower_percentile", 0.5)),
        float(g.get("upper_percentile", 99.5)),
    )
    report = detect_change_points(
        data, surface, result.best, sigma2, grid, level=level,
        ell_min=ell_min, engine="nngp" if engine == "nngp" else "full-gp",
        ell=int(_get(cfg, "nngp", "ell", 25)),
    )
    _write_csv(
        out_dir / "delta.csv",
        ["w", "delta_mean", "delta_sd", "flagged"],
        (
            (float(report.grid[m]), float(report.delta_mean[m]),
             float(report.delta_sd[m]), int(report.flagged[m]))
            for m in range(report.grid.shape[0])
        ),
    )
    _write_json(out_dir / "changepoints.json", {
        "level": level,
        "points": [
            {"w": p.w, "sign": p.sign, "delta_mean": p.delta_mean,
             "interval": list(p.interval)}
            for p in report.points
        ],
        "n_intervals": len(report.intervals),
        "hyperparams": {"family": result.best.family.tag,
                        "alpha": result.best.alpha, "beta": result.best.beta,
                        "gamma_over_sigma": result.best.gamma_over_sigma},
        "sigma2": sigma2,
    })
    return 0


def cmd_benchmark(cfg, out_dir: Path, seed: int, threads: int) -> int:
    b = cfg.get("benchmark")
    if not b:
        raise ConfigError("benchmark section missing from config")
    grid_cfg = b.get("grid") or {}
    t = b.get("tune") or cfg.get("tune") or {}
    try:
        fams = _families_from(t.get("families"), changepoints=False)
        config = BenchmarkConfig(
            scenarios=tuple(int(s) for s in b.get("scenarios", [1])),
            sizes=tuple(int(n) for n in b.get("sizes", [200])),
            estimators=tuple(b.get("estimators", ["gp-full"])),
            replicates=(
                tuple(int(r) for r in b["replicates"])
                if isinstance(b.get("replicates"), list)
                else int(b.get("replicates", 10))
            ),
            base_seed=int(b.get("base_seed", seed)),
            outcome_kind=b.get("outcome", "cubic"),
            grid_start=float(grid_cfg.get("start", 0.0)),
            grid_stop=float(grid_cfg.get("stop", 20.0)),
            grid_m=int(grid_cfg.get("m", 200)),
            gps=_gps_config(cfg),
            alphas=tuple(float(a) for a in t.get("alphas", (0.1, 0.32, 1.0, 3.2, 10.0))),
            betas=tuple(float(x) for x in t.get("betas", (0.1, 0.32, 1.0, 3.2, 10.0))),
            ratios=tuple(float(r) for r in t.get("ratios", (0.32, 1.0, 3.2))),
            families=fams or tuple(KernelFamily),
            tune_m=int(t.get("m", 20)),
            tune_engine=t.get("engine", "auto"),
            ell=int(_get(cfg, "nngp", "ell", 25)),
        )
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"invalid benchmark spec: {exc}") from None
    results = run_benchmark(config, threads=threads)
    _write_csv(
        out_dir / "benchmark.csv",
        ["scenario", "n", "estimator", "abs_bias", "mse", "replicates", "failures"],
        ((r.scenario, r.n, r.estimator, r.abs_bias, r.mse, r.replicates, r.failures)
         for r in results),
    )
    return 0


def cmd_simulate(cfg, out_dir: Path, seed: int, threads: int) -> int:
    if not cfg.get("scenario"):
        raise ConfigError("simulate requires a 'scenario' section")
    data = _obtain_dataset(cfg, seed)
    save_dataset(data, out_dir / "dataset.csv")
    return 0


_COMMANDS = {
    "estimate": cmd_estimate,
    "changepoints": cmd_changepoints,
    "benchmark": cmd_benchmark,
    "simulate": cmd_simulate,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cerfgp",
        description="Causal exposure-response curves via balance-tuned GPs",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="YAML run configuration")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--threads", type=int, default=1, help="worker parallelism")
    args = parser.parse_args(argv)

    try:
        # pin BLAS threads so outputs do not depend on --threads
        try:
            from threadpoolctl import threadpool_limits

            threadpool_limits(limits=1)
        except ImportError:
            pass
        cfg = _load_config(args.config)
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        out_dir = Path(args.out or cfg.get("output_dir", "."))
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        return _COMMANDS[args.command](cfg, out_dir, seed, args.threads)
    except CerfgpError as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return exc.exit_code
    except Exception as exc:  # pragma: no cover - unexpected failure path
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
