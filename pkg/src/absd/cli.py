"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 Newton non-convergence,
4 failed material check, 5 degenerate series, 6 zero dissipation,
7 zero denominator, 1 anything else.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, build_grid_from, build_model, load_config
from .errors import (ConfigError, DegenerateSeries, NonConvergence, ZeroDenominator,
                     ZeroDissipation)

EXIT_CODES = (
    (ConfigError, 2),
    (NonConvergence, 3),
    (DegenerateSeries, 5),
    (ZeroDissipation, 6),
    (ZeroDenominator, 7),
)


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("ABSD_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"ABSD_THREADS={env!r} is not an integer") from None
    return 1


def _out_dir(args, cfg: ExperimentConfig) -> Path | None:
    out = args.out or cfg.output.dir
    return Path(out) if out else None


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _emit(summary: dict, out: Path | None, name: str = "summary.json") -> None:
    text = json.dumps(_jsonable(summary), indent=2, sort_keys=True)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text + "\n")
    print(text)


def _final_values(series) -> dict:
    from .functionals import COLUMNS

    return dict(zip(COLUMNS, series.rows[-1])) if series.rows else {}


def cmd_simulate(args, cfg: ExperimentConfig) -> int:
    from .analysis import fit_decay
    from .runner import run_config

    out = _out_dir(args, cfg)
    res = run_config(cfg, out, _threads(args), args.resume)
    summary = {
        "config_hash": cfg.hash(),
        "wall_time": res.wall_time,
        "dt": res.dt,
        "steps": res.steps,
        "samples": len(res.series),
        "final": _final_values(res.series),
    }
    try:
        summary["decay_fit"] = fit_decay(res.series, cfg.analysis.functional,
                                         cfg.analysis.transient_fraction).to_dict()
    except (DegenerateSeries, KeyError, ValueError):
        summary["decay_fit"] = None
    _emit(summary, out)
    return 0


def cmd_check_material(args, cfg: ExperimentConfig) -> int:
    from .materials import check_nontrapping, check_positivity

    if "material" not in cfg.present:
        raise ConfigError("missing [material] block")
    grid = build_grid_from(cfg)
    model = build_model(cfg, grid)
    pos = check_positivity(model, grid, seed=cfg.analysis.seed)
    trap = check_nontrapping(model, grid)
    summary = {"config_hash": cfg.hash(), "positivity": pos, "nontrapping": trap,
               "passed": bool(pos["passed"] and trap["passed"])}
    _emit(summary, _out_dir(args, cfg), "material.json")
    return 0 if summary["passed"] else 4


def _series_or_run(args, cfg: ExperimentConfig):
    from .functionals import FunctionalSeries
    from .runner import run_config

    if cfg.analysis.series:
        path = Path(cfg.analysis.series)
        if not path.is_file():
            raise ConfigError(f"series file {path} not found")
        try:
            return FunctionalSeries.from_csv(path)
        except (ValueError, StopIteration) as err:
            raise ConfigError(f"cannot read series {path}: {err}") from None
    return run_config(cfg, _out_dir(args, cfg), _threads(args), args.resume).series


def cmd_fit_decay(args, cfg: ExperimentConfig) -> int:
    from .analysis import fit_decay

    series = _series_or_run(args, cfg)
    fit = fit_decay(series, cfg.analysis.functional, cfg.analysis.transient_fraction)
    _emit({"config_hash": cfg.hash(), "decay_fit": fit.to_dict()}, _out_dir(args, cfg),
          "decay.json")
    return 0


def cmd_observability(args, cfg: ExperimentConfig) -> int:
    from .analysis import estimate, observability_ratio
    from .runner import run_config

    grid = build_grid_from(cfg)
    T = cfg.analysis.obs_T or 4.0 * grid.diameter
    if cfg.analysis.series:
        series = _series_or_run(args, cfg)
        est = estimate("observability", [observability_ratio(series, T)])
    else:
        est = observability_ensemble(cfg, T, _threads(args))
    _emit({"config_hash": cfg.hash(), "T": T, "observability": est.to_dict()},
          _out_dir(args, cfg), "observability.json")
    return 0


def observability_ensemble(cfg: ExperimentConfig, T: float, threads: int = 1):
    """Observability ratio over an ensemble of random bumps."""
    from dataclasses import replace

    from .analysis import estimate, observability_ratio
    from .initdata import make_bump_data, random_bump_params
    from .runner import run_config

    grid = build_grid_from(cfg)
    model = build_model(cfg, grid)
    run_cfg = replace(cfg, stepping=replace(cfg.stepping, final_time=T, functional_order=0))
    rng = np.random.default_rng(cfg.analysis.seed)
    vals = []
    for _ in range(cfg.analysis.ensemble_size):
        p = random_bump_params(rng, grid, (cfg.analysis.radius_min, cfg.analysis.radius_max))
        try:
            fields = make_bump_data(grid, p["center"], p["radius"], cfg.initial.amplitude,
                                    p["polarization"], model, cfg.initial.recipe
                                    if cfg.initial.recipe in ("bump", "curl-bump") else "curl-bump")
        except ValueError as err:
            raise ConfigError(f"initial: {err}") from None
        res = run_config(run_cfg, None, threads, fields=fields, write=False)
        vals.append(observability_ratio(res.series, T))
    return estimate("observability", vals)


def cmd_trace(args, cfg: ExperimentConfig) -> int:
    from dataclasses import replace

    from .analysis import t_hat_default, trace_ratio
    from .runner import run_config

    grid = build_grid_from(cfg)
    model = build_model(cfg, grid)
    t_hat = cfg.analysis.t_hat or t_hat_default(grid, model)
    windows = [m * t_hat for m in cfg.analysis.windows]
    if cfg.analysis.series:
        series = _series_or_run(args, cfg)
    else:
        run_cfg = replace(cfg, stepping=replace(cfg.stepping, final_time=max(windows)))
        series = run_config(run_cfg, _out_dir(args, cfg), _threads(args)).series
    ratios = [trace_ratio(series, (0.0, w)) for w in windows]
    summary = {"config_hash": cfg.hash(), "t_hat": t_hat, "windows": windows,
               "ratios": ratios, "trace": {"name": "trace", "value": max(ratios),
                                           "ensemble_size": 1,
                                           "spread": [min(ratios), max(ratios)]}}
    _emit(summary, _out_dir(args, cfg), "trace.json")
    return 0


def cmd_divcurl(args, cfg: ExperimentConfig) -> int:
    from .analysis import divcurl_ratio, surface_curl_ensemble

    grid = build_grid_from(cfg)
    model = build_model(cfg, grid)
    n = cfg.analysis.ensemble_size
    dc = divcurl_ratio(grid, model, n, cfg.analysis.seed)
    sc = surface_curl_ensemble(grid, n, cfg.analysis.seed)
    _emit({"config_hash": cfg.hash(), "divcurl": dc.to_dict(), "surface_curl": sc.to_dict()},
          _out_dir(args, cfg), "divcurl.json")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "check-material": cmd_check_material,
    "fit-decay": cmd_fit_decay,
    "observability": cmd_observability,
    "trace": cmd_trace,
    "divcurl": cmd_divcurl,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="absd", description="Quasilinear Maxwell solver with "
                                "absorbing boundary and verification drivers.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="experiment config file")
        s.add_argument("--out", help="output directory (overrides [output] dir)")
        s.add_argument("--threads", type=int, help="worker threads (default $ABSD_THREADS or 1)")
        s.add_argument("--resume", help="snapshot to resume from")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except Exception as err:  # map to documented exit codes
        for kind, code in EXIT_CODES:
            if isinstance(err, kind):
                print(f"absd: {type(err).__name__}: {err}", file=sys.stderr)
                return code
        from .io import SnapshotError

        if isinstance(err, (SnapshotError, FileNotFoundError)):
            print(f"absd: {err}", file=sys.stderr)
            return 2
        raise


if __name__ == "__main__":
    sys.exit(main())
